"""Command-line entry point: ``occseg {synth,train,segment,eval,sample}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 segmentation did not
converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluate, imageio, scene_init, solver, synth
from .sbm import (
    SbmArchitecture,
    joint_train,
    load_model,
    pretrain_layer1,
    pretrain_layer2,
    sample_shapes,
    save_model,
)

log = logging.getLogger("occseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3
CONFIG_ECHO = "config.txt"
# front-to-back overlay colours; regions past the third reuse the palette
PALETTE = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
                    [1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dims(text: str) -> tuple[int, int]:
    try:
        w, h = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return w, h


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--set", dest="overrides", type=_key_value, action="append",
                        default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="global seed (training, k-means, scenes)")
    common.add_argument("--jobs", type=int, help="worker processes for parallel stages")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="directory of binary shape masks")
    data.add_argument("--toy", help="comma-separated toy shape kinds (cross,square,disk)")
    data.add_argument("--size", type=_dims, help="normalised shape size WxH")

    p = _Parser(prog="occseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common, data], help="generate synthetic scenes")
    s.add_argument("--n-objects", type=int, default=2, choices=(2, 3))
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--sigma", type=float, default=0.05)
    s.add_argument("--canvas", type=_dims, help="canvas WxH (default 1.75 x shape size)")

    t = sub.add_parser("train", parents=[common, data], help="train a shape model")
    t.add_argument("--profile", choices=("full", "toy"), default="full",
                   help="epoch preset: full 3000/1000/1000, toy 100/50/50")
    t.add_argument("--resume", type=Path, help="continue joint training from a model file")

    g = sub.add_parser("segment", parents=[common], help="segment one depth image")
    g.add_argument("--image", type=Path, required=True)
    g.add_argument("--model", type=Path, help="shape model (not needed for nosp)")
    g.add_argument("--method", choices=solver.METHODS, default="multi")
    g.add_argument("--n-objects", type=int, help="object count (default: metadata or init.k)")
    g.add_argument("--metadata", type=Path, help="scene metadata JSON written by synth")
    g.add_argument("--seeds", type=Path, nargs="+", help="seed masks, front to back")
    g.add_argument("--intensities", type=float, nargs="+",
                   help="region intensities front to back then background (with --seeds)")

    e = sub.add_parser("eval", parents=[common, data], help="run the synthetic benchmark")
    e.add_argument("--model", type=Path)
    e.add_argument("--methods", default="all", help="'all' or a comma list of multi,single,nosp")
    e.add_argument("--n-objects", type=int, default=2, choices=(2, 3))
    e.add_argument("--count", type=int, default=50)
    e.add_argument("--sigma", type=float, default=0.05)
    e.add_argument("--canvas", type=_dims)
    e.add_argument("--no-timing", action="store_true",
                   help="record zero runtimes so reports are byte-reproducible")
    e.add_argument("--plain-ap", action="store_true", help="plain instead of class-balanced AP")

    m = sub.add_parser("sample", parents=[common], help="draw shapes from a model")
    m.add_argument("--model", type=Path, required=True)
    m.add_argument("--count", type=int, default=16)
    m.add_argument("--gibbs-steps", type=int, default=200)
    return p


# -- helpers ---------------------------------------------------------------

def _run_config(args, base: cfgmod.RunConfig | None = None) -> cfgmod.RunConfig:
    over = dict(args.overrides)
    if args.seed is not None:
        over["seed"] = str(args.seed)
    if args.jobs is not None:
        over["jobs"] = str(args.jobs)
    if getattr(args, "dataset", None):
        over["data.dataset"] = args.dataset
    if getattr(args, "toy", None):
        over["data.toy"] = args.toy
        over.setdefault("data.dataset", "none")
    if getattr(args, "size", None):
        over["data.width"], over["data.height"] = (str(x) for x in args.size)
    try:
        cfg = cfgmod.load(args.config, over, base=base)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg.with_global_seed()


def _prepare_out(out: Path, cfg: cfgmod.RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(cfg.dumps())


def load_shapes(dc: cfgmod.DataConfig) -> synth.ShapeDataset:
    if dc.dataset:
        ds = synth.load_dataset(dc.dataset, dc.width, dc.height, dc.seed, dc.train_fraction)
    else:
        ds = synth.toy_shapes(list(dc.toy), (dc.width, dc.height), dc.toy_count, dc.seed,
                              dc.train_fraction)
    return synth.flip_augment(ds) if dc.flip else ds


def _canvas(args, ds) -> tuple[int, int]:
    if args.canvas:
        return args.canvas
    w, h = ds.dims
    return int(round(1.75 * w)), int(round(1.75 * h))


def overlay(u, masks) -> np.ndarray:
    """Grey image with each region's visible part tinted, front to back."""
    vis = synth.visible_masks(masks)[:-1].astype(bool)
    rgb = np.repeat(np.asarray(u, dtype=np.float64)[..., None], 3, axis=2)
    for k, m in enumerate(vis):
        rgb[m] = 0.5 * rgb[m] + 0.5 * PALETTE[k % len(PALETTE)]
    return rgb


# -- commands --------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    ds = load_shapes(cfg.data)
    canvas = _canvas(args, ds)
    _prepare_out(args.out, cfg)
    seeds = evaluate.scene_seeds(cfg.seed, args.count)
    for idx, seed in enumerate(seeds):
        sc = synth.synthesize(ds, args.n_objects, canvas[0], canvas[1], args.sigma, seed)
        d = args.out / f"scene_{idx:04d}"
        d.mkdir(exist_ok=True)
        imageio.write_gray16(d / "image.png", sc.image)
        names = []
        for k, m in enumerate(sc.truth_masks, 1):
            names.append(f"mask_{k}.png")
            imageio.write_mask(d / names[-1], m)
        meta = {
            "image": "image.png", "masks": names, "n_objects": sc.n, "seed": seed,
            "sigma": sc.sigma, "intensities": sc.intensities.tolist(),
            "shape_ids": sc.shape_ids, "shape_names": [ds.names[i] for i in sc.shape_ids],
            "positions": [list(p) for p in sc.positions], "canvas": list(canvas),
        }
        (d / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {args.count} scene(s) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    base = cfgmod.RunConfig()
    if args.profile == "toy":
        base = replace(base, train=replace(base.train, epochs_layer1=100, epochs_layer2=50,
                                           epochs_joint=50))
    cfg = _run_config(args, base)
    mc = cfg.model
    try:
        arch = SbmArchitecture.tiled(cfg.data.width, cfg.data.height, mc.patch_rows,
                                     mc.patch_cols, mc.overlap, mc.hidden1_per_patch, mc.hidden2)
    except ValueError as exc:
        raise UsageError(f"model layout: {exc}") from exc
    resume = None
    if args.resume:
        r_arch, resume = load_model(args.resume)
        if r_arch != arch:
            raise ValueError(f"{args.resume}: model layout {r_arch} does not match {arch}")
    ds = load_shapes(cfg.data)
    if ds.dims != (arch.visible_w, arch.visible_h):
        raise ValueError(f"dataset shapes are {ds.dims}, model expects "
                         f"{(arch.visible_w, arch.visible_h)}")
    data = ds.train_shapes()
    if len(data) == 0:
        raise ValueError("the training split is empty")
    _prepare_out(args.out, cfg)
    history = []
    if resume is None:
        params = pretrain_layer1(data, arch, cfg.train, history=history)
        params = pretrain_layer2(data, params, arch, cfg.train, history=history)
    else:
        params = resume
    params = joint_train(data, params, arch, cfg.train, history=history)
    save_model(args.out / "model.sbm", arch, params)
    with open(args.out / "training_loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "loss"])
        for stage, epoch, loss in history:
            w.writerow([stage, epoch, f"{loss:.10g}"])
    print(f"trained on {len(data)} shapes; model written to {args.out / 'model.sbm'}")
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _run_config(args)
    u = imageio.read_gray(args.image)
    n = args.n_objects
    meta_path = args.metadata or (args.image.parent / "metadata.json")
    if n is None and meta_path.is_file():
        n = int(json.loads(meta_path.read_text())["n_objects"])
    params = arch = None
    if args.method != "nosp":
        if args.model is None:
            raise UsageError(f"--method {args.method} needs --model")
        arch, params = load_model(args.model)
    if args.seeds:
        seeds = np.array([imageio.read_mask(p) for p in args.seeds])
        if n is not None and len(seeds) != n:
            raise ValueError(f"{len(seeds)} seed masks for {n} objects")
        if args.intensities:
            intensities = np.asarray(args.intensities, dtype=np.float64)
            if len(intensities) != len(seeds) + 1:
                raise UsageError("--intensities needs one value per seed plus the background")
        else:
            intensities = _intensities_from_seeds(u, seeds)
    else:
        intensities, seeds, _ = scene_init.analyse_image(u, n, cfg.init)
    init = solver.initialize(u, seeds, intensities, cfg.solver)
    res = solver.run_method(args.method, u, init, cfg.solver, params, arch)

    _prepare_out(args.out, cfg)
    for k in range(res.scene.n):
        imageio.write_gray16(args.out / f"q_{k + 1}.png", res.scene.q[k])
        imageio.write_mask(args.out / f"mask_{k + 1}.png", res.masks[k])
    imageio.write_rgb(args.out / "overlay.png", overlay(u, res.masks))
    with open(args.out / "energy_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "energy"])
        for i, e in enumerate(res.energy_trace):
            w.writerow([i, repr(float(e))])
    summary = {
        "method": res.method, "converged": res.converged,
        "outer_iterations": res.outer_iterations,
        "intensities": res.scene.intensities.tolist(),
        "windows": [None if wdw is None else [wdw.offset_x, wdw.offset_y, wdw.scale]
                    for wdw in res.windows],
        "rejected_updates": res.rejected_updates,
    }
    (args.out / "result.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not res.converged:
        print(f"not converged after {res.outer_iterations} iterations; best iterate written",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    print(f"converged after {res.outer_iterations} iterations; results in {args.out}")
    return EXIT_OK


def _intensities_from_seeds(u, seeds) -> np.ndarray:
    """Mean image value under each seed, and the mean outside all of them."""
    vals = [float(u[s > 0].mean()) for s in seeds if (s > 0).any()]
    if len(vals) != len(seeds):
        raise ValueError("empty seed mask")
    outside = ~np.any(seeds > 0, axis=0)
    return np.array(vals + [float(u[outside].mean())])


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    methods = list(solver.METHODS) if args.methods == "all" else \
        [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in solver.METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {bad}")
    model = None
    if any(m != "nosp" for m in methods):
        if args.model is None:
            raise UsageError("shape-prior methods need --model")
        model = load_model(args.model)
    ds = load_shapes(cfg.data)
    if model is not None and ds.dims != (model[0].visible_w, model[0].visible_h):
        raise ValueError(f"dataset shapes are {ds.dims}, model expects "
                         f"{(model[0].visible_w, model[0].visible_h)}")
    rep = evaluate.run_experiment(
        ds, model, methods, args.n_objects, args.count, cfg.solver, cfg.init,
        seed=cfg.seed, sigma=args.sigma, canvas=_canvas(args, ds), jobs=cfg.jobs,
        timing=not args.no_timing, balanced_ap=not args.plain_ap)
    _prepare_out(args.out, cfg)
    rep.write(args.out)
    sys.stdout.write(rep.summary_csv())
    failed = {m: rep.failures(m) for m in methods if rep.failures(m)}
    if failed:
        print(f"failed instances: {failed}", file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _run_config(args)
    arch, params = load_model(args.model)
    shapes = sample_shapes(params, arch, args.count, args.gibbs_steps, cfg.seed)
    _prepare_out(args.out, cfg)
    for i, s in enumerate(shapes):
        imageio.write_mask(args.out / f"sample_{i:04d}.png", s)
    print(f"wrote {len(shapes)} samples to {args.out}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "segment": cmd_segment,
            "eval": cmd_eval, "sample": cmd_sample}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"occseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"occseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

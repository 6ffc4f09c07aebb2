"""Region scores and the synthetic-scene experiment harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import scene_init, solver, synth
from .scene_init import InitConfig
from .solver import METHODS, SolverConfig

log = logging.getLogger(__name__)

SUMMARY_HEADER = ["method", "region", "ap_mean", "ap_std", "iou_mean", "iou_std",
                  "runtime_mean_s", "runtime_std_s", "n_instances"]
INSTANCE_HEADER = ["instance", "scene_seed", "method", "region", "ap", "iou",
                   "runtime_s", "outer_iterations", "converged", "error"]


def threshold_region(q, t: float = 0.5) -> np.ndarray:
    """Pixels with membership strictly above ``t``."""
    return (np.asarray(q) > t).astype(np.uint8)


def average_pixel_accuracy(pred, gt, balanced: bool = True) -> float:
    """Percent accuracy of the foreground/background labelling.

    By default the mean of foreground and background recall. When ``gt`` has
    no pixels of one class the other class's recall is returned. With
    ``balanced=False`` plain pixel accuracy is used instead.
    """
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError("mask shapes differ")
    if not balanced:
        return 100.0 * float((pred == gt).mean())
    n_fg, n_bg = gt.sum(), (~gt).sum()
    recalls = []
    if n_fg:
        recalls.append((pred & gt).sum() / n_fg)
    if n_bg:
        recalls.append((~pred & ~gt).sum() / n_bg)
    return 100.0 * float(np.mean(recalls))


def iou(pred, gt) -> float:
    """Foreground intersection over union in percent; 100 for two empty masks."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ValueError("mask shapes differ")
    union = (pred | gt).sum()
    if union == 0:
        return 100.0
    return 100.0 * float((pred & gt).sum() / union)


@dataclass
class RegionScore:
    region: int   # depth rank, 1 = front
    ap: float
    iou: float


@dataclass
class InstanceResult:
    instance: int
    scene_seed: int
    method: str
    scores: list = field(default_factory=list)
    runtime_s: float = float("nan")
    outer_iterations: int = 0
    converged: bool = False
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class ExperimentReport:
    methods: list
    n_objects: int
    instances: list          # InstanceResult, ordered by (instance, method)
    config: dict

    def failures(self, method: str) -> int:
        return sum(1 for r in self.instances if r.method == method and not r.ok)

    def summary(self) -> list[dict]:
        """One row per method and region, means over successful instances."""
        rows = []
        for m in self.methods:
            done = [r for r in self.instances if r.method == m and r.ok]
            rt = np.array([r.runtime_s for r in done], dtype=np.float64)
            for k in range(1, self.n_objects + 1):
                ap = np.array([r.scores[k - 1].ap for r in done], dtype=np.float64)
                io_ = np.array([r.scores[k - 1].iou for r in done], dtype=np.float64)
                rows.append({
                    "method": m, "region": k,
                    "ap_mean": _mean(ap), "ap_std": _std(ap),
                    "iou_mean": _mean(io_), "iou_std": _std(io_),
                    "runtime_mean_s": _mean(rt), "runtime_std_s": _std(rt),
                    "n_instances": len(done),
                })
        return rows

    def mean(self, method: str, region: int, metric: str = "iou") -> float:
        for row in self.summary():
            if row["method"] == method and row["region"] == region:
                return row[f"{metric}_mean"]
        raise KeyError((method, region))

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for row in self.summary():
            w.writerow([_fmt(row[h]) for h in SUMMARY_HEADER])
        return buf.getvalue()

    def instances_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(INSTANCE_HEADER)
        for r in self.instances:
            regions = r.scores or [RegionScore(k, float("nan"), float("nan"))
                                   for k in range(1, self.n_objects + 1)]
            for s in regions:
                w.writerow([r.instance, r.scene_seed, r.method, s.region, _fmt(s.ap),
                            _fmt(s.iou), _fmt(r.runtime_s), r.outer_iterations,
                            int(r.converged), r.error])
        return buf.getvalue()

    def metadata(self) -> dict:
        meta = dict(self.config)
        meta["failures"] = {m: self.failures(m) for m in self.methods}
        meta["scene_seeds"] = list(dict.fromkeys(r.scene_seed for r in self.instances))
        return meta

    def write(self, out_dir, stem: str = "report") -> dict:
        """Write summary CSV, per-instance CSV and the JSON sidecar; return the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "summary": out / f"{stem}.csv",
            "instances": out / f"{stem}_instances.csv",
            "metadata": out / f"{stem}.json",
        }
        paths["summary"].write_text(self.summary_csv())
        paths["instances"].write_text(self.instances_csv())
        paths["metadata"].write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        return paths


def _mean(a) -> float:
    return float(a.mean()) if len(a) else float("nan")


def _std(a) -> float:
    return float(a.std()) if len(a) else float("nan")


def _fmt(x):
    if isinstance(x, float):
        return "nan" if np.isnan(x) else f"{x:.6f}"
    return x


def scene_seeds(seed: int, count: int) -> list[int]:
    """Independent per-instance scene seeds derived from one experiment seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)]


@dataclass
class _Job:
    ds: synth.ShapeDataset
    model: tuple | None
    methods: list
    n_objects: int
    canvas: tuple
    sigma: float
    solver_config: SolverConfig
    init_config: InitConfig
    timing: bool
    balanced: bool


def _run_instance(job: _Job, index: int, seed: int) -> list[InstanceResult]:
    scene = synth.synthesize(job.ds, job.n_objects, job.canvas[0], job.canvas[1],
                             sigma=job.sigma, seed=seed)
    arch, params = job.model if job.model is not None else (None, None)
    out = []
    for method in job.methods:
        rec = InstanceResult(index, seed, method)
        t0 = time.perf_counter()
        try:
            intensities, seeds, _ = scene_init.analyse_image(scene.image, job.n_objects,
                                                             job.init_config)
            init = solver.initialize(scene.image, seeds, intensities, job.solver_config)
            res = solver.run_method(method, scene.image, init, job.solver_config, params, arch)
        except (ValueError, RuntimeError, FloatingPointError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            log.warning("instance %d (%s) failed: %s", index, method, rec.error)
        else:
            rec.outer_iterations = res.outer_iterations
            rec.converged = res.converged
            rec.scores = [
                RegionScore(k + 1,
                            average_pixel_accuracy(res.masks[k], scene.truth_masks[k], job.balanced),
                            iou(res.masks[k], scene.truth_masks[k]))
                for k in range(job.n_objects)
            ]
        rec.runtime_s = time.perf_counter() - t0 if job.timing else 0.0
        out.append(rec)
    return out


def run_experiment(ds: synth.ShapeDataset, model, methods, n_objects: int, count: int,
                   solver_config: SolverConfig | None = None,
                   init_config: InitConfig | None = None, seed: int = 0,
                   sigma: float = 0.05, canvas: tuple | None = None, jobs: int = 1,
                   timing: bool = True, balanced_ap: bool = True) -> ExperimentReport:
    """Synthesize ``count`` scenes and score every requested method on each.

    ``model`` is ``(arch, params)`` as returned by ``load_model``, or ``None``
    when only ``nosp`` is run. ``canvas`` is ``(width, height)`` and defaults
    to 1.75 times the shape size. Each method re-runs the full pipeline
    (k-means with ``n_objects + 1`` clusters, seeds, prior-free
    initialisation, segmentation), and its runtime covers all of it. With
    ``timing=False`` runtimes are recorded as zero so reports are
    byte-identical across runs.
    """
    methods = list(METHODS) if methods in (None, "all") else list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    if model is None and any(m != "nosp" for m in methods):
        raise ValueError("shape-prior methods need a model")
    if count < 1:
        raise ValueError("count must be >= 1")
    solver_config = solver_config or SolverConfig()
    init_config = init_config or InitConfig()
    w, h = ds.dims
    canvas = tuple(canvas) if canvas is not None else (int(round(1.75 * w)), int(round(1.75 * h)))
    job = _Job(ds, tuple(model) if model is not None else None, methods, n_objects, canvas,
               float(sigma), solver_config, init_config, timing, balanced_ap)
    seeds = scene_seeds(seed, count)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_instance, [job] * count, range(count), seeds))
    else:
        parts = [_run_instance(job, i, s) for i, s in enumerate(seeds)]
    instances = [r for part in parts for r in part]
    config = {
        "methods": methods, "n_objects": n_objects, "count": count, "seed": seed,
        "sigma": float(sigma), "canvas": list(canvas), "timing": timing,
        "balanced_ap": balanced_ap,
        "solver": _jsonable(asdict(solver_config)),
        "init": _jsonable(asdict(init_config)),
    }
    return ExperimentReport(methods, n_objects, instances, config)


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

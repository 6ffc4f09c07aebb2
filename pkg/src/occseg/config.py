"""Flat key=value run configuration shared by every CLI command.

Keys are ``section.field`` (for example ``solver.mu`` or ``train.epochs_joint``)
plus a few top-level keys (``seed``, ``jobs``). Values are layered in this
order, later layers winning: built-in defaults, a config file, environment
variables named ``OCCSEG_<SECTION>_<FIELD>`` (``OCCSEG_SEED`` for top-level
keys), then command-line flags.

The file format is one ``key = value`` per line; ``#`` starts a comment.
Tuples are comma separated and ``none`` clears an optional value.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .sbm import SbmTrainingConfig
from .scene_init import InitConfig
from .solver import SolverConfig

ENV_PREFIX = "OCCSEG_"


@dataclass
class DataConfig:
    """Where shapes come from: a mask directory or the built-in toy generator."""

    dataset: str | None = None      # directory of binary masks
    toy: tuple = ("cross", "square")
    toy_count: int = 200            # shapes per toy kind
    width: int = 16
    height: int = 16
    seed: int = 0                   # split / jitter seed, kept apart from the run seed
    train_fraction: float = 0.5
    flip: bool = False


@dataclass
class ModelConfig:
    patch_rows: int = 2
    patch_cols: int = 2
    overlap: int = 4
    hidden1_per_patch: int = 25
    hidden2: int = 25


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: SbmTrainingConfig = field(default_factory=SbmTrainingConfig)
    init: InitConfig = field(default_factory=InitConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    SECTIONS = ("data", "model", "train", "init", "solver")

    def keys(self) -> list[str]:
        out = ["seed", "jobs"]
        for sec in self.SECTIONS:
            out += [f"{sec}.{f.name}" for f in fields(getattr(self, sec))]
        return out

    def get(self, key: str):
        if "." not in key:
            return getattr(self, key)
        sec, name = key.split(".", 1)
        return getattr(getattr(self, sec), name)

    def with_values(self, values: dict) -> "RunConfig":
        """Copy with ``values`` (key -> string or typed value) applied."""
        top, per = {}, {s: {} for s in self.SECTIONS}
        for key, raw in values.items():
            if key not in self.keys():
                raise KeyError(f"unknown config key {key!r}")
            val = _convert(key, raw, self.get(key)) if isinstance(raw, str) else raw
            if "." in key:
                sec, name = key.split(".", 1)
                per[sec][name] = val
            else:
                top[key] = val
        kw = dict(top)
        for sec in self.SECTIONS:
            if per[sec]:
                kw[sec] = replace(getattr(self, sec), **per[sec])
        return replace(self, **kw)

    def with_global_seed(self) -> "RunConfig":
        """Push the top-level seed into every seeded section except the data split."""
        return replace(
            self,
            train=replace(self.train, seed=self.seed),
            init=replace(self.init, seed=self.seed),
            solver=replace(self.solver, seed=self.seed),
        )

    def dumps(self) -> str:
        lines = ["# effective configuration; feed back with --config to reproduce"]
        for key in self.keys():
            lines.append(f"{key} = {_format(self.get(key))}")
        return "\n".join(lines) + "\n"


# optional fields and their type when set
_NULLABLE = {
    "data.dataset": str,
    "solver.nu": float,
    "solver.lam": float,
    "solver.window_radius": int,
}


def _convert(key: str, text: str, current):
    text = text.strip()
    if key in _NULLABLE:
        if text.lower() in ("none", "null", ""):
            return None
        return _NULLABLE[key](text)
    if key == "init.k":
        return "auto" if text.lower() == "auto" else int(text)
    if isinstance(current, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(current, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if key == "solver.window_scales":
            return tuple(float(t) for t in items)
        return tuple(items)
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def env_values(keys, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in keys:
        name = ENV_PREFIX + key.replace(".", "_").upper()
        if name in environ:
            out[key] = environ[name]
    return out


def load(path=None, overrides: dict | None = None, environ=None,
         base: RunConfig | None = None) -> RunConfig:
    """Defaults, then file, then environment, then ``overrides``."""
    cfg = base or RunConfig()
    if path is not None:
        with open(path) as fh:
            cfg = cfg.with_values(parse_text(fh.read(), str(path)))
    cfg = cfg.with_values(env_values(cfg.keys(), environ))
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg

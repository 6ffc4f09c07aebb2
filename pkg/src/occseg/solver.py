"""Alternating minimisation for multi-region segmentation with depth.

Each outer iteration visits the regions front to back. For region ``i`` the
SBM window and hidden units are refitted by mean-field inference on the
current membership field, and ``q[i]`` is then replaced by the Split Bregman
minimiser of its linear data + shape term plus weighted total variation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import energy, grid
from .energy import SceneHypothesis
from .sbm import (
    HiddenState,
    SbmArchitecture,
    SbmParams,
    mean_field_infer,
    sbm_energy,
    shape_linear_term,
)
from .splitbregman import convex_objective, solve_convex_subproblem

log = logging.getLogger(__name__)


class SegmentationError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    mu: float = 1.0
    nu: float | None = None          # None: 0.1 * (intensity range)^2
    lam: float | None = None         # None: 2 * nu, or 1 when nu == 0
    eps: float = 1e-3
    max_outer: int = 100
    sb_inner: int = 10
    gs_sweeps: int = 2
    threshold: float = 0.5
    tv_mode: str = grid.ANISOTROPIC
    window_step: int = 1
    window_radius: int | None = None  # None: search every in-image offset
    window_scales: tuple = (1.0,)
    freeze_window: bool = False
    mf_iters: int = 5
    reestimate_intensities: bool = False
    fixed_regions: tuple = ()        # region indexes whose q is never updated
    seed: int = 0

    def __post_init__(self):
        if self.mu < 0 or (self.nu is not None and self.nu < 0):
            raise ValueError("mu and nu must be >= 0")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.tv_mode not in grid.TV_MODES:
            raise ValueError(f"unknown TV mode {self.tv_mode!r}")
        for name in ("max_outer", "sb_inner", "gs_sweeps", "window_step", "mf_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        self.window_scales = tuple(float(s) for s in self.window_scales)
        self.fixed_regions = tuple(int(i) for i in self.fixed_regions)
        if not self.window_scales or min(self.window_scales) <= 0:
            raise ValueError("window_scales must be a non-empty list of positive scales")

    def resolved_nu(self, intensities) -> float:
        if self.nu is not None:
            return float(self.nu)
        c = np.asarray(intensities, dtype=np.float64)
        return 0.1 * float(c.max() - c.min()) ** 2

    def resolved_lam(self, nu: float) -> float:
        if self.lam is not None:
            return float(self.lam)
        return 2.0 * nu if nu > 0 else 1.0


@dataclass
class SegmentationResult:
    scene: SceneHypothesis
    masks: np.ndarray
    windows: list
    hidden: list
    energy_trace: list
    outer_iterations: int
    converged: bool
    method: str = "multi"
    # (outer iteration, region, objective before, objective after) per q update
    subproblem_log: list = field(default_factory=list)
    rejected_updates: int = 0


def threshold_masks(q, t: float) -> np.ndarray:
    return (np.asarray(q) > t).astype(np.uint8)


# -- window search ---------------------------------------------------------

def _offsets(limit: float, step: int, centre, radius):
    hi = int(np.floor(limit + 1e-9))
    if radius is None or centre is None:
        return list(range(0, hi + 1, step))
    c = int(round(centre))
    vals = {min(max(c + k, 0), hi) for k in range(-radius, radius + 1, step)}
    return sorted(vals)


def candidate_windows(img_w: int, img_h: int, arch: SbmArchitecture, config: SolverConfig,
                      around: grid.WindowPlacement | None = None) -> list:
    out = []
    for s in config.window_scales:
        span_x, span_y = s * arch.visible_w, s * arch.visible_h
        if span_x > img_w + 1e-9 or span_y > img_h + 1e-9:
            continue
        cx = around.offset_x if around is not None else None
        cy = around.offset_y if around is not None else None
        for oy in _offsets(img_h - span_y, config.window_step, cy, config.window_radius):
            for ox in _offsets(img_w - span_x, config.window_step, cx, config.window_radius):
                out.append(grid.WindowPlacement(float(ox), float(oy), s))
    return out


def _window_batch(q, windows, arch: SbmArchitecture) -> np.ndarray:
    h, w = q.shape
    out = np.empty((len(windows), arch.n_visible))
    views = None
    for k, win in enumerate(windows):
        if win.scale == 1.0 and float(win.offset_x).is_integer() and float(win.offset_y).is_integer():
            if views is None:
                views = sliding_window_view(q, (arch.visible_h, arch.visible_w))
            out[k] = views[int(win.offset_y), int(win.offset_x)].ravel()
        else:
            out[k] = grid.resample_window(q, win, arch.visible_w, arch.visible_h).ravel()
    return out


def fit_window(q, params: SbmParams, arch: SbmArchitecture, config: SolverConfig,
               around: grid.WindowPlacement | None = None, h2_init=None,
               windows=None):
    """Exhaustive search for the model window with the lowest SBM energy.

    Every candidate is scored by ``sbm_energy(v, h)`` where ``v`` is ``q``
    resampled into the window and ``h`` its mean-field hidden state. Ties go
    to the scale closest to 1, then the smallest ``offset_y``, then
    ``offset_x``. Returns ``(window, hidden_state, energy)``.
    """
    q = grid.as_field(q)
    if windows is None:
        windows = candidate_windows(q.shape[1], q.shape[0], arch, config, around)
    if not windows:
        raise SegmentationError("no window placement fits inside the image")
    v = _window_batch(q, windows, arch)
    h = mean_field_infer(v, params, arch, iters=config.mf_iters, h2_init=h2_init)
    e = sbm_energy(v, h, params, arch)
    keys = [(e[k], abs(w.scale - 1.0), w.offset_y, w.offset_x) for k, w in enumerate(windows)]
    best = min(range(len(windows)), key=keys.__getitem__)
    return windows[best], HiddenState(h.h1[best].copy(), h.h2[best].copy()), float(e[best])


def visible_anchor(scene: SceneHypothesis, i: int, arch: SbmArchitecture) -> grid.WindowPlacement:
    """Unit-scale window centred on the visible mass of region ``i``.

    Used as the centre of the first local window search, so that an occluded
    region's model window starts on what can actually be seen of it.
    """
    vis = energy.visibility_weights(scene)[i]
    mass = vis.sum()
    h, w = scene.shape
    if mass <= 0:
        cy, cx = (h - 1) / 2, (w - 1) / 2
    else:
        yy, xx = np.indices(scene.shape)
        cy, cx = (vis * yy).sum() / mass, (vis * xx).sum() / mass
    return grid.WindowPlacement(cx - (arch.visible_w - 1) / 2, cy - (arch.visible_h - 1) / 2, 1.0)


def shape_coefficient(params: SbmParams, arch: SbmArchitecture, hidden: HiddenState,
                      window: grid.WindowPlacement, img_w: int, img_h: int):
    """Shape energy as ``(coef, const)`` over image pixels through a window."""
    coef, const = shape_linear_term(params, arch, hidden)
    return grid.spread_window(coef, window, img_w, img_h), const


# -- data terms ------------------------------------------------------------

def single_data_coefficient(u, intensities, i: int) -> np.ndarray:
    """Region-vs-rest slope used when every object is segmented on its own.

    Pixels outside region ``i`` are charged the residual of the best-fitting
    other intensity (other objects or background), with no occlusion reasoning.
    """
    res = (np.asarray(u)[None] - np.asarray(intensities)[:, None, None]) ** 2
    rest = np.delete(res, i, axis=0).min(0)
    return res[i] - rest


def single_data_energy(u, scene: SceneHypothesis) -> float:
    res = (np.asarray(u)[None] - scene.intensities[:, None, None]) ** 2
    total = 0.0
    for i in range(scene.n):
        rest = np.delete(res, i, axis=0).min(0)
        total += float((scene.q[i] * res[i] + (1.0 - scene.q[i]) * rest).sum())
    return total


# -- driver ----------------------------------------------------------------

def label_scene(u, intensities) -> SceneHypothesis:
    """Hard scene where every pixel belongs to the nearest intensity."""
    c = np.asarray(intensities, dtype=np.float64)
    labels = np.abs(np.asarray(u)[None] - c[:, None, None]).argmin(0)
    q = (labels[None] == np.arange(len(c) - 1)[:, None, None]).astype(np.float64)
    return SceneHypothesis(q, c)


def initialize(u, seeds, intensities, config: SolverConfig) -> SceneHypothesis:
    """One prior-free Split Bregman pass per region, warm-started from the seeds.

    Every region's data slope is evaluated against the nearest-intensity
    labelling of ``u``, all regions at once. The seeds themselves only serve
    as warm starts and stay inside the result, so no region starts empty.
    Slopes taken against the bare seeds instead let a near region claim the
    visible part of a farther one, a state no single-region update undoes.
    """
    u = grid.check_image(u)
    seeds = np.clip(np.asarray(seeds, dtype=np.float64), 0.0, 1.0)
    scene = SceneHypothesis(seeds.copy(), intensities)
    if scene.shape != u.shape:
        raise ValueError("seed masks do not match the image grid")
    nu = config.resolved_nu(scene.intensities)
    lam = config.resolved_lam(nu)
    r = energy.data_coefficients(label_scene(u, scene.intensities), u)
    for i in range(scene.n):
        q = solve_convex_subproblem(r[i], nu, lam, config.sb_inner, config.gs_sweeps,
                                    config.tv_mode, q0=seeds[i])
        scene.q[i] = np.maximum(q, seeds[i])
    return scene


def _run(u, params, arch, init: SceneHypothesis, config: SolverConfig, coupled: bool,
         method: str) -> SegmentationResult:
    u = grid.check_image(u)
    scene = init.copy()
    if scene.shape != u.shape:
        raise ValueError("initial scene does not match the image grid")
    mu = float(config.mu)
    if mu > 0:
        if params is None or arch is None:
            raise ValueError(f"method {method!r} needs a trained shape model")
        params.check(arch)
    nu = config.resolved_nu(scene.intensities)
    lam = config.resolved_lam(nu)
    img_h, img_w = u.shape
    n = scene.n
    windows = [None] * n
    hidden = [None] * n

    def refit(i):
        if config.freeze_window and windows[i] is not None:
            v = grid.resample_window(scene.q[i], windows[i], arch.visible_w, arch.visible_h)
            hidden[i] = mean_field_infer(v, params, arch, config.mf_iters, hidden[i].h2)
        else:
            h2 = hidden[i].h2 if hidden[i] is not None else None
            around = windows[i] if windows[i] is not None else visible_anchor(scene, i, arch)
            windows[i], hidden[i], _ = fit_window(scene.q[i], params, arch, config,
                                                  around=around, h2_init=h2)

    def data_slope(i):
        if coupled:
            return energy.data_coefficient(scene, u, i)
        return single_data_coefficient(u, scene.intensities, i)

    def monitored():
        e = energy.nms_energy(scene, u) if coupled else single_data_energy(u, scene)
        if nu:
            e += nu * sum(grid.tv_norm(q, config.tv_mode) for q in scene.q)
        if mu > 0:
            e += mu * sum(energy.shape_energy(scene.q[i], windows[i], hidden[i], params, arch)
                          for i in range(n))
        return e

    if any(not 0 <= i < n for i in config.fixed_regions):
        raise ValueError(f"fixed_regions {config.fixed_regions} out of range for {n} regions")
    if mu > 0:
        for i in range(n):
            refit(i)
    trace = [monitored()]
    best = (trace[0], scene.q.copy(), list(windows), list(hidden))
    sub_log, rejected, converged, k = [], 0, False, 0
    for k in range(1, config.max_outer + 1):
        q_before = scene.q.copy()
        for i in range(n):
            if i in config.fixed_regions:
                continue
            r = data_slope(i)
            if mu > 0:
                refit(i)
                coef, _ = shape_coefficient(params, arch, hidden[i], windows[i], img_w, img_h)
                r = r + mu * coef
            old = convex_objective(r, scene.q[i], nu, config.tv_mode)
            q_new = solve_convex_subproblem(r, nu, lam, config.sb_inner, config.gs_sweeps,
                                            config.tv_mode, q0=scene.q[i])
            new = convex_objective(r, q_new, nu, config.tv_mode)
            # keep the current field if the inexact solve did not improve it
            if new <= old:
                scene.q[i] = q_new
            else:
                rejected += 1
                new = old
            sub_log.append((k, i, old, new))
        if config.reestimate_intensities:
            scene.intensities, _ = energy.estimate_intensities(u, scene)
        e = monitored()
        if not np.isfinite(e):
            raise SegmentationError(f"non-finite energy {e} at outer iteration {k}")
        trace.append(e)
        if e < best[0]:
            best = (e, scene.q.copy(), list(windows), list(hidden))
        change = float(np.abs(scene.q - q_before).mean(axis=(1, 2)).sum())
        log.debug("%s iteration %d energy %.6g change %.3g", method, k, e, change)
        if change < config.eps:
            converged = True
            break
    if not converged:
        _, q_best, windows, hidden = best
        scene.q = q_best
    return SegmentationResult(
        scene=scene,
        masks=threshold_masks(scene.q, config.threshold),
        windows=windows,
        hidden=hidden,
        energy_trace=trace,
        outer_iterations=k,
        converged=converged,
        method=method,
        subproblem_log=sub_log,
        rejected_updates=rejected,
    )


def segment(u, params: SbmParams, arch: SbmArchitecture, init: SceneHypothesis,
            config: SolverConfig) -> SegmentationResult:
    """Occlusion-aware multi-region segmentation with the shape prior."""
    return _run(u, params, arch, init, config, coupled=True, method="multi")


def segment_single_baseline(u, params: SbmParams, arch: SbmArchitecture,
                            init: SceneHypothesis, config: SolverConfig) -> SegmentationResult:
    """Shape-prior segmentation of every object on its own, occlusion ignored."""
    return _run(u, params, arch, init, config, coupled=False, method="single")


def segment_no_prior(u, init: SceneHypothesis, config: SolverConfig) -> SegmentationResult:
    return _run(u, None, None, init, replace(config, mu=0.0), coupled=True, method="nosp")


METHODS = ("nosp", "single", "multi")


def run_method(method: str, u, init: SceneHypothesis, config: SolverConfig,
               params: SbmParams | None = None,
               arch: SbmArchitecture | None = None) -> SegmentationResult:
    """Dispatch on a method name: ``multi``, ``single`` or ``nosp``."""
    if method == "multi":
        return segment(u, params, arch, init, config)
    if method == "single":
        return segment_single_baseline(u, params, arch, init, config)
    if method == "nosp":
        return segment_no_prior(u, init, config)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

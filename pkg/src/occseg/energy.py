"""Occlusion-aware data energy over depth-ordered membership fields.

Regions are indexed from 0 (nearest to the viewer) to ``n - 1``; index ``n``
denotes the background. ``q[i]`` is the probability that a pixel lies inside
the full (possibly occluded) region of object ``i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import grid
from .sbm import HiddenState, SbmArchitecture, SbmParams, sbm_energy


@dataclass
class SceneHypothesis:
    q: np.ndarray            # (n, H, W), front-to-back
    intensities: np.ndarray  # (n + 1,), background last

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.q.ndim == 2:
            self.q = self.q[None]
        if self.q.ndim != 3 or len(self.q) < 1:
            raise ValueError("q must be a non-empty stack of 2-D fields")
        if self.intensities.shape != (len(self.q) + 1,):
            raise ValueError(f"need {len(self.q) + 1} intensities, got {self.intensities.shape}")
        if not np.all(np.isfinite(self.intensities)):
            raise ValueError("intensities must be finite")
        grid.check_membership(self.q)

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def shape(self) -> tuple[int, int]:
        return self.q.shape[1:]

    def copy(self) -> "SceneHypothesis":
        return SceneHypothesis(self.q.copy(), self.intensities.copy())


def _check_index(scene: SceneHypothesis, i: int) -> None:
    if not 0 <= i < scene.n:
        raise IndexError(f"region index {i} out of range for {scene.n} regions")


def _image(scene: SceneHypothesis, u) -> np.ndarray:
    u = grid.as_field(u)
    if u.shape != scene.shape:
        raise ValueError(f"image shape {u.shape} does not match scene grid {scene.shape}")
    return u


def residuals(scene: SceneHypothesis, u) -> np.ndarray:
    """Squared intensity residual ``|u - c_j|^2`` for every region and background."""
    u = _image(scene, u)
    return (u[None] - scene.intensities[:, None, None]) ** 2


def front_products(scene: SceneHypothesis) -> np.ndarray:
    """``prod_{j<i} (1 - q_j)`` for i = 0..n; entry n is the background weight."""
    out = np.empty((scene.n + 1,) + scene.shape)
    out[0] = 1.0
    for i in range(scene.n):
        out[i + 1] = out[i] * (1.0 - scene.q[i])
    return out


def visibility_weights(scene: SceneHypothesis) -> np.ndarray:
    """Probabilistic visible-region indicators, shape ``(n + 1, H, W)``."""
    front = front_products(scene)
    weights = front.copy()
    weights[:-1] *= scene.q
    return weights


def phi_all(scene: SceneHypothesis, u) -> np.ndarray:
    """Expected cost of explaining each pixel by what lies behind region i.

    Evaluated back to front in one pass:
    ``phi[n-1] = res[n]`` and ``phi[i] = res[i+1] q[i+1] + (1 - q[i+1]) phi[i+1]``.
    """
    res = residuals(scene, u)
    n = scene.n
    phi = np.empty((n,) + scene.shape)
    phi[n - 1] = res[n]
    for i in range(n - 2, -1, -1):
        q = scene.q[i + 1]
        phi[i] = res[i + 1] * q + (1.0 - q) * phi[i + 1]
    return phi


def phi(scene: SceneHypothesis, u, i: int) -> np.ndarray:
    _check_index(scene, i)
    res = residuals(scene, u)
    out = res[scene.n]
    for j in range(scene.n - 1, i, -1):
        out = res[j] * scene.q[j] + (1.0 - scene.q[j]) * out
    return out


def data_energy_region(scene: SceneHypothesis, u, i: int) -> float:
    _check_index(scene, i)
    u = _image(scene, u)
    front = front_products(scene)[i]
    q = scene.q[i]
    r = (u - scene.intensities[i]) ** 2
    return float((front * (r * q + (1.0 - q) * phi(scene, u, i))).sum())


def data_coefficient(scene: SceneHypothesis, u, i: int) -> np.ndarray:
    """Per-pixel slope of :func:`data_energy_region` with respect to ``q[i]``."""
    _check_index(scene, i)
    u = _image(scene, u)
    front = front_products(scene)[i]
    return front * ((u - scene.intensities[i]) ** 2 - phi(scene, u, i))


def data_coefficients(scene: SceneHypothesis, u) -> np.ndarray:
    """All region coefficients at once, O(n) field passes."""
    res = residuals(scene, u)
    return front_products(scene)[:-1] * (res[:-1] - phi_all(scene, u))


def nms_energy(scene: SceneHypothesis, u) -> float:
    """Relaxed NMS data term: each pixel's residual weighted by visibility."""
    return float((visibility_weights(scene) * residuals(scene, u)).sum())


def shape_energy(q, window: grid.WindowPlacement, hidden: HiddenState,
                 params: SbmParams, arch: SbmArchitecture) -> float:
    """SBM energy of the membership field seen through a model window."""
    v = grid.resample_window(q, window, arch.visible_w, arch.visible_h)
    return sbm_energy(v, hidden, params, arch)


def spsd_energy(scene: SceneHypothesis, u, params: SbmParams, arch: SbmArchitecture,
                hidden, windows, mu: float, nu: float,
                tv_mode: str = grid.ANISOTROPIC) -> float:
    """Sum over regions of coupled data term, weighted shape energy and TV."""
    if len(hidden) != scene.n or len(windows) != scene.n:
        raise ValueError("need one hidden state and one window per region")
    total = 0.0
    for i in range(scene.n):
        total += data_energy_region(scene, u, i)
        if mu:
            total += mu * shape_energy(scene.q[i], windows[i], hidden[i], params, arch)
        if nu:
            total += nu * grid.tv_norm(scene.q[i], tv_mode)
    return total


def estimate_intensities(u, scene: SceneHypothesis):
    """Visibility-weighted mean intensity of every region and the background.

    Returns ``(intensities, empty)`` where ``empty`` lists the indices whose
    weights vanish; those keep their previous value.
    """
    u = _image(scene, u)
    w = visibility_weights(scene)
    mass = w.sum(axis=(1, 2))
    out = scene.intensities.copy()
    empty = [int(k) for k in np.flatnonzero(mass <= 0)]
    ok = mass > 0
    out[ok] = (w[ok] * u).sum(axis=(1, 2)) / mass[ok]
    if empty:
        warnings.warn(f"regions {empty} have zero visibility; intensities kept", RuntimeWarning)
    return out, empty

"""Discrete differential operators and window resampling on 2-D pixel grids.

Fields are plain ``float64`` arrays of shape ``(height, width)`` stored
row-major with the origin at the top-left pixel. Vector fields are arrays of
shape ``(2, height, width)`` holding the x-difference in ``[0]`` and the
y-difference in ``[1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

ANISOTROPIC = "anisotropic"
ISOTROPIC = "isotropic"
TV_MODES = (ANISOTROPIC, ISOTROPIC)


def as_field(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D field, got shape {f.shape}")
    return f


def check_image(u) -> np.ndarray:
    """Validate a grayscale image with values in [0, 1]."""
    u = as_field(u)
    if not np.all(np.isfinite(u)) or u.min() < 0.0 or u.max() > 1.0:
        raise ValueError("image values must be finite and lie in [0, 1]")
    return u


def check_membership(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.all((q >= 0.0) & (q <= 1.0)):
        raise ValueError("membership values must lie in [0, 1]")
    return q


def gradient(f) -> np.ndarray:
    """Forward differences; the difference at the last row/column is 0."""
    f = as_field(f)
    g = np.zeros((2,) + f.shape)
    g[0, :, :-1] = f[:, 1:] - f[:, :-1]
    g[1, :-1, :] = f[1:, :] - f[:-1, :]
    return g


def divergence(v) -> np.ndarray:
    """Backward-difference divergence, the negative adjoint of :func:`gradient`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 3 or v.shape[0] != 2:
        raise ValueError(f"expected a (2, H, W) vector field, got {v.shape}")
    px = v[0].copy()
    py = v[1].copy()
    # components on the last column/row are never produced by gradient()
    px[:, -1] = 0.0
    py[-1, :] = 0.0
    div = px + py
    div[:, 1:] -= px[:, :-1]
    div[1:, :] -= py[:-1, :]
    return div


def laplacian(f) -> np.ndarray:
    """5-point Laplacian with Neumann boundary, ``divergence(gradient(f))``."""
    return divergence(gradient(f))


def tv_norm(f, mode: str = ANISOTROPIC, e: float = 0.0) -> float:
    if e < 0:
        raise ValueError("smoothing constant e must be >= 0")
    g = gradient(f)
    if mode == ANISOTROPIC:
        return float(np.abs(g).sum())
    if mode == ISOTROPIC:
        return float(np.sqrt(g[0] ** 2 + g[1] ** 2 + e * e).sum())
    raise ValueError(f"unknown TV mode {mode!r}")


def shrink(v, t: float, mode: str = ISOTROPIC) -> np.ndarray:
    """Shrinkage operator used by the Split Bregman d-update.

    ``v`` has shape ``(2, ...)``: a single pair or a full vector field.
    Isotropic mode shrinks the length of each 2-vector by ``t``; anisotropic
    mode soft-thresholds each component.
    """
    if t < 0:
        raise ValueError("shrinkage threshold must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != 2:
        raise ValueError("leading axis must hold the two components")
    if mode == ANISOTROPIC:
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if mode != ISOTROPIC:
        raise ValueError(f"unknown TV mode {mode!r}")
    norm = np.sqrt(v[0] ** 2 + v[1] ** 2)
    factor = np.zeros_like(norm)
    nz = norm > 0
    factor[nz] = np.maximum(norm[nz] - t, 0.0) / norm[nz]
    return v * factor


@dataclass(frozen=True)
class WindowPlacement:
    """Axis-aligned window in image pixels.

    The window starts at ``(offset_x, offset_y)`` and spans ``scale`` image
    pixels per output pixel in both directions.
    """

    offset_x: float = 0.0
    offset_y: float = 0.0
    scale: float = 1.0


def _axis_weights(offset: float, scale: float, n_out: int, n_in: int):
    # pixel-centre convention: output pixel a samples input coordinate
    # offset + (a + 0.5) * scale - 0.5
    x = offset + (np.arange(n_out) + 0.5) * scale - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    x0 = np.floor(x).astype(np.int64)
    x1 = np.minimum(x0 + 1, n_in - 1)
    fx = x - x0
    return x0, x1, fx


@lru_cache(maxsize=4096)
def window_matrix(
    window: WindowPlacement, in_w: int, in_h: int, out_w: int, out_h: int
) -> sp.csr_matrix:
    """Sparse bilinear resampling operator, shape ``(out_h*out_w, in_h*in_w)``.

    Its transpose spreads a field defined on the window back onto the image.
    """
    if not window.scale > 0 or out_w < 1 or out_h < 1:
        raise ValueError(f"degenerate window {window} -> {out_w}x{out_h}")
    x0, x1, fx = _axis_weights(window.offset_x, window.scale, out_w, in_w)
    y0, y1, fy = _axis_weights(window.offset_y, window.scale, out_h, in_h)
    rows, cols, vals = [], [], []
    out_idx = np.arange(out_h * out_w).reshape(out_h, out_w)
    for ys, wy in ((y0, 1.0 - fy), (y1, fy)):
        for xs, wx in ((x0, 1.0 - fx), (x1, fx)):
            w = wy[:, None] * wx[None, :]
            keep = w != 0.0
            rows.append(out_idx[keep])
            cols.append((ys[:, None] * in_w + xs[None, :])[keep])
            vals.append(w[keep])
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(out_h * out_w, in_h * in_w),
    )
    m = m.tocsr()
    m.sum_duplicates()
    return m


def resample_window(f, window: WindowPlacement, out_w: int, out_h: int) -> np.ndarray:
    """Bilinearly resample the windowed part of ``f`` to ``out_h x out_w``."""
    f = as_field(f)
    h, w = f.shape
    m = window_matrix(window, w, h, int(out_w), int(out_h))
    return (m @ f.ravel()).reshape(out_h, out_w)


def spread_window(g, window: WindowPlacement, in_w: int, in_h: int) -> np.ndarray:
    """Adjoint of :func:`resample_window`: map a window field back to the image.

    Image pixels not touched by any window sample receive zero.
    """
    g = as_field(g)
    out_h, out_w = g.shape
    m = window_matrix(window, int(in_w), int(in_h), out_w, out_h)
    return (m.T @ g.ravel()).reshape(in_h, in_w)

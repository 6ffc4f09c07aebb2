"""Shape Boltzmann Machine: tiled two-hidden-layer Boltzmann machine over shapes.

The visible layer is a ``visible_h x visible_w`` binary image. It is covered by
a ``patch_rows x patch_cols`` grid of square patches of side ``patch_side``;
neighbouring patches overlap by ``overlap_d`` pixels. Every patch owns
``hidden1_per_patch`` first-layer hidden units, and all patches share the same
patch-to-hidden weight matrix ``W1``. The second hidden layer is fully
connected to the first.

All functions accept a single configuration (1-D vectors) or a batch (2-D
arrays with the batch on axis 0). Visible vectors are flattened row-major.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logsumexp

MAX_EXACT_HIDDEN = 20


@dataclass(frozen=True)
class SbmArchitecture:
    visible_w: int
    visible_h: int
    patch_rows: int
    patch_cols: int
    patch_side: int
    overlap_d: int
    hidden1_per_patch: int
    hidden2: int

    def __post_init__(self):
        for name in ("visible_w", "visible_h", "patch_rows", "patch_cols",
                     "patch_side", "hidden1_per_patch", "hidden2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.overlap_d < self.patch_side:
            raise ValueError("overlap_d must lie in [0, patch_side)")
        stride = self.patch_side - self.overlap_d
        if self.patch_cols * stride + self.overlap_d != self.visible_w:
            raise ValueError(
                f"{self.patch_cols} patches of side {self.patch_side} with overlap "
                f"{self.overlap_d} do not tile width {self.visible_w}")
        if self.patch_rows * stride + self.overlap_d != self.visible_h:
            raise ValueError(
                f"{self.patch_rows} patches of side {self.patch_side} with overlap "
                f"{self.overlap_d} do not tile height {self.visible_h}")

    @classmethod
    def tiled(cls, visible_w, visible_h, patch_rows, patch_cols, overlap_d,
              hidden1_per_patch, hidden2):
        """Build an architecture, deriving the patch side from the grid."""
        side_w, rem_w = divmod(visible_w + (patch_cols - 1) * overlap_d, patch_cols)
        side_h, rem_h = divmod(visible_h + (patch_rows - 1) * overlap_d, patch_rows)
        if rem_w or rem_h or side_w != side_h:
            raise ValueError("no square patch side tiles the visible rectangle")
        return cls(visible_w, visible_h, patch_rows, patch_cols, side_w,
                   overlap_d, hidden1_per_patch, hidden2)

    @property
    def n_visible(self) -> int:
        return self.visible_w * self.visible_h

    @property
    def n_patches(self) -> int:
        return self.patch_rows * self.patch_cols

    @property
    def patch_size(self) -> int:
        return self.patch_side * self.patch_side

    @property
    def n_hidden1(self) -> int:
        return self.n_patches * self.hidden1_per_patch

    @property
    def n_hidden(self) -> int:
        return self.n_hidden1 + self.hidden2

    @cached_property
    def patch_indices(self) -> np.ndarray:
        """Flat visible indices of every patch, shape ``(K, patch_side**2)``."""
        stride = self.patch_side - self.overlap_d
        local = np.arange(self.patch_side)
        out = []
        for pr in range(self.patch_rows):
            for pc in range(self.patch_cols):
                ys = pr * stride + local
                xs = pc * stride + local
                out.append((ys[:, None] * self.visible_w + xs[None, :]).ravel())
        return np.array(out, dtype=np.int64)

    @cached_property
    def scatter(self) -> sp.csr_matrix:
        """0/1 matrix mapping stacked patch pixels onto visible pixels."""
        idx = self.patch_indices.ravel()
        return sp.csr_matrix(
            (np.ones(idx.size), (idx, np.arange(idx.size))),
            shape=(self.n_visible, idx.size),
        )


@dataclass
class SbmParams:
    W1: np.ndarray
    W2: np.ndarray
    b: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, arch: SbmArchitecture) -> "SbmParams":
        return cls(
            W1=np.zeros((arch.patch_size, arch.hidden1_per_patch)),
            W2=np.zeros((arch.n_hidden1, arch.hidden2)),
            b=np.zeros(arch.n_visible),
            c1=np.zeros(arch.n_hidden1),
            c2=np.zeros(arch.hidden2),
        )

    @classmethod
    def random(cls, arch: SbmArchitecture, rng, std: float = 1.0) -> "SbmParams":
        """Gaussian parameters; used for tests and weight initialisation."""
        rng = np.random.default_rng(rng)
        z = cls.zeros(arch)
        return cls(*(rng.normal(0.0, std, a.shape) for a in z.arrays()))

    def arrays(self):
        return (self.W1, self.W2, self.b, self.c1, self.c2)

    def copy(self) -> "SbmParams":
        return SbmParams(*(np.array(a, dtype=np.float64, copy=True) for a in self.arrays()))

    def check(self, arch: SbmArchitecture) -> "SbmParams":
        want = SbmParams.zeros(arch)
        for name, a, w in zip(("W1", "W2", "b", "c1", "c2"), self.arrays(), want.arrays()):
            if np.shape(a) != w.shape:
                raise ValueError(f"{name} has shape {np.shape(a)}, architecture needs {w.shape}")
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class HiddenState:
    h1: np.ndarray
    h2: np.ndarray = field(default=None)


def _visible(v, arch: SbmArchitecture) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-2:] == (arch.visible_h, arch.visible_w):
        v = v.reshape(v.shape[:-2] + (arch.n_visible,))
    if v.shape[-1] != arch.n_visible:
        raise ValueError(f"visible vector of size {v.shape[-1]}, expected {arch.n_visible}")
    return v


def _check_len(a, n: int, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != n:
        raise ValueError(f"{what} has size {a.shape[-1]}, expected {n}")
    return a


def expand_tiled_weights(arch: SbmArchitecture, params: SbmParams) -> sp.csr_matrix:
    """Explicit visible-by-h1 weight matrix equivalent to the tiled weights."""
    params.check(arch)
    m = arch.hidden1_per_patch
    rows, cols, vals = [], [], []
    for k, idx in enumerate(arch.patch_indices):
        r, c = np.meshgrid(idx, np.arange(k * m, (k + 1) * m), indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(params.W1.ravel())
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(arch.n_visible, arch.n_hidden1),
    )


def bottom_up(v, params: SbmParams, arch: SbmArchitecture) -> np.ndarray:
    """``v^T W~1``: input to every h1 unit from the visible layer."""
    v = _visible(v, arch)
    patches = v[..., arch.patch_indices]  # (..., K, side^2)
    return (patches @ params.W1).reshape(v.shape[:-1] + (arch.n_hidden1,))


def top_down(h1, params: SbmParams, arch: SbmArchitecture) -> np.ndarray:
    """``W~1 h1``: input to every visible unit from the first hidden layer."""
    h1 = _check_len(h1, arch.n_hidden1, "h1")
    lead = h1.shape[:-1]
    per_patch = h1.reshape(lead + (arch.n_patches, arch.hidden1_per_patch)) @ params.W1.T
    flat = per_patch.reshape(-1, arch.n_patches * arch.patch_size)
    return (arch.scatter @ flat.T).T.reshape(lead + (arch.n_visible,))


def sbm_energy(v, h: HiddenState, params: SbmParams, arch: SbmArchitecture):
    """Energy of a joint state; ``v`` may be binary or real-valued in [0, 1]."""
    v = _visible(v, arch)
    h1 = _check_len(h.h1, arch.n_hidden1, "h1")
    h2 = _check_len(h.h2, arch.hidden2, "h2")
    e = -(bottom_up(v, params, arch) * h1).sum(-1)
    e -= v @ params.b
    e -= h1 @ params.c1
    e -= ((h1 @ params.W2) * h2).sum(-1)
    e -= h2 @ params.c2
    return e if np.ndim(e) else float(e)


def cond_h1(v, h2, params: SbmParams, arch: SbmArchitecture) -> np.ndarray:
    h2 = _check_len(h2, arch.hidden2, "h2")
    return expit(bottom_up(v, params, arch) + h2 @ params.W2.T + params.c1)


def cond_h2(h1, params: SbmParams) -> np.ndarray:
    h1 = _check_len(h1, params.W2.shape[0], "h1")
    return expit(h1 @ params.W2 + params.c2)


def cond_v(h1, params: SbmParams, arch: SbmArchitecture) -> np.ndarray:
    return expit(top_down(h1, params, arch) + params.b)


def mean_field_infer(v, params: SbmParams, arch: SbmArchitecture, iters: int = 5,
                     h2_init=None) -> HiddenState:
    """Alternating mean-field updates of h1 and h2 with the visibles clamped.

    ``v`` holds visible marginals (binary masks or membership probabilities).
    h2 starts at 0.5 unless ``h2_init`` is given.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    v = _visible(v, arch)
    up = bottom_up(v, params, arch) + params.c1
    if h2_init is None:
        h2 = np.full(v.shape[:-1] + (arch.hidden2,), 0.5)
    else:
        h2 = np.broadcast_to(_check_len(h2_init, arch.hidden2, "h2_init"),
                             v.shape[:-1] + (arch.hidden2,)).copy()
    for _ in range(iters):
        h1 = expit(up + h2 @ params.W2.T)
        h2 = cond_h2(h1, params)
    return HiddenState(h1, h2)


def gibbs_step(v, h2, params: SbmParams, arch: SbmArchitecture, rng):
    """One block-Gibbs sweep: h1 | (v, h2), then (v, h2) | h1."""
    p1 = cond_h1(v, h2, params, arch)
    h1 = (rng.random(p1.shape) < p1).astype(np.float64)
    p2 = cond_h2(h1, params)
    h2 = (rng.random(p2.shape) < p2).astype(np.float64)
    pv = cond_v(h1, params, arch)
    v = (rng.random(pv.shape) < pv).astype(np.float64)
    return v, h1, h2


def sample_shapes(params: SbmParams, arch: SbmArchitecture, n: int, gibbs_steps: int,
                  seed) -> np.ndarray:
    """Draw ``n`` shapes by running independent block-Gibbs chains.

    Returns a ``(n, visible_h, visible_w)`` uint8 array.
    """
    if n < 1 or gibbs_steps < 1:
        raise ValueError("n and gibbs_steps must be >= 1")
    rng = np.random.default_rng(seed)
    v = (rng.random((n, arch.n_visible)) < 0.5).astype(np.float64)
    h2 = (rng.random((n, arch.hidden2)) < 0.5).astype(np.float64)
    for _ in range(gibbs_steps):
        v, _, h2 = gibbs_step(v, h2, params, arch, rng)
    return v.reshape(n, arch.visible_h, arch.visible_w).astype(np.uint8)


def _all_binary(n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def _hidden_log_weights(params: SbmParams, arch: SbmArchitecture):
    """Enumerate (h1, h2) and their visible-marginalised log weights."""
    if arch.n_hidden > MAX_EXACT_HIDDEN:
        raise ValueError(f"exact enumeration needs <= {MAX_EXACT_HIDDEN} hidden units, "
                         f"model has {arch.n_hidden}")
    h1 = _all_binary(arch.n_hidden1)
    h2 = _all_binary(arch.hidden2)
    H1 = np.repeat(h1, len(h2), axis=0)
    H2 = np.tile(h2, (len(h1), 1))
    vis_in = top_down(H1, params, arch) + params.b
    logw = (H1 @ params.c1 + ((H1 @ params.W2) * H2).sum(-1) + H2 @ params.c2
            + np.logaddexp(0.0, vis_in).sum(-1))
    return H1, H2, logw


def exact_log_partition(params: SbmParams, arch: SbmArchitecture) -> float:
    """``log Z`` by exhaustive enumeration of the hidden layers.

    The visible layer is summed in closed form because visibles are
    conditionally independent given h1.
    """
    _, _, logw = _hidden_log_weights(params, arch)
    return float(logsumexp(logw))


def exact_log_prob(v, params: SbmParams, arch: SbmArchitecture, chunk: int = 1024):
    """``log p(v)`` with both the hidden sum and ``Z`` enumerated exactly."""
    v = _visible(v, arch)
    H1, H2, logw = _hidden_log_weights(params, arch)
    log_z = logsumexp(logw)
    # -E(v, h) = v . (W~1 h1 + b) + rest(h)
    field_h = top_down(H1, params, arch) + params.b
    rest = H1 @ params.c1 + ((H1 @ params.W2) * H2).sum(-1) + H2 @ params.c2
    vb = np.atleast_2d(v)
    out = np.concatenate([
        logsumexp(vb[i:i + chunk] @ field_h.T + rest, axis=1)
        for i in range(0, len(vb), chunk)
    ]) - log_z
    return out if v.ndim > 1 else float(out[0])


def exact_visible_marginals(params: SbmParams, arch: SbmArchitecture) -> np.ndarray:
    """Exact ``p(v_i = 1)`` per pixel, by enumerating the hidden layers."""
    H1, _, logw = _hidden_log_weights(params, arch)
    p_h = np.exp(logw - logsumexp(logw))
    return (p_h @ expit(top_down(H1, params, arch) + params.b)).reshape(
        arch.visible_h, arch.visible_w)


def shape_linear_term(params: SbmParams, arch: SbmArchitecture, h: HiddenState):
    """Split the SBM energy into a part linear in the visibles and a constant.

    Returns ``(coef, const)`` with ``coef`` of shape ``(visible_h, visible_w)``
    such that ``sbm_energy(q, h) == (coef * q).sum() + const``.
    """
    h1 = _check_len(h.h1, arch.n_hidden1, "h1")
    h2 = _check_len(h.h2, arch.hidden2, "h2")
    if h1.ndim != 1 or h2.ndim != 1:
        raise ValueError("shape_linear_term takes a single hidden state")
    coef = -(top_down(h1, params, arch) + params.b)
    const = -(h1 @ params.c1) - h1 @ params.W2 @ h2 - h2 @ params.c2
    return coef.reshape(arch.visible_h, arch.visible_w), float(const)

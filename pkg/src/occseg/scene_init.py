"""Object count, intensities, depth order and seed regions from a depth image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import grid

BRIGHTER_IS_NEARER = "brighter_is_nearer"
DARKER_IS_NEARER = "darker_is_nearer"
N_BINS = 256


@dataclass
class InitConfig:
    k: int | str = 2
    kmeans_restarts: int = 5
    kmeans_iters: int = 100
    seed: int = 0
    seed_region_size: int = 16
    depth_rule: str = BRIGHTER_IS_NEARER
    max_auto_k: int = 6
    auto_tolerance: float = 1.05     # SSE allowance over the noise floor for k = auto

    def __post_init__(self):
        if self.k != "auto" and int(self.k) < 1:
            raise ValueError("k must be >= 1 or 'auto'")
        for name in ("kmeans_restarts", "kmeans_iters", "seed_region_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.auto_tolerance > 0:
            raise ValueError("auto_tolerance must be > 0")
        if self.depth_rule not in (BRIGHTER_IS_NEARER, DARKER_IS_NEARER):
            raise ValueError(f"unknown depth rule {self.depth_rule!r}")


@dataclass
class KMeansResult:
    centers: np.ndarray  # sorted ascending
    masses: np.ndarray   # pixel count per centre
    sse: float
    history: list        # SSE after every Lloyd iteration of the winning restart


def _histogram(u):
    """Pixel count and mean value per intensity bin (non-empty bins only)."""
    flat = u.ravel()
    bins = np.minimum((flat * N_BINS).astype(np.int64), N_BINS - 1)
    counts = np.bincount(bins, minlength=N_BINS).astype(np.float64)
    sums = np.bincount(bins, weights=flat, minlength=N_BINS)
    nz = counts > 0
    return sums[nz] / counts[nz], counts[nz]


def _lloyd(x, w, centers, iters):
    history = []
    for _ in range(iters):
        labels = np.abs(x[:, None] - centers[None, :]).argmin(1)
        mass = np.bincount(labels, weights=w, minlength=len(centers))
        if np.any(mass == 0):
            return centers, labels, None, history
        new = np.bincount(labels, weights=w * x, minlength=len(centers)) / mass
        history.append(float((w * (x - new[labels]) ** 2).sum()))
        if np.array_equal(new, centers):
            break
        centers = new
    labels = np.abs(x[:, None] - centers[None, :]).argmin(1)
    sse = float((w * (x - centers[labels]) ** 2).sum())
    return centers, labels, sse, history


def histogram_kmeans(u, k: int, restarts: int = 5, iters: int = 100, seed: int = 0) -> KMeansResult:
    """1-D weighted k-means on the intensity histogram.

    Each bin is represented by the mean of the pixel values that fall in it,
    weighted by its count, so images with at most ``k`` distinct levels are
    clustered exactly. The best of ``restarts`` k-means++ initialisations by
    within-cluster SSE wins.
    """
    u = grid.check_image(u)
    x, w = _histogram(u)
    if k > len(x):
        raise ValueError(f"k={k} exceeds the {len(x)} occupied intensity levels")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        for attempt in range(2):
            centers = _plusplus(x, w, k, rng)
            centers, labels, sse, history = _lloyd(x, w, np.sort(centers), iters)
            if sse is not None:
                break
        else:
            raise RuntimeError("k-means produced an empty cluster twice")
        if best is None or sse < best[2]:
            best = (centers, labels, sse, history)
    centers, labels, sse, history = best
    order = np.argsort(centers)
    masses = np.bincount(labels, weights=w, minlength=k)
    return KMeansResult(centers[order], masses[order], sse, history)


def _plusplus(x, w, k, rng):
    centers = [x[rng.choice(len(x), p=w / w.sum())]]
    for _ in range(k - 1):
        d2 = w * np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        if d2.sum() == 0:
            remaining = np.setdiff1d(x, centers)
            centers.append(remaining[rng.integers(len(remaining))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / d2.sum())])
    return np.array(centers)


def noise_sigma(u) -> float:
    """Robust noise estimate from the median absolute neighbour difference.

    Edges touch few pixel pairs, so the median sees flat regions only, where a
    difference of two noisy pixels has standard deviation ``sqrt(2) * sigma``.
    """
    u = grid.check_image(u)
    d = np.concatenate([np.diff(u, axis=0).ravel(), np.diff(u, axis=1).ravel()])
    if d.size == 0:
        return 0.0
    return float(np.median(np.abs(d)) / (0.6745 * np.sqrt(2.0)))


def choose_k(u, cfg: InitConfig) -> int:
    """Smallest k, up to ``cfg.max_auto_k``, whose SSE reaches the noise floor.

    Once every true level has its own cluster the remaining SSE is pure noise,
    about ``N * sigma^2``; further splits only carve up that noise. The floor
    uses :func:`noise_sigma` scaled by ``cfg.auto_tolerance``.
    """
    u = grid.check_image(u)
    levels = len(_histogram(u)[0])
    floor = cfg.auto_tolerance * u.size * noise_sigma(u) ** 2
    top = min(cfg.max_auto_k, levels)
    for k in range(1, top + 1):
        sse = histogram_kmeans(u, k, cfg.kmeans_restarts, cfg.kmeans_iters, cfg.seed).sse
        if sse <= floor + 1e-12:
            return k
    return top


def depth_order(intensities, rule: str = BRIGHTER_IS_NEARER, masses=None, background=None):
    """Split cluster intensities into front-to-back objects and a background.

    The background is ``intensities[background]`` when an index is given,
    otherwise whichever extremal cluster carries more pixels (or the darkest
    when ``masses`` is omitted). The remaining clusters are sorted by ``rule``.
    Returns ``(objects, background_value)``.
    """
    c = np.asarray(intensities, dtype=np.float64)
    if len(c) < 2:
        raise ValueError("need at least two clusters (one object and the background)")
    if background is None:
        lo, hi = int(np.argmin(c)), int(np.argmax(c))
        if masses is None:
            background = lo
        else:
            m = np.asarray(masses, dtype=np.float64)
            background = hi if m[hi] > m[lo] else lo
    rest = np.delete(c, background)
    if rule == BRIGHTER_IS_NEARER:
        rest = np.sort(rest)[::-1]
    elif rule == DARKER_IS_NEARER:
        rest = np.sort(rest)
    else:
        raise ValueError(f"unknown depth rule {rule!r}")
    return rest.copy(), float(c[background])


def nearest_labels(u, intensities) -> np.ndarray:
    c = np.asarray(intensities, dtype=np.float64)
    return np.abs(np.asarray(u)[None] - c[:, None, None]).argmin(0)


def seed_regions(u, intensities, cfg: InitConfig) -> np.ndarray:
    """Small seed masks inside each object's largest nearest-intensity component.

    ``intensities`` lists the objects front-to-back followed by the background.
    Returns an ``(n, H, W)`` uint8 stack; seeds are pairwise disjoint.
    """
    u = grid.check_image(u)
    c = np.asarray(intensities, dtype=np.float64)
    labels = nearest_labels(u, c)
    seeds, missing = [], []
    for i in range(len(c) - 1):
        comp, count = ndimage.label(labels == i)
        if count == 0:
            missing.append(i)
            continue
        sizes = ndimage.sum_labels(np.ones_like(comp), comp, index=np.arange(1, count + 1))
        region = comp == (int(np.argmax(sizes)) + 1)
        seeds.append(_shrink_region(region, cfg.seed_region_size))
    if missing:
        raise ValueError(f"no pixel is closest to the intensity of region(s) {missing}")
    return np.array(seeds, dtype=np.uint8)


def _shrink_region(region: np.ndarray, size: int) -> np.ndarray:
    # erode while something survives, then keep the pixels nearest the centroid
    while region.sum() > size:
        eroded = ndimage.binary_erosion(region)
        if not eroded.any():
            break
        region = eroded
    if region.sum() > size:
        ys, xs = np.nonzero(region)
        cy, cx = ys.mean(), xs.mean()
        dist = (ys - cy) ** 2 + (xs - cx) ** 2
        keep = np.lexsort((xs, ys, dist))[:size]
        region = np.zeros_like(region)
        region[ys[keep], xs[keep]] = True
    return region


def analyse_image(u, n_objects: int | None, cfg: InitConfig):
    """k-means, depth order and seeds in one go.

    ``n_objects`` of ``None`` falls back to ``cfg.k`` (which may be "auto"),
    read as the number of clusters including the background. Returns
    ``(intensities, seeds, kmeans)`` with intensities front to back and the
    background last.
    """
    u = grid.check_image(u)
    if n_objects is not None:
        k = n_objects + 1
    elif cfg.k == "auto":
        k = choose_k(u, cfg)
    else:
        k = int(cfg.k)
    if k < 2:
        raise ValueError("need at least one object besides the background")
    km = histogram_kmeans(u, k, cfg.kmeans_restarts, cfg.kmeans_iters, cfg.seed)
    objects, bg = depth_order(km.centers, cfg.depth_rule, masses=km.masses)
    intensities = np.append(objects, bg)
    return intensities, seed_regions(u, intensities, cfg), km

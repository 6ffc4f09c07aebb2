"""Shape datasets and synthetic occlusion scenes with ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid, imageio

DEFAULT_OBJECT_INTENSITIES = (0.9, 0.6, 0.4)
DEFAULT_BACKGROUND = 0.1
MAX_PLACEMENT_TRIES = 100


@dataclass
class ShapeDataset:
    shapes: np.ndarray          # (N, H, W) uint8
    train: np.ndarray           # indices into shapes
    test: np.ndarray
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.shapes = np.asarray(self.shapes, dtype=np.uint8)
        self.train = np.asarray(self.train, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        if self.shapes.ndim != 3:
            raise ValueError("shapes must be an (N, H, W) stack")
        if np.intersect1d(self.train, self.test).size:
            raise ValueError("train and test splits overlap")
        if not self.names:
            self.names = [f"shape{i:04d}" for i in range(len(self.shapes))]

    @property
    def dims(self) -> tuple[int, int]:
        """(width, height)."""
        return self.shapes.shape[2], self.shapes.shape[1]

    def train_shapes(self) -> np.ndarray:
        return self.shapes[self.train]

    def test_shapes(self) -> np.ndarray:
        return self.shapes[self.test]


def split_indices(n: int, seed: int = 0, train_fraction: float = 0.5):
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train_fraction))
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def normalize_mask(mask, target_w: int, target_h: int) -> np.ndarray:
    """Crop to the bounding box, pad to the target aspect, resample, re-binarise."""
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise ValueError("empty mask")
    ys, xs = np.nonzero(mask)
    crop = mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1].astype(np.float64)
    h, w = crop.shape
    if w * target_h < h * target_w:
        new_w, new_h = math.ceil(h * target_w / target_h), h
    else:
        new_w, new_h = w, math.ceil(w * target_h / target_w)
    padded = np.zeros((new_h, new_w))
    y0, x0 = (new_h - h) // 2, (new_w - w) // 2
    padded[y0:y0 + h, x0:x0 + w] = crop
    scale = max(new_w / target_w, new_h / target_h)
    window = grid.WindowPlacement((new_w - scale * target_w) / 2,
                                  (new_h - scale * target_h) / 2, scale)
    out = grid.resample_window(padded, window, target_w, target_h)
    return (out >= 0.5).astype(np.uint8)


def load_dataset(path, target_w: int, target_h: int, seed: int = 0,
                 train_fraction: float = 0.5) -> ShapeDataset:
    """Load every PNG/PGM/PBM mask in a directory and normalise it."""
    files = imageio.list_masks(path)
    if not files:
        raise ValueError(f"no mask images in {path}")
    shapes = []
    for f in files:
        try:
            shapes.append(normalize_mask(imageio.read_mask(f), target_w, target_h))
        except ValueError as exc:
            raise ValueError(f"{f}: {exc}") from exc
    train, test = split_indices(len(shapes), seed, train_fraction)
    return ShapeDataset(np.array(shapes), train, test, [f.name for f in files])


def flip_augment(ds: ShapeDataset) -> ShapeDataset:
    """Append horizontal mirrors of the training shapes to the training split."""
    mirrors = ds.shapes[ds.train][:, :, ::-1]
    start = len(ds.shapes)
    names = list(ds.names) + [f"{ds.names[i]}:flip" for i in ds.train]
    return ShapeDataset(
        np.concatenate([ds.shapes, mirrors]),
        np.concatenate([ds.train, start + np.arange(len(mirrors))]),
        ds.test.copy(),
        names,
    )


def _toy_mask(kind: str, w: int, h: int, rng) -> np.ndarray:
    m = np.zeros((h, w), dtype=np.uint8)
    side = min(w, h)
    if kind == "square":
        s = int(rng.integers(max(3, round(0.4 * side)), side - 1))
        y0, x0 = (h - s) // 2, (w - s) // 2
        m[y0:y0 + s, x0:x0 + s] = 1
    elif kind == "cross":
        span = int(rng.integers(max(5, round(0.6 * side)), side - 1))
        t = int(rng.integers(3, max(4, round(0.4 * span))))
        y0, x0 = (h - span) // 2, (w - span) // 2
        ty, tx = (h - t) // 2, (w - t) // 2
        m[ty:ty + t, x0:x0 + span] = 1
        m[y0:y0 + span, tx:tx + t] = 1
    elif kind == "disk":
        r = rng.uniform(0.25 * side, 0.45 * side)
        yy, xx = np.mgrid[:h, :w]
        m[(yy - (h - 1) / 2) ** 2 + (xx - (w - 1) / 2) ** 2 <= r * r] = 1
    else:
        raise ValueError(f"unknown toy shape kind {kind!r}")
    return m


def toy_shapes(kinds, dims, count: int, seed: int = 0,
               train_fraction: float = 0.5) -> ShapeDataset:
    """Centred parametric shapes with jittered size and thickness.

    ``kinds`` is one kind or a sequence; ``count`` shapes are made per kind.
    ``dims`` is ``(width, height)``.
    """
    if isinstance(kinds, str):
        kinds = [kinds]
    w, h = dims
    rng = np.random.default_rng(seed)
    shapes, names = [], []
    for kind in kinds:
        for i in range(count):
            shapes.append(_toy_mask(kind, w, h, rng))
            names.append(f"{kind}{i:04d}")
    train, test = split_indices(len(shapes), seed, train_fraction)
    return ShapeDataset(np.array(shapes), train, test, names)


@dataclass
class SyntheticScene:
    image: np.ndarray        # (H, W) in [0, 1]
    truth_masks: np.ndarray  # (n, H, W) uint8, full object extents, front to back
    intensities: np.ndarray  # objects front to back, background last
    sigma: float
    seed: int
    shape_ids: list = field(default_factory=list)
    positions: list = field(default_factory=list)  # (x, y) top-left per object

    @property
    def n(self) -> int:
        return len(self.truth_masks)


def visible_masks(truth_masks) -> np.ndarray:
    """Visible part of every object plus the background, ``(n + 1, H, W)``."""
    truth = np.asarray(truth_masks) > 0
    out = np.zeros((len(truth) + 1,) + truth.shape[1:], dtype=np.uint8)
    covered = np.zeros(truth.shape[1:], dtype=bool)
    for i, m in enumerate(truth):
        out[i] = m & ~covered
        covered |= m
    out[-1] = ~covered
    return out


def render(truth_masks, intensities) -> np.ndarray:
    vis = visible_masks(truth_masks).astype(np.float64)
    return np.tensordot(np.asarray(intensities, dtype=np.float64), vis, axes=1)


def synthesize(ds: ShapeDataset, n_objects: int, canvas_w: int, canvas_h: int,
               sigma: float = 0.05, seed: int = 0, intensities=None,
               background: float = DEFAULT_BACKGROUND, pool: str = "test",
               min_visible: int = 1) -> SyntheticScene:
    """Overlap randomly drawn shapes on a canvas and add Gaussian noise.

    Draw order is depth order (first draw is nearest). Placements that leave
    an object with fewer than ``min_visible`` visible pixels are redrawn.
    """
    if n_objects not in (2, 3):
        raise ValueError("n_objects must be 2 or 3")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if intensities is None:
        intensities = DEFAULT_OBJECT_INTENSITIES[:n_objects]
    if len(intensities) != n_objects:
        raise ValueError("need one intensity per object")
    levels = np.array(list(intensities) + [background], dtype=np.float64)
    indices = ds.test if pool == "test" else ds.train if pool == "train" else np.arange(len(ds.shapes))
    if len(indices) == 0:
        raise ValueError(f"the {pool} split is empty")
    w, h = ds.dims
    if w > canvas_w or h > canvas_h:
        raise ValueError("shapes do not fit on the canvas")
    rng = np.random.default_rng(seed)
    ids = [int(i) for i in rng.choice(indices, n_objects)]
    for _ in range(MAX_PLACEMENT_TRIES):
        pos = [(int(rng.integers(0, canvas_w - w + 1)), int(rng.integers(0, canvas_h - h + 1)))
               for _ in ids]
        truth = np.zeros((n_objects, canvas_h, canvas_w), dtype=np.uint8)
        for k, (i, (x, y)) in enumerate(zip(ids, pos)):
            truth[k, y:y + h, x:x + w] = ds.shapes[i]
        vis = visible_masks(truth)
        if all(vis[k].sum() >= min_visible for k in range(n_objects)):
            break
    else:
        raise RuntimeError(f"no valid placement after {MAX_PLACEMENT_TRIES} tries")
    image = render(truth, levels)
    if sigma > 0:
        image = image + rng.normal(0.0, sigma, image.shape)
    image = np.clip(image, 0.0, 1.0)
    return SyntheticScene(image, truth, levels, float(sigma), seed, ids, pos)

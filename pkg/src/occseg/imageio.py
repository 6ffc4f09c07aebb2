"""PNG / PGM reading and writing on top of Pillow."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

MASK_SUFFIXES = (".png", ".pgm", ".pbm")


def read_gray(path) -> np.ndarray:
    """Read a grayscale image as floats in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            return a / 65535.0
        if im.mode == "1":
            return np.asarray(im, dtype=np.float64)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    """Read a two-level image as a uint8 0/1 mask; anything else is an error."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            a = np.asarray(im)
    except Exception as exc:  # Pillow raises several unrelated types
        raise ValueError(f"{path}: unreadable image ({exc})") from exc
    if a.ndim == 3:
        if not np.all(a == a[..., :1]):
            raise ValueError(f"{path}: colour image is not a binary mask")
        a = a[..., 0]
    if mode == "1":
        return a.astype(np.uint8)
    top = 65535 if a.dtype == np.uint16 or mode.startswith("I") else 255
    values = np.unique(a)
    if not np.all(np.isin(values, (0, 1, top))) or (1 in values and top in values and top != 1):
        raise ValueError(f"{path}: not a binary mask (values {values[:6]})")
    return (a > 0).astype(np.uint8)


def write_gray8(path, u) -> None:
    a = np.round(np.clip(u, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(a).save(path)


def write_gray16(path, q) -> None:
    a = np.round(np.clip(q, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(a).save(path)


def write_mask(path, mask) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255).save(path)


def write_rgb(path, rgb) -> None:
    a = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(a).save(path)


def list_masks(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise ValueError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in MASK_SUFFIXES)

"""Versioned binary container for SBM models.

Layout (all little-endian)::

    8 bytes   magic  b"OCCSBM\\x00\\x01"
    uint32    format version (currently 1)
    uint32    number of dimension fields that follow (8)
    8 x int64 visible_w, visible_h, patch_rows, patch_cols,
              patch_side, overlap_d, hidden1_per_patch, hidden2
    float64[] W1 (patch_side**2 x hidden1_per_patch, row-major),
              W2 (|h1| x hidden2, row-major), b, c1, c2

Nothing follows the last array; trailing bytes are rejected.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import SbmArchitecture, SbmParams

MAGIC = b"OCCSBM\x00\x01"
VERSION = 1
_DIMS = ("visible_w", "visible_h", "patch_rows", "patch_cols",
         "patch_side", "overlap_d", "hidden1_per_patch", "hidden2")


def dumps(arch: SbmArchitecture, params: SbmParams) -> bytes:
    params.check(arch)
    head = MAGIC + struct.pack("<II", VERSION, len(_DIMS))
    head += struct.pack(f"<{len(_DIMS)}q", *(getattr(arch, k) for k in _DIMS))
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())
    return head + body


def loads(blob: bytes) -> tuple[SbmArchitecture, SbmParams]:
    if blob[:8] != MAGIC:
        raise ValueError("not an SBM model file (bad magic)")
    version, ndims = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise ValueError(f"unsupported model file version {version}")
    if ndims != len(_DIMS):
        raise ValueError(f"expected {len(_DIMS)} dimension fields, found {ndims}")
    dims = struct.unpack_from(f"<{ndims}q", blob, 16)
    arch = SbmArchitecture(**dict(zip(_DIMS, dims)))
    offset = 16 + 8 * ndims
    arrays = []
    for shape in (a.shape for a in SbmParams.zeros(arch).arrays()):
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError("model file is truncated")
        arrays.append(np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape))
        offset = end
    if offset != len(blob):
        raise ValueError("trailing bytes after model parameters")
    return arch, SbmParams(*arrays)


def save_model(path, arch: SbmArchitecture, params: SbmParams) -> None:
    Path(path).write_bytes(dumps(arch, params))


def load_model(path) -> tuple[SbmArchitecture, SbmParams]:
    return loads(Path(path).read_bytes())

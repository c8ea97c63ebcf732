"""Writers for the scene-bundle file formats.

The adapter talks to the layout engine only through files, so the
formats are implemented here from their documented contracts rather
than imported from the engine package:

    camera.json    pinhole intrinsics; plain JSON
    depth.pfm      grayscale PFM, ``Pf`` magic, negative scale for
                   little endian, float32 scanlines bottom-to-top
    masks.json     run-length masks, row-major alternating counts
                   starting with zeros, plus a tight (x, y, w, h) box
    features/*.bin ``LFF1`` magic, H/W/D little-endian uint32, then
                   H*W*D little-endian float32 row-major
    oracle.json    scene facts; plain JSON

JSON is written UTF-8 with sorted keys and two-space indent so equal
inputs give byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"LFF1"


def write_json(path: str | Path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_pfm(path: str | Path, depth: np.ndarray) -> None:
    """Write a float32 (H, W) depth array as a little-endian PFM."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2D, got shape {depth.shape}")
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(depth).astype("<f4").tobytes())


def write_feature_grid(path: str | Path, grid: np.ndarray) -> None:
    """Write an (H, W, D) float array as a binary feature file."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 3:
        raise ValueError(f"feature grid must be (H, W, D), got {grid.shape}")
    h, w, d = grid.shape
    header = FEATURE_MAGIC + np.asarray([h, w, d], dtype="<u4").tobytes()
    Path(path).write_bytes(header + grid.astype("<f4").tobytes())


def rle_encode(mask: np.ndarray) -> list[int]:
    """Encode a boolean (H, W) mask as alternating run counts.

    The first count is the number of leading zeros, so a mask starting
    with a set pixel gets a leading zero-length run.  Counts sum to
    ``H * W``.
    """
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(counts: list[int], height: int, width: int) -> np.ndarray:
    """Inverse of :func:`rle_encode`; validates totals and signs."""
    total = height * width
    arr = np.asarray(counts, dtype=np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("negative run length")
    if int(arr.sum()) != total:
        raise ValueError(f"run counts sum to {int(arr.sum())}, expected {total}")
    flat = np.zeros(total, dtype=bool)
    ends = np.cumsum(arr)
    starts = ends - arr
    for s, e in zip(starts[1::2], ends[1::2]):
        flat[s:e] = True
    return flat.reshape(height, width)


def tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """(x, y, w, h) of the smallest box covering the set pixels."""
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if ys.size == 0:
        raise ValueError("empty mask has no bounding box")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return x0, y0, x1 - x0 + 1, y1 - y0 + 1

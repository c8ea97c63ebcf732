"""Run-length codec for binary masks.

Masks are encoded row-major (C order) as alternating run lengths,
starting with the number of leading zeros.  A mask that begins with a
set pixel therefore encodes a leading zero-length run.  The counts
always sum to ``height * width``.
"""

from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> list[int]:
    """Encode a 2D boolean array into alternating run counts.

    Args:
        mask: (H, W) boolean or 0/1 array.

    Returns:
        List of run lengths, zeros first.
    """
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    # Boundaries between runs, plus both ends.
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def decode(counts: list[int], height: int, width: int) -> np.ndarray:
    """Decode run counts into an (H, W) boolean array.

    Raises:
        ValueError: if the counts do not sum to ``height * width`` or
            any count is negative.
    """
    total = height * width
    if total == 0:
        if sum(counts) != 0:
            raise ValueError("run counts nonzero for empty mask")
        return np.zeros((height, width), dtype=bool)
    arr = np.asarray(counts, dtype=np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("negative run length")
    if int(arr.sum()) != total:
        raise ValueError(
            f"run counts sum to {int(arr.sum())}, expected {total}"
        )
    flat = np.zeros(total, dtype=bool)
    ends = np.cumsum(arr)
    starts = ends - arr
    # Odd-indexed runs are set pixels.
    for s, e in zip(starts[1::2], ends[1::2]):
        flat[s:e] = True
    return flat.reshape(height, width)


def tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Return (x, y, w, h) of the smallest box covering all set pixels.

    Raises:
        ValueError: if the mask has no set pixels.
    """
    ys, xs = np.nonzero(np.asarray(mask, dtype=bool))
    if ys.size == 0:
        raise ValueError("empty mask has no bounding box")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    return x0, y0, x1 - x0 + 1, y1 - y0 + 1

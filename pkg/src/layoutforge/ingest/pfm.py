"""Reader and writer for single-channel PFM depth maps.

Follows the portable float map convention: ``Pf`` header, dimensions,
a scale line whose sign gives endianness (negative = little endian),
then float32 scanlines stored bottom-to-top.  Arrays returned and
accepted by this module are top-to-bottom, row 0 at the top of the
image, values in meters, 0.0 marking invalid measurements.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import BundleError


def read_pfm(path: str | Path) -> np.ndarray:
    """Load a grayscale PFM file as a float32 (H, W) array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise BundleError(f"cannot read depth map: {exc}", str(path))
    try:
        header, dims, scale, offset = _parse_header(data)
    except ValueError as exc:
        raise BundleError(f"malformed PFM header: {exc}", str(path))
    if header != b"Pf":
        raise BundleError(
            f"expected grayscale PFM magic 'Pf', got {header!r}", str(path)
        )
    width, height = dims
    count = width * height
    dtype = "<f4" if scale < 0 else ">f4"
    if len(data) - offset < count * 4:
        raise BundleError(
            f"PFM payload truncated: {len(data) - offset} bytes for "
            f"{count} floats", str(path)
        )
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    img = pixels.reshape(height, width)
    return np.flipud(img).astype(np.float32)


def write_pfm(path: str | Path, depth: np.ndarray) -> None:
    """Write a float32 (H, W) array as a little-endian grayscale PFM."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim != 2:
        raise ValueError(f"depth must be 2D, got shape {depth.shape}")
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.flipud(depth).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def _parse_header(data: bytes) -> tuple[bytes, tuple[int, int], float, int]:
    """Split the three whitespace-delimited header tokens.

    Returns (magic, (width, height), scale, payload offset).
    """
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        # Skip whitespace between tokens, then accumulate one token.
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(data[start:pos])
    if len(tokens) < 4:
        raise ValueError("fewer than four header tokens")
    # One whitespace byte terminates the scale line before the payload.
    offset = pos + 1
    magic = tokens[0]
    width, height = int(tokens[1]), int(tokens[2])
    if width <= 0 or height <= 0:
        raise ValueError(f"bad dimensions {width}x{height}")
    scale = float(tokens[3])
    if scale == 0:
        raise ValueError("scale must be nonzero")
    return magic, (width, height), scale, offset

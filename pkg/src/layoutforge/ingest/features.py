"""Binary feature file format and lazy per-bundle feature access.

A feature file is a dense float32 grid with a fixed 16-byte header:
4-byte magic ``LFF1``, then H, W, D as little-endian uint32, then
``H * W * D`` little-endian float32 values in row-major order.  Global
embeddings use H = W = 1.  In patch grids, an all-zero descriptor marks
an invalid (background) patch; valid descriptors are unit length.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import BundleError, MissingFeatureError

MAGIC = b"LFF1"
HEADER_BYTES = 16


def write_features(path: str | Path, grid: np.ndarray) -> None:
    """Write an (H, W, D) float array as a feature file."""
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 3:
        raise ValueError(f"feature grid must be (H, W, D), got {grid.shape}")
    h, w, d = grid.shape
    header = MAGIC + np.asarray([h, w, d], dtype="<u4").tobytes()
    Path(path).write_bytes(header + grid.astype("<f4").tobytes())


def read_features(path: str | Path) -> np.ndarray:
    """Load a feature file as a float32 (H, W, D) array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MissingFeatureError(f"cannot read feature file: {exc}", str(path))
    if len(data) < HEADER_BYTES or data[:4] != MAGIC:
        raise BundleError("bad feature file magic", str(path))
    h, w, d = (int(v) for v in np.frombuffer(data, "<u4", count=3, offset=4))
    count = h * w * d
    if len(data) - HEADER_BYTES < count * 4:
        raise BundleError(
            f"feature payload truncated: {len(data) - HEADER_BYTES} bytes "
            f"for {count} floats", str(path)
        )
    values = np.frombuffer(data, "<f4", count=count, offset=HEADER_BYTES)
    return values.reshape(h, w, d).astype(np.float32)


class FeatureStore:
    """Lazy access to the feature files referenced by a bundle.

    Searches one or more ``features/`` directories (scene bundle first,
    then an optional asset library directory) and caches loaded arrays.
    """

    def __init__(self, roots: list[Path]):
        self.roots = [Path(r) for r in roots]
        self._cache: dict[str, np.ndarray] = {}

    def _load(self, name: str) -> np.ndarray:
        if name not in self._cache:
            for root in self.roots:
                candidate = root / name
                if candidate.is_file():
                    self._cache[name] = read_features(candidate)
                    break
            else:
                searched = ", ".join(str(r) for r in self.roots)
                raise MissingFeatureError(
                    f"feature file {name!r} not found in: {searched}"
                )
        return self._cache[name]

    def has(self, name: str) -> bool:
        return name in self._cache or any(
            (root / name).is_file() for root in self.roots
        )

    def load(self, name: str) -> np.ndarray:
        """Load a feature file by its manifest-referenced name."""
        return self._load(name)

    def query_patches(self, mask_id: int) -> np.ndarray:
        """Patch feature grid extracted from one mask's image region."""
        return self._load(f"query_{mask_id}.bin")

    def query_global(self, mask_id: int) -> np.ndarray:
        """Global embedding for one mask, as a unit-length (D,) vector.

        Prefers a dedicated ``qthumb_<id>.bin`` file; otherwise pools the
        query patch grid (mean of valid patches, renormalized).
        """
        name = f"qthumb_{mask_id}.bin"
        if self.has(name):
            return _pool(self._load(name))
        return _pool(self.query_patches(mask_id))

    def template(self, asset_id: str, view: int) -> np.ndarray:
        """Patch feature grid of one rendered template view."""
        return self._load(f"tmpl_{asset_id}_{view}.bin")

    def thumbnail(self, asset_id: str, view: int) -> np.ndarray:
        """Global embedding of one thumbnail view, as a (D,) unit vector."""
        return _pool(self._load(f"thumb_{asset_id}_{view}.bin"))


def _pool(grid: np.ndarray) -> np.ndarray:
    """Average the valid (nonzero) patch descriptors into a unit vector."""
    flat = grid.reshape(-1, grid.shape[-1])
    norms = np.linalg.norm(flat, axis=1)
    valid = flat[norms > 0]
    if valid.shape[0] == 0:
        return np.zeros(grid.shape[-1], dtype=np.float32)
    mean = valid.mean(axis=0)
    scale = np.linalg.norm(mean)
    if scale == 0:
        return np.zeros(grid.shape[-1], dtype=np.float32)
    return (mean / scale).astype(np.float32)

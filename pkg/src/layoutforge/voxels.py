"""Occupancy voxel grids and world-space rasterization of placed objects.

An asset carries a grid voxelized in its own canonical frame.  To test
placed objects against each other, each object's canonical grid is
resampled into a single shared world lattice: a world cell is occupied
when its center, mapped back through the object's pose and scale, lands
inside an occupied canonical cell.  The inverse mapping avoids the
holes that forward point splatting produces under upscaling.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np


@dataclass
class VoxelGrid:
    """Axis-aligned occupancy grid.

    Attributes:
        origin: world/frame position of the (0, 0, 0) cell corner.
        cell: edge length of one cubic cell, meters.
        dims: cell counts (nx, ny, nz).
        bits: boolean occupancy, shape ``dims``, C order.
    """

    origin: np.ndarray
    cell: float
    dims: tuple[int, int, int]
    bits: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.bits = np.asarray(self.bits, dtype=bool).reshape(self.dims)
        if self.cell <= 0:
            raise ValueError(f"cell size must be positive, got {self.cell}")

    def occupied_centers(self) -> np.ndarray:
        """Centers of all occupied cells as an (N, 3) array."""
        idx = np.argwhere(self.bits)
        return self.origin + (idx + 0.5) * self.cell

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Occupancy lookup for an (N, 3) array of frame positions."""
        pts = np.asarray(points, dtype=float)
        idx = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        out = np.zeros(len(pts), dtype=bool)
        if inside.any():
            sel = idx[inside]
            out[inside] = self.bits[sel[:, 0], sel[:, 1], sel[:, 2]]
        return out

    def to_json(self) -> dict:
        packed = np.packbits(self.bits.ravel().astype(np.uint8))
        return {
            "origin": [float(v) for v in self.origin],
            "cell": float(self.cell),
            "dims": list(self.dims),
            "bits_b64": base64.b64encode(packed.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "VoxelGrid":
        dims = tuple(int(v) for v in obj["dims"])
        n = dims[0] * dims[1] * dims[2]
        raw = base64.b64decode(obj["bits_b64"])
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=n)
        return cls(
            origin=np.asarray(obj["origin"], dtype=float),
            cell=float(obj["cell"]),
            dims=dims,  # type: ignore[arg-type]
            bits=bits.astype(bool).reshape(dims),
        )


def voxelize_box(extents: np.ndarray, cell: float) -> VoxelGrid:
    """Solid occupancy grid for a box of given (lx, ly, lz) extents.

    The box is centered on the frame origin.  A cell is occupied when
    its center lies inside the box.
    """
    ext = np.asarray(extents, dtype=float)
    dims = tuple(max(1, int(np.ceil(e / cell))) for e in ext)
    origin = -np.asarray(dims) * cell / 2.0
    grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1) * cell
    centers = centers + origin + cell / 2.0
    inside = np.all(np.abs(centers) <= ext / 2.0, axis=1)
    return VoxelGrid(origin, cell, dims, inside.reshape(dims))


def carve_box(grid: VoxelGrid, lo: np.ndarray, hi: np.ndarray) -> None:
    """Clear all cells whose centers fall inside the [lo, hi] box."""
    idx = np.argwhere(grid.bits)
    if idx.size == 0:
        return
    centers = grid.origin + (idx + 0.5) * grid.cell
    inner = np.all((centers >= lo) & (centers <= hi), axis=1)
    sel = idx[inner]
    grid.bits[sel[:, 0], sel[:, 1], sel[:, 2]] = False


def world_cells(
    grid: VoxelGrid,
    rotation: np.ndarray,
    translation: np.ndarray,
    scale: np.ndarray,
    world_cell: float,
) -> np.ndarray:
    """Indices of world-lattice cells covered by a posed, scaled grid.

    The world lattice is anchored at the global origin with cubic cells
    of ``world_cell`` meters, so indices from different objects are
    directly comparable.  Returns an (N, 3) int array of unique cells.
    """
    rot = np.asarray(rotation, dtype=float)
    t = np.asarray(translation, dtype=float)
    s = np.asarray(scale, dtype=float)

    # Bounding box of the scaled, rotated grid in world space.
    lo = grid.origin * s
    hi = (grid.origin + np.asarray(grid.dims) * grid.cell) * s
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1])
         for z in (lo[2], hi[2])]
    )
    world = corners @ rot.T + t
    cmin = np.floor(world.min(axis=0) / world_cell).astype(np.int64)
    cmax = np.floor(world.max(axis=0) / world_cell).astype(np.int64)

    spans = [np.arange(cmin[i], cmax[i] + 1) for i in range(3)]
    mesh = np.meshgrid(*spans, indexing="ij")
    cells = np.stack([m.ravel() for m in mesh], axis=1)
    centers = (cells + 0.5) * world_cell
    # Inverse map: world -> canonical frame of the grid.
    local = (centers - t) @ rot / np.where(s == 0, 1.0, s)
    hit = grid.sample(local)
    return cells[hit]


def cell_key_set(cells: np.ndarray, stride: int = 1 << 21) -> set[int]:
    """Pack (N, 3) integer cells into a set of scalar keys."""
    offset = stride // 2
    keys = (
        (cells[:, 0] + offset) * stride + (cells[:, 1] + offset)
    ) * stride + (cells[:, 2] + offset)
    return set(int(k) for k in keys)

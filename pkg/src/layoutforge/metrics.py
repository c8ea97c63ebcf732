"""Evaluation: layout similarity, pose recovery curves, physics checks.

Layouts are compared as coarse occupancy patterns so two
reconstructions of the same room agree regardless of which wall was
called "first" or whether the room frame came out mirrored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .errors import EmptyInputError
from .geometry import RoomFrame, set_distance
from .scenegraph import FLOOR_ID, SceneGraph
from .voxels import cell_key_set, world_cells

if TYPE_CHECKING:
    from .refine import PlacedObject

UP = np.array([0.0, 0.0, 1.0])
SIMILARITY_CELL = 0.1
ROTATION_DEGREES = np.arange(1, 61)
TRANSLATION_METERS = np.arange(1, 51) * 0.01


def rasterize_layout(
    placements: dict[int, "PlacedObject"],
    cell: float = SIMILARITY_CELL,
) -> np.ndarray:
    """Union occupancy of all objects, cropped to its bounding cells."""
    if not placements:
        return np.zeros((0, 0, 0), dtype=bool)
    chunks = []
    for mask_id in sorted(placements):
        obj = placements[mask_id]
        cells = world_cells(obj.voxel_grid(cell), obj.rotation,
                            obj.translation, obj.scale, cell)
        if cells.size:
            chunks.append(cells)
    if not chunks:
        return np.zeros((0, 0, 0), dtype=bool)
    cells = np.unique(np.concatenate(chunks, axis=0), axis=0)
    lo = cells.min(axis=0)
    dims = cells.max(axis=0) - lo + 1
    grid = np.zeros(dims, dtype=bool)
    rel = cells - lo
    grid[rel[:, 0], rel[:, 1], rel[:, 2]] = True
    return grid


def _corner_aligned_iou(a: np.ndarray, b: np.ndarray) -> float:
    dims = np.maximum(a.shape, b.shape)
    pa = np.zeros(dims, dtype=bool)
    pa[: a.shape[0], : a.shape[1], : a.shape[2]] = a
    pb = np.zeros(dims, dtype=bool)
    pb[: b.shape[0], : b.shape[1], : b.shape[2]] = b
    union = int(np.logical_or(pa, pb).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pa, pb).sum()) / union


def layout_similarity(
    a: dict[int, "PlacedObject"],
    b: dict[int, "PlacedObject"],
    cell: float = SIMILARITY_CELL,
) -> float:
    """Occupancy IoU, maximized over the 8 horizontal grid symmetries.

    Both layouts are rasterized and tightly cropped (making the score
    blind to grid-aligned translation), then the second pattern is
    tried in all four quarter turns with and without an x mirror.
    """
    grid_a = rasterize_layout(a, cell)
    grid_b = rasterize_layout(b, cell)
    best = 0.0
    for mirrored in (False, True):
        base = grid_b[::-1] if mirrored else grid_b
        for quarter in range(4):
            turned = np.rot90(base, quarter, axes=(0, 1))
            best = max(best, _corner_aligned_iou(grid_a, turned))
    return best


# --- pose recovery curves ----------------------------------------------------


def recovery_curve(errors: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of errors at or below each threshold."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise EmptyInputError("recovery curve needs at least one error value")
    return (errors[None, :] <= np.asarray(thresholds)[:, None]).mean(axis=1)


def rotation_auc(errors_deg: np.ndarray) -> float:
    """Mean recovery over integer angle thresholds 1..60 degrees."""
    return float(recovery_curve(errors_deg, ROTATION_DEGREES).mean())


def translation_auc(errors_m: np.ndarray) -> float:
    """Mean recovery over distance thresholds 0.01..0.50 m."""
    return float(recovery_curve(errors_m, TRANSLATION_METERS).mean())


# --- physical consistency ----------------------------------------------------


@dataclass
class SceneChecks:
    """Contact gaps beyond tolerance and voxel-level object overlaps."""

    contact_violations: list[tuple[str, int, float]] = field(default_factory=list)
    intersections: list[tuple[int, int]] = field(default_factory=list)

    def clean(self) -> bool:
        return not self.contact_violations and not self.intersections


def scene_checks(
    placements: dict[int, "PlacedObject"],
    graph: SceneGraph,
    room: RoomFrame,
    cell: float = 0.05,
) -> SceneChecks:
    """Verify declared contacts hold and no two objects share voxels.

    Every support, ceiling, and wall edge must close within one voxel
    cell.  Intersections are object pairs whose world-lattice cells
    overlap; resting contact never does, because the surfaces meet at
    a lattice boundary.
    """
    report = SceneChecks()
    boxes = {i: placements[i].box() for i in placements}
    # Settling quantizes contacts to the voxel lattice, so a gap of
    # exactly one cell is legal; leave headroom for float rounding.
    limit = cell * (1.0 + 1e-9)

    for node in graph.topo_order():
        if node not in placements:
            continue
        parent = graph.parent[node]
        bottom, _ = boxes[node].interval(UP)
        if parent == FLOOR_ID:
            gap = bottom - room.floor_height()
        elif graph.d_vertical.get(node, 0.0) == 0.0 and parent in placements:
            _, parent_top = boxes[parent].interval(UP)
            gap = bottom - parent_top
        else:
            continue
        if abs(gap) > limit:
            report.contact_violations.append(("support", node, float(gap)))

    ceiling_h = room.ceiling_height()
    for node in sorted(graph.ceiling):
        if node not in placements or ceiling_h is None:
            continue
        _, top = boxes[node].interval(UP)
        gap = ceiling_h - top
        if abs(gap) > limit:
            report.contact_violations.append(("ceiling", node, float(gap)))

    for mask_id, wall_idx in graph.wall_edges:
        if mask_id not in placements or wall_idx >= len(room.walls):
            continue
        gap = set_distance(boxes[mask_id], room.walls[wall_idx])
        if gap > limit:
            report.contact_violations.append(("wall", mask_id, float(gap)))

    keys = {}
    for mask_id in sorted(placements):
        obj = placements[mask_id]
        cells = world_cells(obj.voxel_grid(cell), obj.rotation,
                            obj.translation, obj.scale, cell)
        keys[mask_id] = cell_key_set(cells) if cells.size else set()
    ids = sorted(keys)
    for i, first in enumerate(ids):
        for second in ids[i + 1:]:
            if keys[first] & keys[second]:
                report.intersections.append((first, second))
    return report


def support_agreement(pred: SceneGraph, gt: SceneGraph) -> float:
    """Fraction of reference objects whose support status is matched.

    An object's status is its support parent (the floor counts as a
    parent) or its ceiling membership.  Reference objects excluded from
    the reference graph are ignored.

    Raises:
        EmptyInputError: the reference graph holds no supported object.
    """
    ids = sorted(set(gt.parent) | gt.ceiling)
    if not ids:
        raise EmptyInputError("reference graph has no supported objects")
    good = 0
    for i in ids:
        if i in gt.ceiling:
            good += i in pred.ceiling
        else:
            good += pred.parent.get(i) == gt.parent[i]
    return good / len(ids)


# --- object recovery ---------------------------------------------------------


@dataclass
class MatchReport:
    """Greedy category-and-proximity matching between two object sets."""

    matches: list[tuple[int, int]]  # (estimated id, reference id)
    overall: float
    primary: float
    secondary: float


def primary_ids(
    placements: dict[int, "PlacedObject"],
    graph: SceneGraph,
    room: RoomFrame,
    wall_distance: float = 0.1,
) -> set[int]:
    """Objects that structure the room: on the floor or ceiling, or
    within ``wall_distance`` of a wall."""
    out = {i for i in graph.roots() if i in placements}
    out |= {i for i in graph.ceiling if i in placements}
    for mask_id in placements:
        box = placements[mask_id].box()
        if any(set_distance(box, wall) < wall_distance for wall in room.walls):
            out.add(mask_id)
    return out


def recovery_rates(
    estimated: dict[int, tuple[str, np.ndarray]],
    reference: dict[int, tuple[str, np.ndarray]],
    primary: set[int] = frozenset(),
    max_distance: float = 0.5,
) -> MatchReport:
    """Match estimates to reference objects, nearest first.

    Objects pair only within the same category and within
    ``max_distance`` of each other; each object matches at most once.
    Rates are the matched fraction of the reference set, with the
    primary/secondary split given by ``primary`` (empty groups score 1).
    """
    pairs = []
    for est_id, (est_cat, est_center) in estimated.items():
        for ref_id, (ref_cat, ref_center) in reference.items():
            if est_cat != ref_cat:
                continue
            dist = float(np.linalg.norm(np.asarray(est_center, float)
                                        - np.asarray(ref_center, float)))
            if dist <= max_distance:
                pairs.append((dist, est_id, ref_id))
    pairs.sort()
    used_est: set[int] = set()
    used_ref: set[int] = set()
    matches = []
    for _, est_id, ref_id in pairs:
        if est_id in used_est or ref_id in used_ref:
            continue
        used_est.add(est_id)
        used_ref.add(ref_id)
        matches.append((est_id, ref_id))

    def rate(ids: set[int]) -> float:
        if not ids:
            return 1.0
        return len(ids & used_ref) / len(ids)

    all_ref = set(reference)
    return MatchReport(
        matches=sorted(matches),
        overall=rate(all_ref),
        primary=rate(all_ref & set(primary)),
        secondary=rate(all_ref - set(primary)),
    )


@dataclass
class EvalReport:
    """Bundle of every evaluation result for one scene."""

    similarity: float | None = None
    rotation_auc: float | None = None
    translation_auc: float | None = None
    checks: SceneChecks | None = None
    recovery: MatchReport | None = None

    def to_json(self) -> dict:
        return {
            "similarity": self.similarity,
            "rotation_auc": self.rotation_auc,
            "translation_auc": self.translation_auc,
            "contact_violations": (
                [[k, i, g] for k, i, g in self.checks.contact_violations]
                if self.checks else None
            ),
            "intersections": (
                [list(p) for p in self.checks.intersections]
                if self.checks else None
            ),
            "recovery": (
                {
                    "matches": [list(m) for m in self.recovery.matches],
                    "overall": self.recovery.overall,
                    "primary": self.recovery.primary,
                    "secondary": self.recovery.secondary,
                }
                if self.recovery else None
            ),
        }

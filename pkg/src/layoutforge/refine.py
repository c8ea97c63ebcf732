"""Layout refinement: snapping, hard contacts, and silhouette annealing.

Works in room coordinates (floor at z = 0, up along +z).  Placements
first get their rotations snapped (upright, and square to a contacted
wall), support and wall contacts are then enforced exactly and frozen,
and finally free translation components are annealed against the
observed instance masks under a no-new-collision rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .errors import NoSubspaceError
from .geometry import Obb, RoomFrame, align_rotation, boxes_overlap, rot_z
from .scenegraph import FLOOR_ID, SceneGraph
from .voxels import VoxelGrid, voxelize_box, world_cells

if TYPE_CHECKING:
    from .ingest.types import Asset, CameraIntrinsics

UP = np.array([0.0, 0.0, 1.0])


@dataclass
class RefineConfig:
    """Knobs for refinement and annealing.

    ``step`` is the proposal sigma in meters; ``cell`` the voxel pitch
    used for settling, silhouettes, and contact checks.
    """

    cell: float = 0.05
    anchor_weight: float = 0.1
    t0: float = 1.0
    cooling: float = 0.97
    iterations: int = 5000
    step: float = 0.05
    wall_yaw_snap: float = math.radians(15.0)
    margin: float = 0.05
    wall_warn: float = 0.5


@dataclass
class PlacedObject:
    """One asset instance with its rigid pose and per-axis scale."""

    mask_id: int
    asset: "Asset"
    rotation: np.ndarray
    translation: np.ndarray
    scale: np.ndarray
    _grid: VoxelGrid | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.scale = np.asarray(self.scale, dtype=float).reshape(3)

    def box(self) -> Obb:
        half = self.scale * np.asarray(self.asset.extents) / 2.0
        return Obb(center=self.translation.copy(), axes=self.rotation.copy(),
                   half_extents=half)

    def voxel_grid(self, cell: float) -> VoxelGrid:
        """Canonical-frame occupancy; a solid box when the asset has none."""
        if self.asset.voxel is not None:
            return self.asset.voxel
        if self._grid is None or abs(self._grid.cell - cell) > 1e-12:
            self._grid = voxelize_box(np.asarray(self.asset.extents), cell)
        return self._grid


@dataclass
class ViewModel:
    """Pinhole projection from room coordinates into the source image."""

    camera: "CameraIntrinsics"
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates plus an in-front-of-camera validity mask."""
        pts = np.asarray(points, dtype=float) @ self.rotation.T + self.translation
        z = pts[:, 2]
        valid = z > 1e-6
        pix = np.zeros((len(pts), 2))
        pix[valid, 0] = self.camera.fx * pts[valid, 0] / z[valid] + self.camera.cx
        pix[valid, 1] = self.camera.fy * pts[valid, 1] / z[valid] + self.camera.cy
        return pix, valid


@dataclass
class TraceEntry:
    """One annealing proposal and what became of it."""

    iteration: int
    temperature: float
    mask_id: int
    delta: tuple[float, float, float]
    accepted: bool
    objective: float  # energy after the accept/reject decision


@dataclass
class OptState:
    """Placements plus the constraint bookkeeping the annealer needs.

    ``anchors`` are the translations as estimated before constraints;
    ``locked`` maps a mask id to directions its translation must not
    move along.  ``objective`` and ``trace`` are filled in by the
    annealer.
    """

    placements: dict[int, PlacedObject]
    anchors: dict[int, np.ndarray]
    locked: dict[int, list[np.ndarray]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    objective: float | None = None
    trace: list[TraceEntry] = field(default_factory=list)

    def free_delta(self, mask_id: int, delta: np.ndarray) -> np.ndarray:
        """Project a proposed move onto the object's free subspace."""
        dirs = self.locked.get(mask_id)
        if not dirs:
            return delta
        basis = np.linalg.qr(np.stack(dirs, axis=1))[0][:, : len(dirs)]
        return delta - basis @ (basis.T @ delta)


def local_refine(
    placements: dict[int, PlacedObject],
    graph: SceneGraph,
    room: RoomFrame,
    config: RefineConfig | None = None,
) -> None:
    """Snap rotations upright and square to walls; hang ceiling objects.

    The upright snap is the smallest rotation taking the object's up
    axis onto +z.  An object with a wall contact additionally gets its
    yaw turned by up to ``wall_yaw_snap`` so one horizontal axis runs
    along the wall normal.  Mutates placements in place.
    """
    config = config or RefineConfig()
    for mask_id in sorted(placements):
        obj = placements[mask_id]
        obj.rotation = align_rotation(obj.rotation[:, 2], UP) @ obj.rotation

        wall_idx = graph.wall_of(mask_id)
        if wall_idx is not None and wall_idx < len(room.walls):
            normal = room.walls[wall_idx].n
            best = None
            for axis in (obj.rotation[:, 0], obj.rotation[:, 1]):
                for sign in (1.0, -1.0):
                    v = sign * axis
                    delta = math.atan2(float(np.cross(v, normal)[2]),
                                       float(v @ normal))
                    if best is None or abs(delta) < abs(best):
                        best = delta
            if best is not None and abs(best) <= config.wall_yaw_snap:
                obj.rotation = rot_z(best) @ obj.rotation

        if mask_id in graph.ceiling and room.ceiling is not None:
            _, top = obj.box().interval(UP)
            obj.translation[2] += room.ceiling_height() - top


def place_internal(
    child: PlacedObject,
    parent: PlacedObject,
    d_vertical: float,
    margin: float = 0.05,
) -> int:
    """Put a contained child into the parent subspace at its height.

    Subspaces are ranked by the height fraction of their center within
    the parent (ties toward the lower index).  The child is centered in
    the chosen bay and uniformly shrunk if its bounding box does not
    fit with ``margin`` clearance.  Returns the subspace index.

    Raises:
        NoSubspaceError: the parent asset declares no subspaces.
    """
    subs = parent.asset.subspaces
    if not subs:
        raise NoSubspaceError(
            f"asset {parent.asset.asset_id} has no subspace for mask "
            f"{child.mask_id}"
        )
    parent_ext = np.asarray(parent.asset.extents, dtype=float)
    best = 0
    best_gap = math.inf
    for index, sub in enumerate(subs):
        fraction = (float(sub["center"][2]) + parent_ext[2] / 2.0) / parent_ext[2]
        gap = abs(fraction - d_vertical)
        if gap < best_gap:
            best, best_gap = index, gap
    sub = subs[best]

    bay_half = np.asarray(sub["half_extents"], dtype=float) * parent.scale
    relative = parent.rotation.T @ child.rotation
    child_half = child.scale * np.asarray(child.asset.extents) / 2.0
    aabb_half = np.abs(relative) @ child_half
    with np.errstate(divide="ignore"):
        factors = np.where(aabb_half > 0,
                           (1.0 - margin) * bay_half / aabb_half, np.inf)
    factor = float(factors.min())
    if factor < 1.0:
        child.scale = child.scale * factor

    center = np.asarray(sub["center"], dtype=float) * parent.scale
    child.translation = parent.translation + parent.rotation @ center
    return best


def apply_hard_constraints(
    placements: dict[int, PlacedObject],
    graph: SceneGraph,
    room: RoomFrame,
    config: RefineConfig | None = None,
) -> OptState:
    """Enforce support, containment, wall, and ceiling contacts exactly.

    Floor roots and contact children get their bottom faces placed on
    the support surface and their height frozen; contained children are
    centered in a parent subspace and fully frozen; wall contacts are
    pushed flush and frozen along the wall normal; ceiling objects hang
    from the ceiling plane.  Translations before any correction become
    the anchors the annealer is pulled toward.
    """
    config = config or RefineConfig()
    state = OptState(
        placements=placements,
        anchors={i: placements[i].translation.copy() for i in placements},
    )

    def lock(mask_id: int, direction: np.ndarray) -> None:
        direction = np.asarray(direction, dtype=float)
        dirs = state.locked.setdefault(mask_id, [])
        # A repeated direction would make the QR projection rank-deficient.
        if all(abs(direction @ d) < 1.0 - 1e-9 for d in dirs):
            dirs.append(direction)

    for node in graph.topo_order():
        if node not in placements:
            continue
        obj = placements[node]
        parent = graph.parent[node]
        if parent == FLOOR_ID:
            bottom, _ = obj.box().interval(UP)
            obj.translation[2] += room.floor_height() - bottom
            lock(node, UP)
        elif graph.d_vertical.get(node, 0.0) == 0.0:
            _, parent_top = placements[parent].box().interval(UP)
            bottom, _ = obj.box().interval(UP)
            obj.translation[2] += parent_top - bottom
            lock(node, UP)
        else:
            try:
                place_internal(obj, placements[parent],
                               graph.d_vertical[node], config.margin)
            except NoSubspaceError as exc:
                state.warnings.append(str(exc))
                parent_box = placements[parent].box()
                p_bottom, p_top = parent_box.interval(UP)
                target = p_bottom + graph.d_vertical[node] * (p_top - p_bottom)
                obj.translation[2] += target - obj.box().center @ UP
            for axis in np.eye(3):
                lock(node, axis)

    for node in sorted(graph.ceiling):
        if node not in placements:
            continue
        obj = placements[node]
        if room.ceiling is None:
            state.warnings.append(
                f"mask {node}: ceiling support without a ceiling plane"
            )
            continue
        _, top = obj.box().interval(UP)
        obj.translation[2] += room.ceiling_height() - top
        lock(node, UP)

    for mask_id, wall_idx in graph.wall_edges:
        if mask_id not in placements:
            continue
        if wall_idx >= len(room.walls):
            state.warnings.append(
                f"mask {mask_id}: wall contact with unknown wall {wall_idx}"
            )
            continue
        obj = placements[mask_id]
        wall = room.walls[wall_idx]
        box = obj.box()
        signed = float(box.center @ wall.n) - wall.d
        correction = box.support(wall.n) - signed
        if abs(correction) > config.wall_warn:
            state.warnings.append(
                f"mask {mask_id}: wall contact moved object "
                f"{abs(correction):.2f} m"
            )
        obj.translation += correction * wall.n
        lock(mask_id, wall.n)
    return state


# --- silhouette objective ----------------------------------------------------


def silhouette(
    obj: PlacedObject,
    view: ViewModel,
    cell: float,
    splat: int = 1,
) -> np.ndarray:
    """Render the object's voxel centers into a boolean image mask.

    Each projected center stamps a (2*splat+1)^2 pixel block, closing
    the gaps an isolated-point projection would leave.
    """
    grid = obj.voxel_grid(cell)
    centers = grid.occupied_centers() * obj.scale
    world = centers @ obj.rotation.T + obj.translation
    pix, valid = view.project(world)
    canvas = np.zeros((view.camera.height, view.camera.width), dtype=bool)
    if not valid.any():
        return canvas
    uv = np.rint(pix[valid]).astype(np.int64)
    for du in range(-splat, splat + 1):
        for dv in range(-splat, splat + 1):
            u = uv[:, 0] + du
            v = uv[:, 1] + dv
            keep = (u >= 0) & (u < view.camera.width) & \
                   (v >= 0) & (v < view.camera.height)
            canvas[v[keep], u[keep]] = True
    return canvas


def _mask_term(
    obj: PlacedObject,
    mask: np.ndarray | None,
    view: ViewModel,
    cell: float,
) -> float:
    if mask is None:
        return 0.0
    rendered = silhouette(obj, view, cell)
    union = int(np.logical_or(rendered, mask).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(rendered, mask).sum())
    return (union - inter) / union


def objective(
    state: OptState,
    masks: dict[int, np.ndarray],
    view: ViewModel,
    config: RefineConfig | None = None,
) -> float:
    """Anneal energy: silhouette disagreement plus anchor drift.

    Per object, the normalized symmetric difference between its
    rendered silhouette and its observed mask, plus
    ``anchor_weight * |t - anchor|^2``.
    """
    config = config or RefineConfig()
    total = 0.0
    for mask_id in sorted(state.placements):
        obj = state.placements[mask_id]
        total += _mask_term(obj, masks.get(mask_id), view, config.cell)
        drift = obj.translation - state.anchors[mask_id]
        total += config.anchor_weight * float(drift @ drift)
    return total


def anneal_translations(
    state: OptState,
    masks: dict[int, np.ndarray],
    view: ViewModel,
    config: RefineConfig | None = None,
    seed: int = 0,
) -> float:
    """Simulated annealing over free translation components.

    One object moves per step; a move that raises that object's count
    of strictly penetrating box pairs is rejected outright, otherwise
    standard Metropolis acceptance applies with geometric cooling.  The
    best placements seen are restored at the end; returns their energy.
    """
    config = config or RefineConfig()
    rng = np.random.default_rng(seed)
    order = sorted(state.placements)
    movable = [i for i in order if len(state.locked.get(i, [])) < 3]
    if not movable:
        state.objective = objective(state, masks, view, config)
        return state.objective

    boxes = {i: state.placements[i].box() for i in order}
    mask_terms = {
        i: _mask_term(state.placements[i], masks.get(i), view, config.cell)
        for i in order
    }
    anchor_terms = {}
    for i in order:
        drift = state.placements[i].translation - state.anchors[i]
        anchor_terms[i] = config.anchor_weight * float(drift @ drift)
    total = sum(mask_terms.values()) + sum(anchor_terms.values())

    best_total = total
    best_pos = {i: state.placements[i].translation.copy() for i in movable}
    temperature = config.t0

    def overlap_count(mask_id: int, box: Obb) -> int:
        count = 0
        for other in order:
            if other != mask_id and boxes_overlap(box, boxes[other],
                                                  margin=-1e-9):
                count += 1
        return count

    for step in range(config.iterations):
        mask_id = movable[int(rng.integers(len(movable)))]
        obj = state.placements[mask_id]
        delta = state.free_delta(mask_id, rng.normal(0.0, config.step, 3))
        accepted = False
        if float(delta @ delta) > 1e-24:
            candidate = obj.translation + delta
            new_box = Obb(center=candidate, axes=obj.rotation.copy(),
                          half_extents=boxes[mask_id].half_extents.copy())
            if overlap_count(mask_id, new_box) <= \
                    overlap_count(mask_id, boxes[mask_id]):
                saved = obj.translation
                obj.translation = candidate
                new_mask = _mask_term(obj, masks.get(mask_id), view, config.cell)
                drift = candidate - state.anchors[mask_id]
                new_anchor = config.anchor_weight * float(drift @ drift)
                gain = (new_mask + new_anchor) - \
                       (mask_terms[mask_id] + anchor_terms[mask_id])
                accepted = gain <= 0.0 or \
                    rng.random() < math.exp(-gain / temperature)
                if accepted:
                    boxes[mask_id] = new_box
                    mask_terms[mask_id] = new_mask
                    anchor_terms[mask_id] = new_anchor
                    total += gain
                    if total < best_total - 1e-15:
                        best_total = total
                        best_pos = {i: state.placements[i].translation.copy()
                                    for i in movable}
                else:
                    obj.translation = saved
        state.trace.append(TraceEntry(
            iteration=step,
            temperature=temperature,
            mask_id=mask_id,
            delta=(float(delta[0]), float(delta[1]), float(delta[2])),
            accepted=accepted,
            objective=total,
        ))
        temperature *= config.cooling

    for i in movable:
        state.placements[i].translation = best_pos[i]
    state.objective = best_total
    return best_total


def settle(
    state: OptState,
    graph: SceneGraph,
    config: RefineConfig | None = None,
) -> None:
    """Drop each tree object onto its support's voxel surface.

    Runs root to leaf so every parent rests before its children land on
    it.  Floor roots drop until their lowest voxel layer sits on the
    floor; contact children drop until some voxel column meets the
    parent's top (penetration pushes them back up).  Contained children
    and ceiling objects are left where their constraints put them.
    """
    config = config or RefineConfig()

    def cells_of(mask_id: int) -> np.ndarray:
        obj = state.placements[mask_id]
        return world_cells(obj.voxel_grid(config.cell), obj.rotation,
                           obj.translation, obj.scale, config.cell)

    for node in graph.topo_order():
        if node not in state.placements:
            continue
        parent = graph.parent[node]
        if parent == FLOOR_ID:
            cells = cells_of(node)
            if cells.size == 0:
                continue
            state.placements[node].translation[2] -= \
                float(cells[:, 2].min()) * config.cell
        elif graph.d_vertical.get(node, 0.0) == 0.0:
            if parent not in state.placements:
                continue
            child_cells = cells_of(node)
            parent_cells = cells_of(parent)
            if child_cells.size == 0 or parent_cells.size == 0:
                continue
            tops: dict[tuple[int, int], int] = {}
            for x, y, z in parent_cells:
                key = (int(x), int(y))
                if key not in tops or z > tops[key]:
                    tops[key] = int(z)
            drop = None
            for x, y, z in child_cells:
                top = tops.get((int(x), int(y)))
                if top is None:
                    continue
                gap = int(z) - (top + 1)
                if drop is None or gap < drop:
                    drop = gap
            if drop is None:
                state.warnings.append(
                    f"mask {node}: no voxel column overlaps its support"
                )
                continue
            state.placements[node].translation[2] -= drop * config.cell


def write_trace(path: str | Path, trace: list[TraceEntry]) -> None:
    """Dump an annealing trace as CSV for schedule debugging."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["iteration", "temperature", "proposal", "accepted", "objective"]
        )
        for entry in trace:
            proposal = "%d;%.9g;%.9g;%.9g" % (entry.mask_id, *entry.delta)
            writer.writerow([
                entry.iteration,
                repr(entry.temperature),
                proposal,
                int(entry.accepted),
                repr(entry.objective),
            ])

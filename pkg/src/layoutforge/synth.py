"""Synthetic room bundles with exact ground truth.

Scenes are fair consumer tests rather than fixtures: depth comes from
analytic ray casting against the true geometry, masks are the rendered
instance ids, and each query feature is a copy of the template feature
whose view rotation sits nearest the object's orientation in the
camera frame.  A fixed seed reproduces every output file byte for
byte.

A scene always holds a table with a small box on top and a cabinet
flush against a side wall; remaining object slots are filled with
floor crates, boxes stacked on crates, a second box on the table, one
item shelved inside the cabinet, and one ceiling lamp.  The cabinet
renders as an open-front shell so the shelved item is actually
visible.  The camera sits near the front wall, turned toward the
cabinet so its wall gathers enough depth samples for plane fitting.

Candidate layouts are rejected until every object passes a fitted-box
fidelity check against its rendered cloud, which subsumes the
visibility conditions reconstruction relies on (full silhouette,
contact line in view, wall flush in view).  After the attempt budget
the object count is reduced with a warning, mirroring how a cluttered
request degrades rather than fails.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LayoutForgeError
from .geometry import (
    Obb,
    Plane,
    RoomFrame,
    depth_to_pointcloud,
    fit_obb,
    geodesic_angle,
    rot_z,
    set_distance,
)
from .ingest.bundle import save_bundle, save_layout, write_json
from .ingest.rle import tight_bbox
from .ingest.types import (
    TEMPLATE_VIEW_COUNT,
    THUMBNAIL_VIEW_COUNT,
    Asset,
    AssetManifest,
    CameraIntrinsics,
    LayoutObject,
    Mask,
    OracleRecord,
    TemplateView,
)
from .pose import template_view_rotations
from .scenegraph import FLOOR_ID, SceneGraph
from .voxels import VoxelGrid, carve_box, voxelize_box

log = logging.getLogger(__name__)

FEATURE_DIM = 16
TEMPLATE_GRID = (6, 6)
VOXEL_CELL = 0.05
MIN_CLEARANCE = 0.12  # between any two boxes not meant to touch
WALL_CLEARANCE = 0.30  # free-standing objects keep off the walls
MAX_OBJECTS = 40

_ATTEMPTS_PER_COUNT = 1000
_SHELL = 0.06  # cabinet wall thickness
_MIN_MASK_PIXELS = 90
_MIN_FLOOR_PIXELS = 5800
_MIN_WALL_PIXELS = 790
_MIN_CEILING_PIXELS = 900
_FIT_EPS = 0.02

UP = np.array([0.0, 0.0, 1.0])


def _grid_yaw(rng: np.random.Generator) -> float:
    """Object yaw from a fine uniform grid.

    162 steps never land on a 90-degree multiple (other than step
    zero), so sampled objects stay generically oriented.
    """
    step = 2.0 * math.pi / TEMPLATE_VIEW_COUNT
    return float(rng.integers(TEMPLATE_VIEW_COUNT)) * step


def default_camera() -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=142.5, fy=142.5, cx=120.0, cy=90.0, width=240, height=180
    )


@dataclass
class _Prop:
    """One object staged for rendering, world frame, unit scale."""

    mask_id: int
    category: str
    extents: np.ndarray
    yaw: float
    center: np.ndarray
    kind: str = "solid"  # solid | cabinet
    bays: list[dict] = field(default_factory=list)  # canonical subspaces
    parent_id: int | None = None  # supporting mask id, None = floor/ceiling
    support: str = "floor"  # floor | contact | containment | ceiling
    d_vertical: float = 0.0

    @property
    def asset_id(self) -> str:
        return f"{self.category}_{self.mask_id:02d}"

    def box(self) -> Obb:
        return Obb(self.center, rot_z(self.yaw), self.extents / 2.0)

    def render_boxes(self) -> list[Obb]:
        if self.kind != "cabinet":
            return [self.box()]
        rot = rot_z(self.yaw)
        dx, wy, h = self.extents
        t = _SHELL
        slabs = [
            ((-dx / 2 + t / 2, 0.0, 0.0), (t / 2, wy / 2, h / 2)),  # back
            ((0.0, -wy / 2 + t / 2, 0.0), (dx / 2, t / 2, h / 2)),  # left
            ((0.0, wy / 2 - t / 2, 0.0), (dx / 2, t / 2, h / 2)),  # right
            ((0.0, 0.0, -h / 2 + t / 2), (dx / 2, wy / 2, t / 2)),  # bottom
            ((0.0, 0.0, h / 2 - t / 2), (dx / 2, wy / 2, t / 2)),  # top
            ((0.0, 0.0, 0.0), (dx / 2, wy / 2, t / 2)),  # middle shelf
        ]
        return [
            Obb(self.center + rot @ np.asarray(c), rot, np.asarray(half))
            for c, half in slabs
        ]


def _cabinet_bays(extents: np.ndarray) -> list[dict]:
    """Two open bays, below and above the middle shelf, canonical frame."""
    dx, wy, h = extents
    t = _SHELL
    half = np.array([(dx - t) / 2.0, wy / 2.0 - t, (h - 3.0 * t) / 4.0])
    z = (h - t) / 4.0
    return [
        {"center": [t / 2.0, 0.0, -z], "half_extents": [float(v) for v in half]},
        {"center": [t / 2.0, 0.0, z], "half_extents": [float(v) for v in half]},
    ]


@dataclass
class _Draft:
    room_size: np.ndarray  # W, D, H
    camera_position: np.ndarray
    camera_rotation: np.ndarray  # columns are camera axes in world
    props: list[_Prop]
    wall_contact: tuple[int, int]  # mask id, world wall index


@dataclass
class GeneratedScene:
    """Handle to one synthesized bundle plus its ground truth."""

    path: Path
    seed: int
    room: RoomFrame  # world frame, floor at z = 0
    room_size: tuple[float, float, float]
    camera: CameraIntrinsics
    camera_rotation: np.ndarray
    camera_position: np.ndarray
    layout: list[LayoutObject]
    graph: SceneGraph
    boxes: dict[int, Obb] = field(default_factory=dict)
    # Boxes as rendered: solid objects map to [box()], the cabinet to
    # its wall and shelf slabs.
    render_boxes: dict[int, list[Obb]] = field(default_factory=dict)


def _look_rotation(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation looking from position at target, y down."""
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, UP)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def _render(
    camera: CameraIntrinsics,
    rotation: np.ndarray,
    position: np.ndarray,
    room_size: np.ndarray,
    boxes: dict[int, list[Obb]],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray-cast the room shell and object boxes.

    Returns (depth, instance, surface).  Depth is the camera-frame z of
    the nearest hit.  Instance holds the mask id, 0 on the room shell.
    Surface codes shell pixels as 2 * axis + upper, so the floor is 4
    and the ceiling 5; object pixels carry -1.
    """
    w, h = camera.width, camera.height
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dirs_cam = np.stack(
        [(us - camera.cx) / camera.fx, (vs - camera.cy) / camera.fy, np.ones_like(us)],
        axis=-1,
    ).reshape(-1, 3)
    dirs = dirs_cam @ rotation.T
    n = dirs.shape[0]

    t_best = np.full(n, np.inf)
    surface = np.full(n, -1, dtype=np.int64)
    for axis in range(3):
        d = dirs[:, axis]
        for upper, bound in ((0, 0.0), (1, float(room_size[axis]))):
            heads_there = d > 1e-12 if upper else d < -1e-12
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(heads_there, (bound - position[axis]) / d, np.inf)
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            surface = np.where(closer, 2 * axis + upper, surface)

    instance = np.zeros(n, dtype=np.int64)
    for mask_id in sorted(boxes):
        for box in boxes[mask_id]:
            local_o = box.axes.T @ (position - box.center)
            local_d = dirs @ box.axes
            t_near = np.full(n, -np.inf)
            t_far = np.full(n, np.inf)
            miss = np.zeros(n, dtype=bool)
            for axis in range(3):
                d = local_d[:, axis]
                parallel = np.abs(d) < 1e-12
                with np.errstate(divide="ignore", invalid="ignore"):
                    t1 = (-box.half_extents[axis] - local_o[axis]) / d
                    t2 = (box.half_extents[axis] - local_o[axis]) / d
                t_near = np.where(
                    parallel, t_near, np.maximum(t_near, np.minimum(t1, t2))
                )
                t_far = np.where(parallel, t_far, np.minimum(t_far, np.maximum(t1, t2)))
                miss |= parallel & (np.abs(local_o[axis]) > box.half_extents[axis])
            hit = ~miss & (t_near <= t_far) & (t_near > 1e-9) & (t_near < t_best)
            t_best = np.where(hit, t_near, t_best)
            instance = np.where(hit, mask_id, instance)
            surface = np.where(hit, -1, surface)

    return t_best.reshape(h, w), instance.reshape(h, w), surface.reshape(h, w)


def _footprint_in_bounds(box: Obb, room_size: np.ndarray, clearance: float) -> bool:
    verts = box.vertices()
    return bool(
        np.all(verts[:, 0] >= clearance)
        and np.all(verts[:, 0] <= room_size[0] - clearance)
        and np.all(verts[:, 1] >= clearance)
        and np.all(verts[:, 1] <= room_size[1] - clearance)
    )


def _plan(rng: np.random.Generator, count: int) -> list[str]:
    """Object roles for one scene, placement order, table group first.

    A ceiling lamp only joins small scenes: those keep the low tilted
    camera that can actually see the ceiling, while crowded scenes use
    a high camera that must look down to keep every object in view.
    """
    tags = ["table", "tablebox", "cabinet"]
    lamp = shelf = False
    crates = crate_boxes = 0
    table_boxes = 1
    while len(tags) < count:
        roll = float(rng.random())
        if not shelf and roll < 0.30:
            tags.append("shelfbox")
            shelf = True
        elif not lamp and count <= 7 and roll < 0.55:
            tags.append("lamp")
            lamp = True
        elif crates > crate_boxes and roll < 0.70:
            tags.append("cratebox")
            crate_boxes += 1
        elif table_boxes < 2 and roll < 0.80:
            tags.append("tablebox")
            table_boxes += 1
        else:
            tags.append("crate")
            crates += 1
    return tags


def _place_on(
    rng: np.random.Generator, parent: _Prop, extents: np.ndarray
) -> np.ndarray | None:
    """Center for a child standing on the parent's top face, or None."""
    radius = math.hypot(extents[0], extents[1]) / 2.0
    slack = parent.extents[:2] / 2.0 - radius - 0.05
    if np.any(slack <= 0.0):
        return None
    offset = rng.uniform(-slack, slack)
    center = parent.center + rot_z(parent.yaw) @ np.array([offset[0], offset[1], 0.0])
    center[2] = parent.center[2] + parent.extents[2] / 2.0 + extents[2] / 2.0
    return center


def _clears(prop: _Prop, props: list[_Prop]) -> bool:
    """True when the prop keeps MIN_CLEARANCE from every non-touching box."""
    box = prop.box()
    for other in props:
        if prop.parent_id == other.mask_id or other.parent_id == prop.mask_id:
            continue
        if set_distance(box, other.box()) < MIN_CLEARANCE:
            return False
    return True


def _draft_scene(rng: np.random.Generator, plan: list[str]) -> _Draft | None:
    """Sample one candidate layout; None when a geometric check fails.

    Props are placed in plan order, each with a handful of local
    position retries against the boxes already down; a prop that still
    collides fails the whole draft.
    """
    # Crowded requests get proportionally more floor to stand on.
    grow = 0.15 * max(0, len(plan) - 5)
    room_size = np.array(
        [
            rng.uniform(4.2, 7.0) + grow,
            rng.uniform(4.6, 7.8) + grow,
            rng.uniform(2.6, 3.2),
        ]
    )
    w, d, h = room_size
    side = int(rng.integers(2))  # 0: cabinet on x=0, 1: on x=w
    has_lamp = "lamp" in plan

    # Camera near the front wall, turned toward the cabinet's wall so
    # that wall collects enough samples for plane fitting.  Lamp scenes
    # keep it low with an upward tilt that reaches the ceiling; all
    # others ride high and look down so object tops stay well sampled.
    if side == 0:
        cam_x, target_x = w * rng.uniform(0.58, 0.70), w * rng.uniform(0.30, 0.44)
    else:
        cam_x, target_x = w * rng.uniform(0.30, 0.42), w * rng.uniform(0.56, 0.70)
    cam_y = rng.uniform(0.28, 0.50)
    if has_lamp:
        cam_z = rng.uniform(1.45, 1.70)
        target_z = rng.uniform(0.55, 0.85)
    else:
        cam_z = rng.uniform(2.05, 2.45)
        target_z = rng.uniform(0.1, 0.4)
    position = np.array([cam_x, cam_y, cam_z])
    target = np.array([target_x, cam_y + rng.uniform(2.0, 3.4), target_z])
    rotation = _look_rotation(position, target)
    forward = target[:2] - position[:2]
    forward = forward / np.linalg.norm(forward)

    def floor_spot(near: float, far: float) -> np.ndarray:
        # Sample inside the viewed ground sector; far room corners
        # would only collect objects the camera cannot vet.
        ang = rng.uniform(-0.6, 0.6)
        c, s = math.cos(ang), math.sin(ang)
        direction = np.array(
            [c * forward[0] - s * forward[1], s * forward[0] + c * forward[1]]
        )
        return position[:2] + direction * rng.uniform(near, far)

    props: list[_Prop] = []
    table: _Prop | None = None
    cabinet: _Prop | None = None
    crates: list[_Prop] = []
    retries = 20 + 2 * len(plan)
    # Crowded floors pack random sequential placement past its limit
    # unless the fillers slim down and spread farther out.
    if len(plan) < 10:
        crate_hi, crate_far = 0.75, 5.2
    elif len(plan) < 13:
        crate_hi, crate_far = 0.62, 5.3
    else:
        crate_hi, crate_far = 0.56, 5.5

    for mask_id, tag in enumerate(plan, start=1):
        placed: _Prop | None = None
        if tag == "table":
            extents = np.array(
                [rng.uniform(0.9, 1.4), rng.uniform(0.7, 1.1), rng.uniform(0.55, 0.75)]
            )
            yaw = _grid_yaw(rng)
            for _ in range(retries):
                spot = floor_spot(1.7, 3.4)
                cand = _Prop(
                    mask_id=mask_id,
                    category="table",
                    extents=extents,
                    yaw=yaw,
                    center=np.array([spot[0], spot[1], extents[2] / 2.0]),
                )
                if _footprint_in_bounds(
                    cand.box(), room_size, WALL_CLEARANCE
                ) and _clears(cand, props):
                    placed = table = cand
                    break
        elif tag == "cabinet":
            extents = np.array(
                [rng.uniform(0.38, 0.52), rng.uniform(0.9, 1.4), rng.uniform(0.95, 1.25)]
            )
            cab_x = extents[0] / 2.0 if side == 0 else w - extents[0] / 2.0
            for _ in range(retries):
                cand = _Prop(
                    mask_id=mask_id,
                    category="cabinet",
                    extents=extents,
                    yaw=0.0 if side == 0 else math.pi,
                    center=np.array(
                        [cab_x, d * rng.uniform(0.38, 0.70), extents[2] / 2.0]
                    ),
                    kind="cabinet",
                    bays=_cabinet_bays(extents),
                )
                verts = cand.box().vertices()
                if (
                    np.all(verts[:, 1] >= WALL_CLEARANCE)
                    and np.all(verts[:, 1] <= d - WALL_CLEARANCE)
                    and np.linalg.norm(cand.center[:2] - position[:2]) <= 5.2
                    and _clears(cand, props)
                ):
                    placed = cabinet = cand
                    break
        elif tag in ("tablebox", "cratebox"):
            parent = table if tag == "tablebox" else crates[int(rng.integers(len(crates)))]
            yaw = _grid_yaw(rng)
            for _ in range(retries):
                extents = np.array(
                    [
                        rng.uniform(0.18, 0.32),
                        rng.uniform(0.18, 0.32),
                        rng.uniform(0.18, 0.30),
                    ]
                )
                center = _place_on(rng, parent, extents)
                if center is None:
                    continue  # this draw does not fit the parent top
                cand = _Prop(
                    mask_id=mask_id,
                    category="box",
                    extents=extents,
                    yaw=yaw,
                    center=center,
                    parent_id=parent.mask_id,
                    support="contact",
                )
                if _clears(cand, props):
                    placed = cand
                    break
        elif tag == "crate":
            yaw = _grid_yaw(rng)
            for _ in range(retries):
                extents = np.array(
                    [
                        rng.uniform(0.42, crate_hi),
                        rng.uniform(0.42, crate_hi),
                        rng.uniform(0.35, 0.6),
                    ]
                )
                spot = floor_spot(1.7, crate_far)
                cand = _Prop(
                    mask_id=mask_id,
                    category="crate",
                    extents=extents,
                    yaw=yaw,
                    center=np.array([spot[0], spot[1], extents[2] / 2.0]),
                )
                if _footprint_in_bounds(
                    cand.box(), room_size, WALL_CLEARANCE
                ) and _clears(cand, props):
                    placed = cand
                    crates.append(cand)
                    break
        elif tag == "shelfbox":
            bay = cabinet.bays[1]  # upper bay reads best from a standing camera
            bay_half = np.asarray(bay["half_extents"])
            half = bay_half * np.array(
                [rng.uniform(0.45, 0.65), rng.uniform(0.45, 0.65), rng.uniform(0.6, 0.8)]
            )
            center = cabinet.center + rot_z(cabinet.yaw) @ np.asarray(bay["center"])
            cab_bottom = cabinet.center[2] - cabinet.extents[2] / 2.0
            placed = _Prop(
                mask_id=mask_id,
                category="box",
                extents=2.0 * half,
                yaw=cabinet.yaw,
                center=center,
                parent_id=cabinet.mask_id,
                support="containment",
                d_vertical=(center[2] - cab_bottom) / cabinet.extents[2],
            )
        elif tag == "lamp":
            extents = np.array(
                [rng.uniform(0.25, 0.45), rng.uniform(0.25, 0.45), rng.uniform(0.3, 0.5)]
            )
            yaw = _grid_yaw(rng)
            for _ in range(retries):
                cand = _Prop(
                    mask_id=mask_id,
                    category="lamp",
                    extents=extents,
                    yaw=yaw,
                    center=np.array(
                        [
                            w * rng.uniform(0.38, 0.62),
                            d * rng.uniform(0.45, 0.70),
                            h - extents[2] / 2.0,
                        ]
                    ),
                    support="ceiling",
                )
                if _footprint_in_bounds(cand.box(), room_size, WALL_CLEARANCE):
                    placed = cand
                    break
        else:  # pragma: no cover - plan only emits known tags
            raise LayoutForgeError(f"unknown plan tag {tag!r}")

        if placed is None:
            return None
        props.append(placed)

    return _Draft(
        room_size=room_size,
        camera_position=position,
        camera_rotation=rotation,
        props=props,
        wall_contact=(cabinet.mask_id, side),
    )


def _fraction_of(box: Obb, parent: Obb) -> float:
    lo = parent.center[2] - parent.half_extents[2]
    return float((box.center[2] - lo) / (2.0 * parent.half_extents[2]))


def _render_valid(
    draft: _Draft, camera: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray] | None:
    """Render a draft and vet it; returns (depth, instance) or None.

    The decisive test refits a box to each rendered object cloud and
    demands mutual containment with the true box; shelved items, whose
    clouds are partial by design, must instead refit inside the cabinet
    and closest to the bay they actually occupy.  That only holds when
    the silhouettes downstream box fitting depends on are in view.
    """
    render_boxes = {p.mask_id: p.render_boxes() for p in draft.props}
    depth, instance, surface = _render(
        camera, draft.camera_rotation, draft.camera_position, draft.room_size, render_boxes
    )
    if not np.all(np.isfinite(depth)):
        return None

    floor_pixels = int(np.count_nonzero(surface == 4))
    if floor_pixels < _MIN_FLOOR_PIXELS:
        return None
    for code in (0, 1, 2, 3, 5):
        if floor_pixels < 1.1 * int(np.count_nonzero(surface == code)):
            return None
    if np.count_nonzero(surface == draft.wall_contact[1]) < _MIN_WALL_PIXELS:
        return None
    if any(p.support == "ceiling" for p in draft.props):
        if np.count_nonzero(surface == 5) < _MIN_CEILING_PIXELS:
            return None

    props = {p.mask_id: p for p in draft.props}
    for prop in draft.props:
        pixels = instance == prop.mask_id
        if int(pixels.sum()) < _MIN_MASK_PIXELS:
            return None
        cloud_cam = depth_to_pointcloud(depth, camera, mask=pixels)
        cloud = cloud_cam @ draft.camera_rotation.T + draft.camera_position
        fitted = fit_obb(cloud, up=UP)
        true_box = prop.box()
        if prop.support == "containment":
            cabinet = props[prop.parent_id]
            outer = cabinet.box()
            if not bool(outer.contains(fitted.vertices(), eps=0.01).all()):
                return None
            frac = _fraction_of(fitted, outer)
            fractions = [
                (b["center"][2] + cabinet.extents[2] / 2.0) / cabinet.extents[2]
                for b in cabinet.bays
            ]
            best = min(range(len(fractions)), key=lambda i: abs(fractions[i] - frac))
            if best != 1:  # must resolve to the occupied upper bay
                return None
        else:
            # A pixel spans about range/fx meters of surface, more on
            # slanted faces, so box corners can go unsampled by that
            # much at distance: the completeness direction loosens with
            # range.  Outward growth stays tight; downstream clearances
            # depend on it.
            reach = _FIT_EPS + 3.0 * float(depth[pixels].max()) / camera.fx
            if not bool(true_box.contains(fitted.vertices(), eps=_FIT_EPS).all()):
                return None
            if not bool(fitted.contains(true_box.vertices(), eps=reach).all()):
                return None

    return depth, instance


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vecs = rng.normal(size=(count, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def _asset_voxel(prop: _Prop) -> VoxelGrid:
    grid = voxelize_box(prop.extents, VOXEL_CELL)
    for bay in prop.bays:
        center = np.asarray(bay["center"])
        half = np.asarray(bay["half_extents"])
        carve_box(grid, center - half, center + half)
    return grid


def _build_library(
    rng: np.random.Generator, props: list[_Prop], camera_rotation: np.ndarray
) -> tuple[AssetManifest, dict[str, np.ndarray]]:
    """Planted asset per prop, two thumbnail-only decoys per category."""
    view_rots = template_view_rotations()
    assets: dict[str, Asset] = {}
    features: dict[str, np.ndarray] = {}

    for prop in props:
        rows, cols = TEMPLATE_GRID
        grids = _unit_rows(rng, TEMPLATE_VIEW_COUNT * rows * cols, FEATURE_DIM)
        grids = grids.reshape(TEMPLATE_VIEW_COUNT, rows, cols, FEATURE_DIM)
        views = []
        for k in range(TEMPLATE_VIEW_COUNT):
            name = f"tmpl_{prop.asset_id}_{k}.bin"
            features[name] = grids[k]
            views.append(TemplateView(rotation=view_rots[k], feature=name))
        thumb = _unit_rows(rng, 1, FEATURE_DIM).reshape(1, 1, FEATURE_DIM)
        thumb_names = []
        for k in range(THUMBNAIL_VIEW_COUNT):
            name = f"thumb_{prop.asset_id}_{k}.bin"
            features[name] = thumb
            thumb_names.append(name)
        assets[prop.asset_id] = Asset(
            asset_id=prop.asset_id,
            category=prop.category,
            extents=prop.extents.copy(),
            scale_mode="fully_free",
            subspaces=[dict(b) for b in prop.bays],
            voxel=_asset_voxel(prop),
            template_views=views,
            thumbnail_views=thumb_names,
        )
        # The query features are verbatim copies of the template whose
        # stored rotation lies nearest the object's orientation in the
        # camera frame, so retrieval and matching are exact on
        # noiseless bundles.
        in_camera = camera_rotation.T @ rot_z(prop.yaw)
        planted = min(
            range(TEMPLATE_VIEW_COUNT),
            key=lambda k: geodesic_angle(view_rots[k], in_camera),
        )
        features[f"query_{prop.mask_id}.bin"] = grids[planted]
        features[f"qthumb_{prop.mask_id}.bin"] = thumb

    seen: set[str] = set()
    for prop in props:
        if prop.category in seen:
            continue
        seen.add(prop.category)
        for j, factor in enumerate((1.35, 0.75)):
            decoy_id = f"{prop.category}_x{j}"
            thumb = _unit_rows(rng, 1, FEATURE_DIM).reshape(1, 1, FEATURE_DIM)
            thumb_names = []
            for k in range(THUMBNAIL_VIEW_COUNT):
                name = f"thumb_{decoy_id}_{k}.bin"
                features[name] = thumb
                thumb_names.append(name)
            assets[decoy_id] = Asset(
                asset_id=decoy_id,
                category=prop.category,
                extents=prop.extents * factor,
                scale_mode="fully_free",
                voxel=voxelize_box(prop.extents * factor, VOXEL_CELL),
                thumbnail_views=thumb_names,
            )

    categories = {p.category: p.category for p in props}
    return AssetManifest(assets=assets, categories=categories), features


def _world_room(room_size: np.ndarray) -> RoomFrame:
    w, d, h = (float(v) for v in room_size)
    return RoomFrame(
        floor=Plane(np.array([0.0, 0.0, 1.0]), 0.0),
        walls=[
            Plane(np.array([1.0, 0.0, 0.0]), 0.0),
            Plane(np.array([-1.0, 0.0, 0.0]), -w),
            Plane(np.array([0.0, 1.0, 0.0]), 0.0),
            Plane(np.array([0.0, -1.0, 0.0]), -d),
        ],
        ceiling=Plane(np.array([0.0, 0.0, -1.0]), -h),
    )


def generate_scene(
    path: str | Path,
    seed: int,
    objects: int | None = None,
    depth_noise: float = 0.0,
    camera: CameraIntrinsics | None = None,
) -> GeneratedScene:
    """Write one synthetic bundle (and its gt/ directory) to ``path``.

    ``objects`` asks for that many placed objects (3..40); by default a
    scene holds four to six.  When no valid layout is found within the
    attempt budget the count drops by one with a warning.
    ``depth_noise`` adds zero-mean gaussian noise of that sigma to the
    depth map only; the scene, ground truth, and features match the
    noiseless bundle of the same seed exactly.

    Raises:
        LayoutForgeError: count out of range, or no layout even for the
            three-object minimum.
    """
    path = Path(path)
    camera = camera or default_camera()
    rng = np.random.default_rng(seed)
    if objects is None:
        objects = int(rng.integers(4, 7))
    if not 3 <= objects <= MAX_OBJECTS:
        raise LayoutForgeError(f"object count {objects} outside 3..{MAX_OBJECTS}")

    rendered = None
    count = objects
    while rendered is None:
        plan = _plan(rng, count)
        for _ in range(_ATTEMPTS_PER_COUNT):
            draft = _draft_scene(rng, plan)
            if draft is None:
                continue
            rendered = _render_valid(draft, camera)
            if rendered is not None:
                break
        if rendered is None:
            if count <= 3:
                raise LayoutForgeError(
                    f"seed {seed}: no valid layout even with 3 objects"
                )
            count -= 1
            log.warning(
                "seed %d: no valid layout with %d objects, retrying with %d",
                seed,
                count + 1,
                count,
            )
    depth, instance = rendered

    manifest, features = _build_library(rng, draft.props, draft.camera_rotation)

    masks = {
        p.mask_id: Mask(
            mask_id=p.mask_id,
            category=p.category,
            pixels=instance == p.mask_id,
            bbox2d=tight_bbox(instance == p.mask_id),
        )
        for p in draft.props
    }

    ids = [p.mask_id for p in draft.props]
    parent = {
        p.mask_id: (p.parent_id if p.parent_id is not None else FLOOR_ID)
        for p in draft.props
        if p.support != "ceiling"
    }
    oracle = OracleRecord(
        floor_supported=sorted(i for i, par in parent.items() if par == FLOOR_ID),
        ceiling_supported=sorted(
            p.mask_id for p in draft.props if p.support == "ceiling"
        ),
        wall_contacts={draft.wall_contact[0]: draft.wall_contact[1]},
        occlusion_support={
            (a, b): parent.get(b) == a for a in ids for b in ids if a != b
        },
        object_dims={p.mask_id: tuple(float(v) for v in p.extents) for p in draft.props},
        excluded=[],
    )

    graph = SceneGraph()
    for p in draft.props:
        if p.support == "ceiling":
            continue
        graph.parent[p.mask_id] = parent[p.mask_id]
        graph.d_vertical[p.mask_id] = p.d_vertical
    graph.ceiling = {p.mask_id for p in draft.props if p.support == "ceiling"}
    graph.wall_edges = [draft.wall_contact]
    graph.validate(ids)

    layout = [
        LayoutObject(
            asset_id=p.asset_id,
            source_mask=p.mask_id,
            rotation=rot_z(p.yaw),
            translation=p.center.copy(),
            scale=np.ones(3),
        )
        for p in draft.props
    ]

    if depth_noise > 0.0:
        noise_rng = np.random.default_rng([seed, 0x5EED])
        depth = np.maximum(depth + noise_rng.normal(0.0, depth_noise, depth.shape), 0.05)

    save_bundle(path, camera, depth, masks, oracle, manifest, features)
    save_layout(layout, graph, path / "gt")
    room = _world_room(draft.room_size)
    write_json(
        path / "gt" / "room.json",
        {
            "seed": seed,
            "room": room.to_json(),
            "room_size": [float(v) for v in draft.room_size],
            "camera_position": [float(v) for v in draft.camera_position],
            "camera_rotation": [float(v) for v in draft.camera_rotation.ravel()],
        },
    )

    return GeneratedScene(
        path=path,
        seed=seed,
        room=room,
        room_size=tuple(float(v) for v in draft.room_size),
        camera=camera,
        camera_rotation=draft.camera_rotation,
        camera_position=draft.camera_position,
        layout=layout,
        graph=graph,
        boxes={p.mask_id: p.box() for p in draft.props},
        render_boxes={p.mask_id: p.render_boxes() for p in draft.props},
    )

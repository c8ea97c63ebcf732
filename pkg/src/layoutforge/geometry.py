"""Geometric primitives: planes, oriented boxes, and fitting routines.

Conventions used throughout the package:

* Point clouds are (N, 3) float arrays.
* A plane is the set {x : n . x = d} with unit normal n.  Structural
  planes returned by room extraction have normals pointing into the
  room (floor up, ceiling down, walls inward).
* An oriented box stores its rotation as a 3x3 matrix whose *columns*
  are the box axes; gravity-aligned boxes keep the up axis in the last
  column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import (
    DegenerateCloudError,
    EmptyInputError,
    NoFloorError,
    NotUprightError,
)


# --------------------------------------------------------------------------
# types


@dataclass
class Plane:
    """Infinite plane {x : n . x = d} with unit normal n."""

    n: np.ndarray
    d: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float).reshape(3)
        norm = np.linalg.norm(self.n)
        if not math.isfinite(norm) or norm < 1e-12:
            raise ValueError("plane normal must be nonzero")
        self.d = float(self.d) / norm
        self.n = self.n / norm

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.n - self.d

    def flipped(self) -> "Plane":
        return Plane(-self.n, -self.d)

    def to_json(self) -> dict:
        return {"n": [float(v) for v in self.n], "d": float(self.d)}

    @classmethod
    def from_json(cls, obj: dict) -> "Plane":
        return cls(np.asarray(obj["n"], dtype=float), float(obj["d"]))


@dataclass
class Obb:
    """Oriented box: center, axis matrix (columns), half extents."""

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.axes = np.asarray(self.axes, dtype=float).reshape(3, 3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        gram = self.axes.T @ self.axes
        if not np.allclose(gram, np.eye(3), atol=1e-6):
            raise ValueError("box axes must be orthonormal")
        if np.any(self.half_extents < 0):
            raise ValueError("half extents must be non-negative")

    @property
    def extents(self) -> np.ndarray:
        return 2.0 * self.half_extents

    def volume(self) -> float:
        return float(np.prod(self.extents))

    def vertices(self) -> np.ndarray:
        """All 8 corners, (8, 3)."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=float,
        )
        return self.center + (signs * self.half_extents) @ self.axes.T

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.axes

    def contains(self, points: np.ndarray, eps: float = 0.0) -> np.ndarray:
        local = self.to_local(points)
        return np.all(np.abs(local) <= self.half_extents + eps, axis=-1)

    def support(self, direction: np.ndarray) -> float:
        """Half-width of the box along a unit direction."""
        return float(np.abs(direction @ self.axes) @ self.half_extents)

    def interval(self, direction: np.ndarray) -> tuple[float, float]:
        """Extent of the box projected on a unit direction."""
        mid = float(self.center @ direction)
        r = self.support(direction)
        return mid - r, mid + r

    def closest_point(self, point: np.ndarray) -> np.ndarray:
        local = np.clip(self.to_local(point), -self.half_extents, self.half_extents)
        return self.center + self.axes @ local

    def to_json(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "axes": [float(v) for v in self.axes.ravel()],
            "half_extents": [float(v) for v in self.half_extents],
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Obb":
        return cls(
            center=np.asarray(obj["center"], dtype=float),
            axes=np.asarray(obj["axes"], dtype=float).reshape(3, 3),
            half_extents=np.asarray(obj["half_extents"], dtype=float),
            degenerate=bool(obj.get("degenerate", False)),
        )


@dataclass
class RoomFrame:
    """Structural planes of the room: floor, walls, optional ceiling."""

    floor: Plane
    walls: list[Plane] = field(default_factory=list)
    ceiling: Plane | None = None

    @property
    def up(self) -> np.ndarray:
        return self.floor.n

    def floor_height(self) -> float:
        return self.floor.d

    def ceiling_height(self) -> float | None:
        """Offset of the ceiling along up, or None.

        The ceiling normal points down into the room, so its height
        along up is the negated plane offset.
        """
        return None if self.ceiling is None else -self.ceiling.d

    def to_json(self) -> dict:
        return {
            "floor": self.floor.to_json(),
            "walls": [w.to_json() for w in self.walls],
            "ceiling": self.ceiling.to_json() if self.ceiling else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoomFrame":
        ceiling = obj.get("ceiling")
        return cls(
            floor=Plane.from_json(obj["floor"]),
            walls=[Plane.from_json(w) for w in obj.get("walls", [])],
            ceiling=Plane.from_json(ceiling) if ceiling else None,
        )


@dataclass
class RansacConfig:
    iterations: int = 1000
    threshold: float = 0.02
    min_inliers: int = 200
    seed: int = 42


# --------------------------------------------------------------------------
# rotations


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def align_rotation(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Smallest rotation taking unit vector src onto unit vector dst."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    c = float(np.clip(src @ dst, -1.0, 1.0))
    axis = np.cross(src, dst)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        if c > 0:
            return np.eye(3)
        # Antiparallel: rotate half a turn about any orthogonal axis.
        helper = np.array([1.0, 0.0, 0.0])
        if abs(src[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = np.cross(src, helper)
        axis /= np.linalg.norm(axis)
        return rotation_about(axis, math.pi)
    return rotation_about(axis / norm, math.atan2(norm, c))


def geodesic_angle(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Angle of the relative rotation between two rotation matrices.

    Symmetric in its arguments and clamped against round-off, so the
    result is always in [0, pi].
    """
    rel = np.asarray(rot_a).T @ np.asarray(rot_b)
    c = (np.trace(rel) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def horizontal_basis(up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal pair spanning the plane normal to up."""
    up = np.asarray(up, dtype=float)
    seed = np.array([1.0, 0.0, 0.0])
    if abs(up @ seed) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    h1 = seed - (seed @ up) * up
    h1 /= np.linalg.norm(h1)
    return h1, np.cross(up, h1)


# --------------------------------------------------------------------------
# depth backprojection


def depth_to_pointcloud(
    depth: np.ndarray,
    camera,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Backproject a depth map into camera-frame 3D points.

    Camera frame: x right, y down, z forward.  Pixels with nonpositive
    or nonfinite depth are dropped.  Points come back in row-major
    pixel order as an (N, 3) array.

    Args:
        depth: (H, W) depth in meters.
        camera: intrinsics with fx, fy, cx, cy attributes.
        mask: optional (H, W) boolean selector.
    """
    depth = np.asarray(depth, dtype=float)
    h, w = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    vs, us = np.nonzero(valid)
    z = depth[vs, us]
    x = (us - camera.cx) * z / camera.fx
    y = (vs - camera.cy) * z / camera.fy
    return np.stack([x, y, z], axis=1)


# --------------------------------------------------------------------------
# oriented box fitting


def fit_obb(cloud: np.ndarray, up: np.ndarray) -> Obb:
    """Fit the minimal-footprint gravity-aligned box around a cloud.

    One box axis is pinned to ``up``; the horizontal pair comes from the
    minimum-area enclosing rectangle of the points projected onto the
    ground plane (rotating calipers over convex hull edges).  The output
    box always contains the input points.

    Raises:
        EmptyInputError: fewer than 1 point.

    A cloud whose ground projection is (near) collinear cannot anchor a
    rectangle orientation; the result then falls back to a deterministic
    horizontal basis and is flagged ``degenerate``.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise EmptyInputError("cannot fit a box to an empty cloud")
    up = np.asarray(up, dtype=float)
    up = up / np.linalg.norm(up)
    h1, h2 = horizontal_basis(up)
    flat = np.stack([pts @ h1, pts @ h2], axis=1)

    angle, degenerate = _min_area_angle(flat)
    u1 = math.cos(angle) * h1 + math.sin(angle) * h2
    u2 = np.cross(up, u1)
    axes = np.stack([u1, u2, up], axis=1)

    local = pts @ axes
    lo, hi = local.min(axis=0), local.max(axis=0)
    center = axes @ ((lo + hi) / 2.0)
    return Obb(center, axes, (hi - lo) / 2.0, degenerate=degenerate)


def _min_area_angle(flat: np.ndarray) -> tuple[float, bool]:
    """Rotation angle of the minimum-area enclosing rectangle.

    Returns (angle in [0, pi/2), degenerate flag).  Ties resolve to the
    smallest angle.
    """
    centered = flat - flat.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False) if len(flat) > 1 else [0.0]
    scale = max(float(sv[0]), 1.0)
    if len(flat) < 3 or sv[-1] < 1e-9 * scale:
        return 0.0, True
    try:
        hull = ConvexHull(flat)
    except QhullError:
        return 0.0, True

    hull_pts = flat[hull.vertices]
    edges = np.roll(hull_pts, -1, axis=0) - hull_pts
    lengths = np.linalg.norm(edges, axis=1)
    keep = lengths > 1e-12
    # Each caliper angle is canonical in [0, pi/2).
    angles = np.mod(np.arctan2(edges[keep, 1], edges[keep, 0]), math.pi / 2.0)

    best_angle, best_area = 0.0, math.inf
    for angle in sorted(set(float(a) for a in angles)):
        c, s = math.cos(angle), math.sin(angle)
        proj = flat @ np.array([[c, -s], [s, c]])
        spread = proj.max(axis=0) - proj.min(axis=0)
        area = float(spread[0] * spread[1])
        if area < best_area - 1e-12:
            best_area, best_angle = area, angle
    return best_angle, False


def obb_vertical_orientations(obb: Obb, up: np.ndarray) -> list[np.ndarray]:
    """Four upright rotations whose front axis faces each box side.

    The returned matrices map an object frame (x right, y front, z up)
    into the world, z pinned to ``up`` and y pointing along one of the
    box's horizontal face normals, in 90-degree steps.

    Raises:
        NotUprightError: no box axis within 1 degree of ``up``.
    """
    up = np.asarray(up, dtype=float)
    up = up / np.linalg.norm(up)
    dots = up @ obb.axes
    vertical = int(np.argmax(np.abs(dots)))
    if math.degrees(math.acos(min(1.0, abs(float(dots[vertical]))))) > 1.0:
        raise NotUprightError(
            "box has no axis within 1 degree of the up direction"
        )
    first = (vertical + 1) % 3
    front = obb.axes[:, first] - (obb.axes[:, first] @ up) * up
    front /= np.linalg.norm(front)

    out = []
    for _ in range(4):
        out.append(np.stack([np.cross(front, up), front, up], axis=1))
        front = np.cross(up, front)
    return out


# --------------------------------------------------------------------------
# distances and volumes


def set_distance(a, b) -> float:
    """Minimum Euclidean distance between two convex sets.

    Accepts oriented boxes and planes in either order.  Returns exactly
    0.0 when the sets touch or overlap.
    """
    if isinstance(a, Plane) and isinstance(b, Obb):
        a, b = b, a
    if isinstance(a, Obb) and isinstance(b, Plane):
        gap = abs(float(a.center @ b.n) - b.d) - a.support(b.n)
        return max(0.0, gap)
    if isinstance(a, Obb) and isinstance(b, Obb):
        if boxes_overlap(a, b):
            return 0.0
        return _box_gap(a, b)
    raise TypeError(f"unsupported operands {type(a).__name__}, {type(b).__name__}")


def boxes_overlap(a: Obb, b: Obb, margin: float = 0.0) -> bool:
    """Separating-axis overlap test; touching counts as overlap."""
    # All 9 edge-pair cross products at once; np.cross per pair is slow.
    ea = a.axes.T[:, None, :]
    eb = b.axes.T[None, :, :]
    crosses = np.stack([
        ea[..., 1] * eb[..., 2] - ea[..., 2] * eb[..., 1],
        ea[..., 2] * eb[..., 0] - ea[..., 0] * eb[..., 2],
        ea[..., 0] * eb[..., 1] - ea[..., 1] * eb[..., 0],
    ], axis=-1).reshape(9, 3)
    norms = np.sqrt((crosses * crosses).sum(axis=1))
    keep = norms > 1e-9
    axes = np.concatenate([a.axes.T, b.axes.T, crosses[keep] / norms[keep, None]])
    delta = b.center - a.center
    gaps = (
        np.abs(axes @ delta)
        - np.abs(axes @ a.axes) @ a.half_extents
        - np.abs(axes @ b.axes) @ b.half_extents
    )
    return bool(np.all(gaps <= margin))


def _box_gap(a: Obb, b: Obb) -> float:
    """Distance between disjoint boxes via alternating projections.

    Projection onto a box is a clamp in its local frame; alternating
    exact projections between two compact convex sets converges to a
    closest pair.
    """
    p = a.closest_point(b.center)
    dist = math.inf
    for _ in range(2000):
        q = b.closest_point(p)
        p = a.closest_point(q)
        new = float(np.linalg.norm(p - q))
        if dist - new < 1e-14:
            dist = new
            break
        dist = new
    return dist


def _clip_edges(box_from: Obb, box_to: Obb) -> np.ndarray:
    """Clip the 12 edges of one box against another; endpoints kept."""
    v = box_from.vertices()
    pairs = [
        (0, 1), (2, 3), (4, 5), (6, 7),
        (0, 2), (1, 3), (4, 6), (5, 7),
        (0, 4), (1, 5), (2, 6), (3, 7),
    ]
    p0 = box_to.to_local(v[[i for i, _ in pairs]])
    p1 = box_to.to_local(v[[j for _, j in pairs]])
    d = p1 - p0
    h = box_to.half_extents

    tmin = np.zeros(len(pairs))
    tmax = np.ones(len(pairs))
    ok = np.ones(len(pairs), dtype=bool)
    for k in range(3):
        dk, ok_axis = d[:, k], np.abs(d[:, k]) > 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h[k] - p0[:, k]) / dk
            t2 = (h[k] - p0[:, k]) / dk
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        tmin = np.where(ok_axis, np.maximum(tmin, lo), tmin)
        tmax = np.where(ok_axis, np.minimum(tmax, hi), tmax)
        # A parallel edge outside the slab never enters the box.
        ok &= np.where(ok_axis, True, np.abs(p0[:, k]) <= h[k] + 1e-12)
    ok &= tmin <= tmax + 1e-15
    if not ok.any():
        return np.zeros((0, 3))
    a = p0[ok] + tmin[ok][:, None] * d[ok]
    b = p0[ok] + tmax[ok][:, None] * d[ok]
    local = np.concatenate([a, b], axis=0)
    return box_to.center + local @ box_to.axes.T


def intersection_volume(a: Obb, b: Obb) -> float:
    """Volume of the intersection of two oriented boxes.

    The intersection polytope's vertices all lie on edges of one box
    clipped to the other; their convex hull gives the exact volume.
    """
    if not boxes_overlap(a, b):
        return 0.0
    points = np.concatenate([_clip_edges(a, b), _clip_edges(b, a)], axis=0)
    if len(points) < 4:
        return 0.0
    try:
        return float(ConvexHull(points, qhull_options="QJ Pp").volume)
    except QhullError:
        return 0.0


def overlap_objective(a: Obb, b: Obb) -> float:
    """Intersection volume minus union volume of two boxes.

    Expanding the union with inclusion-exclusion gives the identity
    2 V(inter) - V(a) - V(b), which this function evaluates directly.
    """
    inter = intersection_volume(a, b)
    return 2.0 * inter - a.volume() - b.volume()


# --------------------------------------------------------------------------
# room plane extraction


def _ransac_plane(
    pts: np.ndarray,
    cfg: RansacConfig,
    rng: np.random.Generator,
    normal_gate=None,
) -> tuple[Plane, np.ndarray] | None:
    """Best plane by inlier count, or None below the inlier floor.

    ``normal_gate`` filters candidate normals before inliers are even
    counted, which is how callers restrict the search to horizontal or
    vertical planes.
    """
    n_pts = len(pts)
    if n_pts < 3:
        return None
    best_count, best = 0, None
    for _ in range(cfg.iterations):
        idx = rng.choice(n_pts, size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        if normal_gate is not None and not normal_gate(normal):
            continue
        dist = np.abs(pts @ normal - normal @ p0)
        count = int((dist < cfg.threshold).sum())
        if count > best_count:
            best_count, best = count, (normal, float(normal @ p0))
    if best is None or best_count < cfg.min_inliers:
        return None

    plane = Plane(best[0], best[1])
    # Two least-squares refinement rounds over the inlier set.
    for _ in range(2):
        inliers = np.abs(plane.signed_distance(pts)) < cfg.threshold
        sub = pts[inliers]
        if len(sub) < 3:
            break
        centroid = sub.mean(axis=0)
        _, _, vt = np.linalg.svd(sub - centroid, full_matrices=False)
        normal = vt[-1]
        if normal_gate is not None and not normal_gate(normal):
            break
        plane = Plane(normal, float(normal @ centroid))
    inliers = np.abs(plane.signed_distance(pts)) < cfg.threshold
    if int(inliers.sum()) < cfg.min_inliers:
        return None
    return plane, inliers


def _orient_into(plane: Plane, cloud: np.ndarray) -> Plane:
    """Flip the plane so the bulk of the cloud sits on its normal side."""
    if float(np.mean(plane.signed_distance(cloud))) < 0:
        return plane.flipped()
    return plane


def fit_room_planes(
    cloud: np.ndarray,
    config: RansacConfig | None = None,
    up_hint: np.ndarray | None = None,
    foreground_top: float | None = None,
    max_walls: int = 6,
) -> RoomFrame:
    """Extract floor, walls, and ceiling from a background cloud.

    The floor is the dominant plane, constrained to within 5 degrees of
    ``up_hint`` when a hint is given.  Walls are pulled sequentially
    from the residual points and re-projected to exact orthogonality
    with the floor normal.  A ceiling is accepted when a sufficiently
    supported plane parallel to the floor sits above ``foreground_top``
    (or at least half a meter above the floor).

    All normals point into the room, so ``floor.n`` is the up
    direction and the ceiling normal is its negation.

    Raises:
        NoFloorError: no plane satisfies the floor criteria.
    """
    cfg = config or RansacConfig()
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(cfg.seed)

    cos5 = math.cos(math.radians(5.0))
    gate = None
    if up_hint is not None:
        hint = np.asarray(up_hint, dtype=float)
        hint = hint / np.linalg.norm(hint)
        gate = lambda n: abs(float(n @ hint)) >= cos5  # noqa: E731
    found = _ransac_plane(pts, cfg, rng, normal_gate=gate)
    if found is None:
        raise NoFloorError(
            "no dominant plane met the inlier threshold"
            + (" inside the 5 degree up cone" if gate else "")
        )
    floor, floor_inliers = found
    floor = _orient_into(floor, pts)
    up = floor.n

    remaining = pts[~floor_inliers]
    sin5 = math.sin(math.radians(5.0))
    walls: list[Plane] = []
    while len(walls) < max_walls:
        found = _ransac_plane(
            remaining, cfg, rng,
            normal_gate=lambda n: abs(float(n @ up)) <= sin5,
        )
        if found is None:
            break
        wall, inliers = found
        # Exact orthogonality against the floor normal.
        n = wall.n - (wall.n @ up) * up
        n /= np.linalg.norm(n)
        sub = remaining[inliers]
        wall = _orient_into(Plane(n, float(np.mean(sub @ n))), pts)
        walls.append(wall)
        remaining = remaining[~inliers]

    ceiling = None
    min_height = floor.d + 0.5
    if foreground_top is not None:
        min_height = max(min_height, foreground_top)
    found = _ransac_plane(
        remaining, cfg, rng,
        normal_gate=lambda n: abs(float(n @ up)) >= cos5,
    )
    if found is not None:
        plane, inliers = found
        sub = remaining[inliers]
        height = float(np.mean(sub @ up))
        if height > min_height:
            # Snap exactly parallel, inward (downward) normal.
            ceiling = Plane(-up, float(np.mean(sub @ -up)))

    return RoomFrame(floor=floor, walls=walls, ceiling=ceiling)


# --------------------------------------------------------------------------
# room alignment


def room_basis(room: RoomFrame) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform (R, t) mapping source coordinates to room axes.

    Room coordinates put the floor at z = 0 with up along +z; x runs
    along the first wall when one exists.  Apply as x' = R x + t.
    """
    up = room.up
    if room.walls:
        h1 = np.cross(up, room.walls[0].n)
        h1 /= np.linalg.norm(h1)
        h2 = np.cross(up, h1)
    else:
        h1, h2 = horizontal_basis(up)
    rot = np.stack([h1, h2, up], axis=0)
    return rot, np.array([0.0, 0.0, -room.floor.d])


def transform_plane(plane: Plane, rot: np.ndarray, t: np.ndarray) -> Plane:
    n = rot @ plane.n
    return Plane(n, plane.d + float(n @ t))


def transform_room(room: RoomFrame, rot: np.ndarray, t: np.ndarray) -> RoomFrame:
    return RoomFrame(
        floor=transform_plane(room.floor, rot, t),
        walls=[transform_plane(w, rot, t) for w in room.walls],
        ceiling=transform_plane(room.ceiling, rot, t) if room.ceiling else None,
    )


def transform_obb(obb: Obb, rot: np.ndarray, t: np.ndarray) -> Obb:
    return Obb(
        center=rot @ obb.center + t,
        axes=rot @ obb.axes,
        half_extents=obb.half_extents.copy(),
        degenerate=obb.degenerate,
    )

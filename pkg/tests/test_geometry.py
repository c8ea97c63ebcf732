import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from layoutforge.errors import EmptyInputError, NoFloorError, NotUprightError
from layoutforge.geometry import (
    Obb,
    Plane,
    RansacConfig,
    RoomFrame,
    boxes_overlap,
    depth_to_pointcloud,
    fit_obb,
    fit_room_planes,
    geodesic_angle,
    intersection_volume,
    obb_vertical_orientations,
    overlap_objective,
    room_basis,
    rot_z,
    rotation_about,
    set_distance,
    transform_obb,
    transform_room,
)
from layoutforge.ingest import CameraIntrinsics

from conftest import random_obb, random_rotation, sample_obb_surface

UP = np.array([0.0, 0.0, 1.0])


# ------------------------------------------------------- backprojection


def _raycast_box_depth(camera, box_lo, box_hi):
    """Analytic z-depth of an axis-aligned box seen from the origin."""
    us, vs = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    dirs = np.stack(
        [
            (us - camera.cx) / camera.fx,
            (vs - camera.cy) / camera.fy,
            np.ones_like(us, dtype=float),
        ],
        axis=-1,
    )
    # Slab intersection for rays p = t * d, t > 0.
    with np.errstate(divide="ignore"):
        t1 = box_lo / dirs
        t2 = box_hi / dirs
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    hit = (tmax >= tmin) & (tmax > 0)
    t = np.where(tmin > 0, tmin, tmax)
    depth = np.where(hit, t * dirs[..., 2], 0.0)
    return depth.astype(np.float32)


def test_backprojection_lands_on_box_surface():
    camera = CameraIntrinsics(fx=80, fy=80, cx=32, cy=24, width=64, height=48)
    lo = np.array([-0.4, -0.3, 2.0])
    hi = np.array([0.5, 0.4, 3.0])
    depth = _raycast_box_depth(camera, lo, hi)
    assert (depth > 0).sum() > 100
    cloud = depth_to_pointcloud(depth, camera)
    # Every backprojected point must lie on the box boundary.
    inside = np.all((cloud >= lo - 1e-6) & (cloud <= hi + 1e-6), axis=1)
    assert inside.all()
    slack = np.minimum(np.abs(cloud - lo), np.abs(cloud - hi)).min(axis=1)
    assert slack.max() < 1e-6


def test_backprojection_drops_invalid_pixels():
    camera = CameraIntrinsics(fx=10, fy=10, cx=2, cy=2, width=4, height=4)
    depth = np.zeros((4, 4), dtype=np.float32)
    depth[1, 2] = 2.0
    depth[3, 3] = np.nan
    depth[0, 0] = -1.0
    cloud = depth_to_pointcloud(depth, camera)
    assert cloud.shape == (1, 3)
    assert np.allclose(cloud[0], [(2 - 2) * 2.0 / 10, (1 - 2) * 2.0 / 10, 2.0])


def test_backprojection_respects_mask():
    camera = CameraIntrinsics(fx=10, fy=10, cx=2, cy=2, width=4, height=4)
    depth = np.full((4, 4), 1.5, dtype=np.float32)
    mask = np.zeros((4, 4), dtype=bool)
    mask[2, 1] = True
    cloud = depth_to_pointcloud(depth, camera, mask)
    assert cloud.shape == (1, 3)


# ------------------------------------------------------- obb fitting


def _footprint_area(pts, yaw):
    rot = np.array(
        [[math.cos(yaw), -math.sin(yaw)], [math.sin(yaw), math.cos(yaw)]]
    )
    proj = pts[:, :2] @ rot
    spread = proj.max(axis=0) - proj.min(axis=0)
    return float(spread[0] * spread[1])


def _sweep_min_area(pts, step_deg=0.01):
    """Brute-force oracle: smallest footprint over a fine yaw sweep."""
    best = math.inf
    for yaw in np.arange(0.0, 90.0, step_deg):
        best = min(best, _footprint_area(pts, math.radians(yaw)))
    return best


def test_fit_obb_recovers_rotated_cube():
    rng = np.random.default_rng(11)
    corners = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
        dtype=float,
    ) * [0.5, 0.35, 0.25]
    yaw = math.radians(30.0)
    pts = corners @ rot_z(yaw).T + [1.0, -2.0, 0.25]
    # Interior samples should not change the fit.
    fill = rng.uniform(-1, 1, size=(400, 3)) * [0.5, 0.35, 0.25]
    pts = np.vstack([pts, fill @ rot_z(yaw).T + [1.0, -2.0, 0.25]])

    box = fit_obb(pts, UP)
    assert not box.degenerate
    fitted_yaw = math.atan2(box.axes[1, 0], box.axes[0, 0])
    assert math.isclose(fitted_yaw % (math.pi / 2), yaw % (math.pi / 2),
                        abs_tol=1e-9)
    assert np.allclose(sorted(box.half_extents[:2]), [0.35, 0.5], atol=1e-9)
    assert math.isclose(box.half_extents[2], 0.25, abs_tol=1e-9)
    assert np.allclose(box.center, [1.0, -2.0, 0.25], atol=1e-9)

    # Footprint area matches the 0.01-degree sweep oracle.
    area = 4.0 * box.half_extents[0] * box.half_extents[1]
    assert math.isclose(area, _sweep_min_area(pts), rel_tol=1e-9)


def test_fit_obb_minimality_against_sweep(rng):
    for _ in range(10):
        pts = rng.normal(size=(60, 3)) * rng.uniform(0.2, 1.5, size=3)
        box = fit_obb(pts, UP)
        area = 4.0 * box.half_extents[0] * box.half_extents[1]
        oracle = _sweep_min_area(pts, step_deg=0.05)
        assert area <= oracle + 1e-9


def test_fit_obb_always_contains_cloud(rng):
    for _ in range(50):
        pts = rng.normal(size=(rng.integers(1, 40), 3))
        box = fit_obb(pts, UP)
        assert box.contains(pts, eps=1e-9).all()


def test_fit_obb_tilted_up_axis():
    up = np.array([1.0, 1.0, 1.0]) / math.sqrt(3.0)
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(200, 3))
    box = fit_obb(pts, up)
    assert np.allclose(box.axes[:, 2], up, atol=1e-12)
    assert box.contains(pts, eps=1e-9).all()


def test_fit_obb_degenerate_cases():
    with pytest.raises(EmptyInputError):
        fit_obb(np.zeros((0, 3)), UP)
    # A vertical line has no footprint orientation.
    line = np.stack([np.zeros(10), np.zeros(10), np.linspace(0, 1, 10)], axis=1)
    box = fit_obb(line, UP)
    assert box.degenerate
    assert box.contains(line, eps=1e-9).all()
    # Collinear ground projection, same story.
    diag = np.stack([np.linspace(0, 1, 8), np.linspace(0, 2, 8), np.zeros(8)], axis=1)
    assert fit_obb(diag, UP).degenerate


# ------------------------------------------------------- distances


def test_set_distance_unit_cubes_two_apart():
    a = Obb(np.zeros(3), np.eye(3), np.full(3, 0.5))
    b = Obb(np.array([3.0, 0.0, 0.0]), np.eye(3), np.full(3, 0.5))
    assert set_distance(a, b) == pytest.approx(2.0, abs=1e-12)


def test_set_distance_zero_iff_overlap(rng):
    for _ in range(300):
        a = random_obb(rng, center_spread=1.0)
        b = random_obb(rng, center_spread=1.0)
        dist = set_distance(a, b)
        if boxes_overlap(a, b):
            assert dist == 0.0
        else:
            assert dist > 0.0


def test_set_distance_against_monte_carlo(rng):
    checked = 0
    while checked < 12:
        a = random_obb(rng, center_spread=0.35, max_half_extent=0.2)
        b = random_obb(rng, center_spread=0.35, max_half_extent=0.2)
        if boxes_overlap(a, b):
            continue
        dist = set_distance(a, b)

        # Upper oracle: closest pair over sampled surfaces (4e6 pairs).
        pa = sample_obb_surface(a, 2000, rng)
        pb = sample_obb_surface(b, 2000, rng)
        pair_min = float(cdist(pa, pb).min())
        # Lower oracle: every direction's support gap underestimates
        # the distance between disjoint convex sets.
        dirs = rng.normal(size=(200_000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        sep = np.abs(dirs @ (b.center - a.center))
        sep -= np.abs(dirs @ a.axes) @ a.half_extents
        sep -= np.abs(dirs @ b.axes) @ b.half_extents
        gap_max = float(sep.max())

        assert gap_max - 1e-9 <= dist <= pair_min + 1e-9
        assert pair_min - gap_max <= 2e-2  # oracles bracket tightly
        checked += 1


def test_set_distance_symmetry(rng):
    for _ in range(50):
        a = random_obb(rng)
        b = random_obb(rng)
        assert set_distance(a, b) == pytest.approx(set_distance(b, a), abs=1e-9)


def test_obb_plane_distance():
    box = Obb(np.array([0.0, 0.0, 1.0]), np.eye(3), np.full(3, 0.25))
    floor = Plane(UP, 0.0)
    assert set_distance(box, floor) == pytest.approx(0.75, abs=1e-12)
    assert set_distance(floor, box) == pytest.approx(0.75, abs=1e-12)
    touching = Obb(np.array([0.0, 0.0, 0.25]), np.eye(3), np.full(3, 0.25))
    assert set_distance(touching, floor) == 0.0


# ------------------------------------------------------- rotations


def test_geodesic_angle_known_values():
    assert geodesic_angle(np.eye(3), np.eye(3)) == 0.0
    for deg in (5.0, 20.0, 45.0, 90.0, 180.0):
        ang = math.radians(deg)
        assert geodesic_angle(np.eye(3), rot_z(ang)) == pytest.approx(ang, abs=1e-12)
    axis = np.array([1.0, 2.0, -0.5])
    axis /= np.linalg.norm(axis)
    rot = rotation_about(axis, 0.7)
    assert geodesic_angle(np.eye(3), rot) == pytest.approx(0.7, abs=1e-12)


def test_geodesic_angle_metric_properties(rng):
    for _ in range(200):
        ra, rb, rc = (random_rotation(rng) for _ in range(3))
        dab = geodesic_angle(ra, rb)
        assert dab == pytest.approx(geodesic_angle(rb, ra), abs=1e-9)
        assert 0.0 <= dab <= math.pi + 1e-12
        # Triangle inequality.
        assert dab <= geodesic_angle(ra, rc) + geodesic_angle(rc, rb) + 1e-9


def test_vertical_orientations_of_yawed_cube():
    box = Obb(np.zeros(3), rot_z(math.radians(17.0)), np.full(3, 0.5))
    rotations = obb_vertical_orientations(box, UP)
    assert len(rotations) == 4
    fronts = []
    for rot in rotations:
        assert np.allclose(rot.T @ rot, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(rot @ UP, UP, atol=1e-12)
        front = rot @ np.array([0.0, 1.0, 0.0])
        fronts.append(math.degrees(math.atan2(front[1], front[0])) % 360.0)
    assert np.allclose(sorted(fronts), [17.0, 107.0, 197.0, 287.0], atol=1e-6)


def test_vertical_orientations_rejects_tilted_box():
    tilt = rotation_about(np.array([1.0, 0.0, 0.0]), math.radians(5.0))
    box = Obb(np.zeros(3), tilt, np.full(3, 0.5))
    with pytest.raises(NotUprightError):
        obb_vertical_orientations(box, UP)


# ------------------------------------------------------- volumes


def test_intersection_volume_axis_aligned():
    a = Obb(np.zeros(3), np.eye(3), np.array([1.0, 1.0, 1.0]))
    b = Obb(np.array([1.0, 1.0, 1.0]), np.eye(3), np.array([1.0, 1.0, 1.0]))
    assert intersection_volume(a, b) == pytest.approx(1.0, rel=1e-9)
    far = Obb(np.array([5.0, 0.0, 0.0]), np.eye(3), np.full(3, 0.5))
    assert intersection_volume(a, far) == 0.0
    assert intersection_volume(a, a) == pytest.approx(8.0, rel=1e-9)


def test_intersection_volume_rotated_oracle(rng):
    # Monte-Carlo volume oracle over random overlapping pairs.
    for _ in range(8):
        a = random_obb(rng, center_spread=0.3)
        b = random_obb(rng, center_spread=0.3)
        vol = intersection_volume(a, b)
        lo = np.minimum(a.vertices().min(axis=0), b.vertices().min(axis=0))
        hi = np.maximum(a.vertices().max(axis=0), b.vertices().max(axis=0))
        samples = rng.uniform(lo, hi, size=(200_000, 3))
        inside = a.contains(samples) & b.contains(samples)
        mc = float(np.prod(hi - lo)) * inside.mean()
        assert vol == pytest.approx(mc, abs=0.02 * float(np.prod(hi - lo)) * 0.05 + 1e-4)


def test_overlap_objective_identity(rng):
    # V(i) - V(u) must equal 2 V(i) - V(a) - V(b); check against an
    # explicit inclusion-exclusion union.
    for _ in range(20):
        a = random_obb(rng, center_spread=0.5)
        b = random_obb(rng, center_spread=0.5)
        inter = intersection_volume(a, b)
        union = a.volume() + b.volume() - inter
        assert overlap_objective(a, b) == pytest.approx(inter - union, abs=1e-9)


# ------------------------------------------------------- room planes


def _grid_plane(lo_u, hi_u, lo_v, hi_v, n, frame):
    us = np.linspace(lo_u, hi_u, n)
    vs = np.linspace(lo_v, hi_v, n)
    uu, vv = np.meshgrid(us, vs)
    pts = np.zeros((uu.size, 3))
    pts[:, frame[0]] = uu.ravel()
    pts[:, frame[1]] = vv.ravel()
    return pts


def _synthetic_room(noise=0.005, seed=0, with_ceiling=True):
    rng = np.random.default_rng(seed)
    floor = _grid_plane(0.1, 4.0, 0.1, 4.0, 70, (0, 1))
    wall_x = _grid_plane(0.1, 4.0, 0.1, 3.0, 55, (1, 2))  # x = 0
    wall_y = _grid_plane(0.1, 4.0, 0.1, 3.0, 55, (0, 2))  # y = 0
    parts = [floor, wall_x, wall_y]
    if with_ceiling:
        ceiling = _grid_plane(0.1, 4.0, 0.1, 4.0, 40, (0, 1))
        ceiling[:, 2] = 3.0
        parts.append(ceiling)
    cloud = np.concatenate(parts, axis=0)
    cloud += rng.normal(scale=noise, size=cloud.shape)
    return rng.permutation(cloud)


def test_room_planes_on_noisy_synthetic_room():
    cloud = _synthetic_room()
    room = fit_room_planes(cloud, RansacConfig(), up_hint=UP)
    assert abs(room.floor.d) < 0.01
    assert room.floor.n @ UP > math.cos(math.radians(1.0))
    assert len(room.walls) == 2
    for wall in room.walls:
        # Exact orthogonality after re-projection.
        assert abs(wall.n @ room.up) < 1e-9
        assert min(abs(wall.d - 0.0), abs(wall.d)) < 0.01
        # Inward normals: the room interior is on the positive side.
        assert wall.signed_distance(np.array([[2.0, 2.0, 1.5]]))[0] > 0
    assert room.ceiling is not None
    assert np.allclose(room.ceiling.n, -room.up, atol=1e-12)
    assert abs(room.ceiling_height() - 3.0) < 0.01


def test_room_planes_without_hint_picks_largest():
    cloud = _synthetic_room(with_ceiling=False)
    room = fit_room_planes(cloud, RansacConfig())
    assert abs(abs(room.floor.n @ UP) - 1.0) < 1e-6
    assert room.ceiling is None


def test_room_planes_no_floor_error():
    rng = np.random.default_rng(1)
    cloud = rng.uniform(size=(500, 3))  # unstructured blob
    with pytest.raises(NoFloorError):
        fit_room_planes(cloud, RansacConfig(min_inliers=400))


def test_room_planes_hint_gate_rejects_walls():
    # Make the wall dominate; the hint must still find the floor.
    floor = _grid_plane(0.1, 2.0, 0.1, 2.0, 30, (0, 1))
    wall = _grid_plane(0.1, 6.0, 0.1, 3.0, 80, (1, 2))
    cloud = np.concatenate([floor, wall], axis=0)
    room = fit_room_planes(cloud, RansacConfig(min_inliers=150), up_hint=UP)
    assert abs(abs(room.floor.n @ UP) - 1.0) < 1e-6


# ------------------------------------------------------- transforms


def test_room_basis_maps_floor_to_z0():
    tilt = rotation_about(np.array([1.0, 0.0, 0.0]), 0.3)
    up = tilt @ UP
    floor = Plane(up, 1.2)
    wall = Plane(tilt @ np.array([1.0, 0.0, 0.0]), 0.0)
    room = RoomFrame(floor=floor, walls=[wall])
    rot, t = room_basis(room)
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)

    moved = transform_room(room, rot, t)
    assert np.allclose(moved.floor.n, UP, atol=1e-12)
    assert abs(moved.floor.d) < 1e-12
    assert abs(moved.walls[0].n @ UP) < 1e-12

    # A point on the floor plane lands at z = 0.
    p = up * 1.2
    assert abs((rot @ p + t)[2]) < 1e-12

    box = Obb(p + up * 0.5, tilt, np.full(3, 0.5))
    moved_box = transform_obb(box, rot, t)
    assert moved_box.interval(UP)[0] == pytest.approx(0.0, abs=1e-12)

import math

import numpy as np
import pytest

from layoutforge.errors import MissingOracleError
from layoutforge.geometry import Obb, Plane, RoomFrame, rot_z, rotation_about
from layoutforge.ingest import CameraIntrinsics, Mask, OracleRecord, SceneBundle
from layoutforge.ingest.features import FeatureStore
from layoutforge.scenegraph import (
    FLOOR_ID,
    SceneGraph,
    build_support_tree,
    containment_fraction,
    geometric_oracle,
    refine_obbs,
    supported_relationship,
)

from conftest import sample_obb_surface

UP = np.array([0.0, 0.0, 1.0])


def box(center, extents, yaw=0.0) -> Obb:
    return Obb(np.asarray(center, float), rot_z(yaw),
               np.asarray(extents, float) / 2.0)


def make_bundle(mask_ids, oracle) -> SceneBundle:
    cam = CameraIntrinsics(fx=10, fy=10, cx=4, cy=4, width=8, height=8)
    masks = {}
    for k, mask_id in enumerate(sorted(mask_ids)):
        pixels = np.zeros((8, 8), dtype=bool)
        pixels[k % 8, k % 8] = True
        masks[mask_id] = Mask(mask_id, "thing", pixels,
                              (k % 8, k % 8, 1, 1))
    return SceneBundle(
        path="", camera=cam, depth=np.ones((8, 8), np.float32),
        masks=masks, oracle=oracle, manifest=None,
        features=FeatureStore([]),
    )


def default_room(ceiling_h=3.0) -> RoomFrame:
    return RoomFrame(
        floor=Plane(UP, 0.0),
        walls=[Plane(np.array([1.0, 0.0, 0.0]), 0.0),
               Plane(np.array([0.0, 1.0, 0.0]), 0.0)],
        ceiling=Plane(-UP, -ceiling_h),
    )


# ------------------------------------------------- support verdicts


def test_contact_branch():
    table = box([0, 0, 0.4], [1.2, 0.8, 0.8])
    cup = box([0.1, 0.1, 0.85], [0.1, 0.1, 0.1])
    verdict = supported_relationship(table, cup)
    assert verdict.supported and verdict.branch == "contact"
    assert verdict.d_vertical == 0.0


def test_contact_branch_tolerates_small_gap():
    table = box([0, 0, 0.4], [1.2, 0.8, 0.8])
    cup = box([0.1, 0.1, 0.89], [0.1, 0.1, 0.1])  # 4 cm float
    assert supported_relationship(table, cup, eps=0.05).supported
    far = box([0.1, 0.1, 0.95], [0.1, 0.1, 0.1])  # 10 cm float
    with pytest.raises(MissingOracleError):
        supported_relationship(table, far, eps=0.05)


def test_containment_branch_fraction():
    cabinet = box([0, 0, 0.6], [0.8, 0.5, 1.2])
    # Vase midpoint at z = 0.42 -> fraction 0.42 / 1.2 = 0.35.
    vase = box([0.1, 0.0, 0.42], [0.2, 0.2, 0.3])
    verdict = supported_relationship(cabinet, vase)
    assert verdict.supported and verdict.branch == "containment"
    assert verdict.d_vertical == pytest.approx(0.35, abs=1e-12)


def test_containment_fraction_formula_oracle(rng):
    # Random nested pairs: the fraction must match the direct formula.
    for _ in range(2000):
        a_ext = rng.uniform(0.5, 2.0, size=3)
        a = box(rng.uniform(-1, 1, size=3), a_ext, yaw=rng.uniform(0, math.pi))
        frac = rng.uniform(0.05, 0.95)
        b_ext = a_ext * rng.uniform(0.05, 0.3)
        b_lo, b_hi = a.interval(UP)
        mid = b_lo + frac * (b_hi - b_lo)
        b = box([a.center[0], a.center[1], mid], [b_ext[0], b_ext[1], 0.01],
                yaw=0.0)
        got = containment_fraction(a, b, UP)
        z_lo, z_hi = b.interval(UP)
        want = ((z_hi + z_lo) / 2.0 - b_lo) / (b_hi - b_lo)
        assert abs(got - want) < 1e-12
        assert abs(got - frac) < 1e-9


def test_oracle_branch_and_missing_entry():
    table = box([0, 0, 0.4], [1.0, 1.0, 0.8])
    # Occluded object: neither touching nor contained.
    blob = box([0.2, 0.2, 1.2], [0.2, 0.2, 0.2])
    oracle = OracleRecord(occlusion_support={(1, 2): True, (1, 3): False})
    yes = supported_relationship(table, blob, oracle, pair=(1, 2))
    assert yes.supported and yes.branch == "oracle"
    no = supported_relationship(table, blob, oracle, pair=(1, 3))
    assert not no.supported
    with pytest.raises(MissingOracleError):
        supported_relationship(table, blob, oracle, pair=(1, 9))


# ------------------------------------------------- tree construction


def test_tree_simple_stack():
    obbs = {
        1: box([0, 0, 0.4], [1.2, 0.8, 0.8]),       # table on floor
        2: box([0.2, 0, 0.9], [0.2, 0.2, 0.2]),     # block on table
        3: box([0.2, 0, 1.1], [0.1, 0.1, 0.2]),     # block on block
        4: box([2.0, 2.0, 0.25], [0.5, 0.5, 0.5]),  # lone box on floor
    }
    oracle = OracleRecord(floor_supported=[1, 4])
    bundle = make_bundle(obbs, oracle)
    graph = build_support_tree(bundle, obbs)
    assert graph.edges() == [(FLOOR_ID, 1), (FLOOR_ID, 4), (1, 2), (2, 3)]
    assert graph.excluded == set()
    assert graph.topo_order() == [1, 4, 2, 3]


def test_tree_ceiling_and_excluded():
    obbs = {
        1: box([0, 0, 0.4], [1, 1, 0.8]),
        2: box([0, 0, 2.8], [0.3, 0.3, 0.4]),   # pendant at ceiling
        3: box([5, 5, 5], [0.1, 0.1, 0.1]),     # floating junk
        4: box([3, 3, 0.2], [0.2, 0.2, 0.4]),   # oracle-excluded
    }
    oracle = OracleRecord(floor_supported=[1], ceiling_supported=[2],
                          excluded=[4])
    graph = build_support_tree(make_bundle(obbs, oracle), obbs)
    assert graph.ceiling == {2}
    assert graph.excluded == {3, 4}
    assert set(graph.parent) == {1}


def test_tree_parent_conflict_smaller_distance_wins():
    # Two tables of slightly different heights; the block rests on the
    # taller one (set distance 0) but also hovers near the shorter.
    obbs = {
        1: box([0.0, 0, 0.38], [1.0, 1.0, 0.76]),   # shorter table
        2: box([1.0, 0, 0.40], [1.0, 1.0, 0.80]),   # taller table
        3: box([0.5, 0, 0.85], [0.9, 0.2, 0.1]),    # plank on both
    }
    oracle = OracleRecord(floor_supported=[1, 2])
    graph = build_support_tree(make_bundle(obbs, oracle), obbs)
    # Mask 1 is tested first but sits 4 cm away; mask 2 touches.
    assert graph.parent[3] == 2


def test_tree_parent_conflict_tie_smaller_id_wins():
    obbs = {
        2: box([0.0, 0, 0.4], [1.0, 1.0, 0.8]),
        5: box([1.0, 0, 0.4], [1.0, 1.0, 0.8]),
        7: box([0.5, 0, 0.85], [0.9, 0.2, 0.1]),  # touches both tops
    }
    oracle = OracleRecord(floor_supported=[2, 5])
    graph = build_support_tree(make_bundle(obbs, oracle), obbs)
    assert graph.parent[7] == 2


def test_tree_wall_edges_validated():
    obbs = {
        1: box([0.2, 1.0, 0.9], [0.4, 0.6, 1.8]),  # wardrobe at wall 0
        2: box([2.0, 2.0, 0.4], [0.8, 0.8, 0.8]),  # mid-room
    }
    oracle = OracleRecord(
        floor_supported=[1, 2], wall_contacts={1: 0, 2: 1}
    )
    graph = build_support_tree(
        make_bundle(obbs, oracle), obbs, room=default_room()
    )
    assert graph.wall_edges == [(1, 0)]  # mask 2 is 1.6 m from wall 1


def test_tree_requires_oracle():
    obbs = {1: box([0, 0, 0.4], [1, 1, 0.8])}
    with pytest.raises(MissingOracleError):
        build_support_tree(make_bundle(obbs, None), obbs)


def test_tree_determinism():
    rng = np.random.default_rng(4)
    obbs = {}
    for i in range(10):
        c = rng.uniform(0.5, 5.0, size=2)
        obbs[i] = box([c[0], c[1], 0.25], [0.4, 0.4, 0.5])
    oracle = OracleRecord(floor_supported=list(range(10)))
    bundle = make_bundle(obbs, oracle)
    g1 = build_support_tree(bundle, obbs)
    g2 = build_support_tree(bundle, obbs)
    assert g1.to_json() == g2.to_json()


# ------------------------------------------------- box refinement


def test_refine_floats_down_to_floor():
    obbs = {1: box([0, 0, 0.43], [0.6, 0.6, 0.8])}  # 3 cm above floor
    graph = SceneGraph(parent={1: FLOOR_ID}, d_vertical={1: 0.0})
    out = refine_obbs(graph, obbs, default_room())
    lo, hi = out[1].interval(UP)
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert hi == pytest.approx(0.83, abs=1e-12)  # top face unchanged


def test_refine_levels_tilted_box():
    tilt = rotation_about(np.array([1.0, 0.0, 0.0]), math.radians(2.0))
    axes = tilt @ rot_z(0.3)
    obbs = {1: Obb(np.array([0, 0, 0.4]), axes, np.array([0.3, 0.2, 0.4]))}
    graph = SceneGraph(parent={1: FLOOR_ID}, d_vertical={1: 0.0})
    out = refine_obbs(graph, obbs, default_room())
    assert abs(float(out[1].axes[:, 2] @ UP) - 1.0) < 1e-9
    assert out[1].interval(UP)[0] == pytest.approx(0.0, abs=1e-12)


def test_refine_child_meets_parent_top():
    obbs = {
        1: box([0, 0, 0.4], [1.2, 0.8, 0.8]),
        2: box([0.1, 0, 0.93], [0.2, 0.2, 0.16]),  # 5 cm above table top
    }
    graph = SceneGraph(parent={1: FLOOR_ID, 2: 1},
                       d_vertical={1: 0.0, 2: 0.0})
    out = refine_obbs(graph, obbs, default_room())
    assert out[2].interval(UP)[0] == pytest.approx(0.8, abs=1e-12)
    assert out[2].interval(UP)[1] == pytest.approx(1.01, abs=1e-12)


def test_refine_keeps_contained_child_height():
    obbs = {
        1: box([0, 0, 0.6], [0.8, 0.5, 1.2]),
        2: box([0, 0, 0.45], [0.2, 0.2, 0.3]),  # vase on a shelf
    }
    graph = SceneGraph(parent={1: FLOOR_ID, 2: 1},
                       d_vertical={1: 0.0, 2: 0.375})
    out = refine_obbs(graph, obbs, default_room())
    assert np.allclose(out[2].half_extents, obbs[2].half_extents)
    assert np.allclose(out[2].center, obbs[2].center)


def test_refine_recovers_occluded_cabinet_height(rng):
    # A cabinet whose lower half is hidden: the visible cloud starts at
    # z = 0.5, yet the refined box must recover the true 1.2 m height.
    true = box([1.0, 2.0, 0.6], [0.8, 0.5, 1.2], yaw=0.4)
    pts = sample_obb_surface(true, 4000, rng)
    pts = pts[pts[:, 2] >= 0.5]
    from layoutforge.geometry import fit_obb

    fitted = fit_obb(pts, UP)
    graph = SceneGraph(parent={1: FLOOR_ID}, d_vertical={1: 0.0})
    out = refine_obbs(graph, {1: fitted}, default_room())
    lo, hi = out[1].interval(UP)
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert abs((hi - lo) - 1.2) < 0.02


# ------------------------------------------------- geometric oracle


def test_geometric_oracle_classifies_scene():
    room = default_room(ceiling_h=3.0)
    obbs = {
        1: box([1.0, 2.0, 0.4], [0.8, 0.8, 0.8]),    # on floor
        2: box([1.0, 2.0, 0.9], [0.2, 0.2, 0.2]),    # stacked, not floor
        3: box([0.2, 1.0, 1.0], [0.4, 0.5, 2.0]),    # floor + wall 0
        4: box([2.0, 2.0, 2.9], [0.3, 0.3, 0.2]),    # at ceiling
    }
    oracle = geometric_oracle(obbs, room, occlusion_support={(1, 2): True})
    assert oracle.floor_supported == [1, 3]
    assert oracle.ceiling_supported == [4]
    assert oracle.wall_contacts == {3: 0}
    assert oracle.occlusion_support[(1, 2)] is True
    assert oracle.object_dims[1] == (0.8, 0.8, 0.8)

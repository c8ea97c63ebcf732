"""Tests for snapping, hard contacts, silhouette annealing, settling."""

import csv
import math

import numpy as np
import pytest

from layoutforge.errors import NoSubspaceError
from layoutforge.geometry import (
    Obb,
    Plane,
    RoomFrame,
    boxes_overlap,
    geodesic_angle,
    rot_z,
    rotation_about,
    set_distance,
)
from layoutforge.ingest import Asset, CameraIntrinsics
from layoutforge.refine import (
    OptState,
    PlacedObject,
    RefineConfig,
    ViewModel,
    anneal_translations,
    apply_hard_constraints,
    local_refine,
    objective,
    place_internal,
    settle,
    silhouette,
    write_trace,
)
from layoutforge.scenegraph import FLOOR_ID, SceneGraph

UP = np.array([0.0, 0.0, 1.0])


def make_room(walls=((1.0, 0.0, 0.0, -2.0),), height=3.0):
    return RoomFrame(
        floor=Plane(np.array([0.0, 0.0, 1.0]), 0.0),
        walls=[Plane(np.array(w[:3]), w[3]) for w in walls],
        ceiling=Plane(np.array([0.0, 0.0, -1.0]), -height),
    )


def make_obj(mask_id, extents, yaw=0.0, center=(0.0, 0.0, 0.0), scale=1.0,
             subspaces=()):
    asset = Asset(
        asset_id=f"asset{mask_id}", category="thing",
        extents=np.asarray(extents, float), scale_mode="fully_free",
        subspaces=[dict(s) for s in subspaces],
    )
    return PlacedObject(
        mask_id=mask_id, asset=asset, rotation=rot_z(yaw),
        translation=np.asarray(center, float),
        scale=np.full(3, float(scale)),
    )


# --- rotation snapping -------------------------------------------------------


def test_upright_snap_levels_tilted_objects():
    obj = make_obj(1, (1, 1, 1))
    obj.rotation = rotation_about(np.array([1.0, 0.0, 0.0]),
                                  math.radians(3.0)) @ rot_z(0.7)
    local_refine({1: obj}, SceneGraph(), make_room())
    assert obj.rotation[:, 2] == pytest.approx(UP, abs=1e-12)
    assert np.allclose(obj.rotation.T @ obj.rotation, np.eye(3), atol=1e-12)


def test_wall_snap_squares_nearby_yaw():
    room = make_room()
    graph = SceneGraph(parent={1: FLOOR_ID}, d_vertical={1: 0.0},
                       wall_edges=[(1, 0)])
    obj = make_obj(1, (1, 1, 1), yaw=math.radians(10.0))
    local_refine({1: obj}, graph, room)
    assert geodesic_angle(obj.rotation, np.eye(3)) < 1e-12

    askew = make_obj(1, (1, 1, 1), yaw=math.radians(20.0))
    local_refine({1: askew}, graph, room)
    assert geodesic_angle(askew.rotation, rot_z(math.radians(20.0))) < 1e-12

    # 85 degrees: the opposite short axis sits 5 degrees from the normal.
    near_square = make_obj(1, (1, 1, 1), yaw=math.radians(85.0))
    local_refine({1: near_square}, graph, room)
    assert geodesic_angle(near_square.rotation, rot_z(math.pi / 2)) < 1e-12


def test_ceiling_objects_hang_from_ceiling():
    graph = SceneGraph(ceiling={2})
    obj = make_obj(2, (0.3, 0.3, 0.4), center=(1.0, 1.0, 2.0))
    local_refine({2: obj}, graph, make_room(height=3.0))
    _, top = obj.box().interval(UP)
    assert top == pytest.approx(3.0, abs=1e-12)


# --- internal placement ------------------------------------------------------


def shelf_subspaces():
    # Parent extents (1, 1, 2): bays centered at height fractions
    # 0.25, 0.5, 0.75.
    return [
        {"center": (0.1, 0.0, -0.5), "half_extents": (0.3, 0.3, 0.15)},
        {"center": (0.0, 0.0, 0.0), "half_extents": (0.3, 0.3, 0.15)},
        {"center": (0.0, 0.0, 0.5), "half_extents": (0.3, 0.3, 0.15)},
    ]


def test_subspace_choice_tracks_height_fraction():
    parent = make_obj(1, (1, 1, 2), yaw=0.3, center=(2.0, 1.0, 1.0),
                      subspaces=shelf_subspaces())
    child = make_obj(2, (0.2, 0.2, 0.2))
    assert place_internal(child, parent, 0.7) == 2
    assert place_internal(child, parent, 0.26) == 0
    # Equidistant between bays 0 and 1: lower index wins.
    assert place_internal(child, parent, 0.375) == 0
    expected = parent.translation + rot_z(0.3) @ np.array([0.1, 0.0, -0.5])
    assert child.translation == pytest.approx(expected, abs=1e-12)


def test_oversized_child_shrinks_to_bay():
    parent = make_obj(1, (1, 1, 2), subspaces=shelf_subspaces())
    child = make_obj(2, (1.0, 1.0, 1.0))
    place_internal(child, parent, 0.5, margin=0.05)
    # Tightest axis: 0.95 * 0.15 / 0.5
    assert child.scale == pytest.approx(np.full(3, 0.285), abs=1e-12)

    snug = make_obj(3, (0.2, 0.2, 0.2))
    place_internal(snug, parent, 0.5, margin=0.05)
    assert snug.scale == pytest.approx(np.ones(3), abs=1e-12)


def test_parent_without_bays_rejected():
    parent = make_obj(1, (1, 1, 2))
    child = make_obj(2, (0.2, 0.2, 0.2))
    with pytest.raises(NoSubspaceError):
        place_internal(child, parent, 0.5)


# --- hard constraints --------------------------------------------------------


def test_floor_and_stack_contacts_become_exact():
    room = make_room()
    graph = SceneGraph(parent={1: FLOOR_ID, 2: 1},
                       d_vertical={1: 0.0, 2: 0.0})
    table = make_obj(1, (1.0, 1.0, 0.8), center=(0.0, 0.0, 0.7))
    mug = make_obj(2, (0.4, 0.4, 0.4), center=(0.1, 0.0, 2.0))
    state = apply_hard_constraints({1: table, 2: mug}, graph, room)

    bottom, top = table.box().interval(UP)
    assert bottom == pytest.approx(0.0, abs=1e-12)
    child_bottom, _ = mug.box().interval(UP)
    assert child_bottom == pytest.approx(top, abs=1e-12)
    assert state.anchors[1] == pytest.approx([0.0, 0.0, 0.7])
    assert state.anchors[2] == pytest.approx([0.1, 0.0, 2.0])
    assert [tuple(d) for d in state.locked[1]] == [(0.0, 0.0, 1.0)]
    assert [tuple(d) for d in state.locked[2]] == [(0.0, 0.0, 1.0)]
    assert state.warnings == []


def test_wall_contact_pushed_flush_and_locked():
    room = make_room(walls=((1.0, 0.0, 0.0, -2.0),))
    graph = SceneGraph(parent={3: FLOOR_ID}, d_vertical={3: 0.0},
                       wall_edges=[(3, 0)])
    cabinet = make_obj(3, (0.4, 0.4, 0.4), center=(-1.6, 0.0, 0.2))
    state = apply_hard_constraints({3: cabinet}, graph, room)
    assert cabinet.translation[0] == pytest.approx(-1.8, abs=1e-12)
    assert set_distance(cabinet.box(), room.walls[0]) == 0.0
    assert any(np.allclose(d, [1, 0, 0]) for d in state.locked[3])
    assert state.warnings == []

    far = make_obj(4, (0.4, 0.4, 0.4), center=(-0.5, 0.0, 0.2))
    graph_far = SceneGraph(parent={4: FLOOR_ID}, d_vertical={4: 0.0},
                           wall_edges=[(4, 0)])
    state = apply_hard_constraints({4: far}, graph_far, room)
    assert far.translation[0] == pytest.approx(-1.8, abs=1e-12)
    assert any("wall contact moved" in w for w in state.warnings)


def test_ceiling_constraint_and_missing_ceiling_warning():
    graph = SceneGraph(ceiling={5})
    lamp = make_obj(5, (0.3, 0.3, 0.5), center=(0.0, 0.0, 1.0))
    state = apply_hard_constraints({5: lamp}, graph, make_room(height=2.8))
    _, top = lamp.box().interval(UP)
    assert top == pytest.approx(2.8, abs=1e-12)
    assert [tuple(d) for d in state.locked[5]] == [(0.0, 0.0, 1.0)]

    bare = RoomFrame(floor=Plane(UP, 0.0))
    lamp2 = make_obj(5, (0.3, 0.3, 0.5), center=(0.0, 0.0, 1.0))
    state = apply_hard_constraints({5: lamp2}, graph, bare)
    assert any("without a ceiling plane" in w for w in state.warnings)


def test_contained_child_centers_in_bay_and_freezes():
    room = make_room()
    graph = SceneGraph(parent={1: FLOOR_ID, 2: 1},
                       d_vertical={1: 0.0, 2: 0.5})
    shelf = make_obj(1, (1, 1, 2), center=(0.0, 0.0, 1.0),
                     subspaces=shelf_subspaces())
    book = make_obj(2, (0.2, 0.2, 0.2), center=(5.0, 5.0, 5.0))
    state = apply_hard_constraints({1: shelf, 2: book}, graph, room)
    assert book.translation == pytest.approx([0.0, 0.0, 1.0], abs=1e-12)
    assert len(state.locked[2]) == 3

    bare_shelf = make_obj(1, (1, 1, 2), center=(0.0, 0.0, 1.0))
    loose = make_obj(2, (0.2, 0.2, 0.2), center=(0.3, 0.0, 9.0))
    state = apply_hard_constraints({1: bare_shelf, 2: loose}, graph, room)
    assert any("no subspace" in w for w in state.warnings)
    # Fallback keeps the height fraction: midpoint at 0.5 of parent height.
    assert loose.box().center[2] == pytest.approx(1.0, abs=1e-12)


# --- objective and annealing -------------------------------------------------


def front_view(size=64):
    camera = CameraIntrinsics(fx=60.0, fy=60.0, cx=size / 2, cy=size / 2,
                              width=size, height=size)
    return ViewModel(camera)


def test_anchor_energy_arithmetic():
    obj = make_obj(1, (0.4, 0.4, 0.4), center=(0.0, 0.0, 2.0))
    state = OptState(placements={1: obj},
                     anchors={1: obj.translation.copy()})
    obj.translation = obj.translation + np.array([0.3, 0.0, 0.0])
    value = objective(state, {}, front_view())
    assert value == pytest.approx(0.1 * 0.09, abs=1e-12)
    value = objective(state, {}, front_view(),
                      RefineConfig(anchor_weight=0.25))
    assert value == pytest.approx(0.25 * 0.09, abs=1e-12)


def test_silhouette_agreement_is_zero_at_truth():
    view = front_view()
    obj = make_obj(1, (0.4, 0.4, 0.4), center=(0.0, 0.0, 2.0))
    truth = silhouette(obj, view, cell=0.05)
    assert truth.sum() > 0
    state = OptState(placements={1: obj},
                     anchors={1: obj.translation.copy()})
    assert objective(state, {1: truth}, view) == 0.0
    obj.translation = np.array([0.2, 0.0, 2.0])
    state.anchors[1] = obj.translation.copy()
    assert objective(state, {1: truth}, view) > 0.05


def test_anneal_recovers_shifted_object_and_respects_locks():
    view = front_view()
    target = make_obj(1, (0.4, 0.4, 0.4), center=(0.08, 0.0, 2.0))
    truth = silhouette(target, view, cell=0.05)

    def fresh_state():
        obj = make_obj(1, (0.4, 0.4, 0.4), center=(-0.12, 0.0, 2.0))
        return OptState(placements={1: obj},
                        anchors={1: obj.translation.copy()},
                        locked={1: [UP.copy()]})

    config = RefineConfig(iterations=600)
    state = fresh_state()
    start = objective(state, {1: truth}, view, config)
    final = anneal_translations(state, {1: truth}, view, config, seed=3)
    assert final <= start
    assert final == pytest.approx(
        objective(state, {1: truth}, view, config), abs=1e-12
    )
    assert state.placements[1].translation[2] == 2.0
    assert abs(state.placements[1].translation[0] - 0.08) < 0.06

    again = fresh_state()
    anneal_translations(again, {1: truth}, view, config, seed=3)
    assert np.array_equal(again.placements[1].translation,
                          state.placements[1].translation)


def test_anneal_never_creates_new_penetrations():
    view = front_view()
    # Both masks ask for the image center, but the boxes cannot both
    # be there without interpenetrating.
    bait = make_obj(9, (0.4, 0.4, 0.4), center=(0.0, 0.0, 2.0))
    truth = silhouette(bait, view, cell=0.05)

    left = make_obj(1, (0.4, 0.4, 0.4), center=(-0.21, 0.0, 2.0))
    right = make_obj(2, (0.4, 0.4, 0.4), center=(0.21, 0.0, 2.0))
    state = OptState(
        placements={1: left, 2: right},
        anchors={1: left.translation.copy(), 2: right.translation.copy()},
    )
    anneal_translations(state, {1: truth, 2: truth}, view,
                        RefineConfig(iterations=800), seed=11)
    assert not boxes_overlap(left.box(), right.box(), margin=-1e-9)


def test_trace_covers_every_proposal():
    view = front_view()
    obj = make_obj(1, (0.4, 0.4, 0.4), center=(0.0, 0.0, 2.0))
    truth = silhouette(obj, view, cell=0.05)
    state = OptState(placements={1: obj}, anchors={1: obj.translation.copy()})
    config = RefineConfig(iterations=150)
    final = anneal_translations(state, {1: truth}, view, config, seed=5)
    assert len(state.trace) == 150
    assert state.objective == final
    for step, entry in enumerate(state.trace):
        assert entry.iteration == step
        assert entry.temperature == pytest.approx(
            config.t0 * config.cooling ** step, rel=1e-12
        )
    assert any(e.accepted for e in state.trace)
    # The returned energy is the best ever seen, so no trace point beats it.
    assert all(e.objective >= final - 1e-12 for e in state.trace)


def test_trace_tail_is_monotone_once_cold():
    view = front_view()
    target = make_obj(1, (0.4, 0.4, 0.4), center=(0.1, 0.0, 2.0))
    truth = silhouette(target, view, cell=0.05)
    obj = make_obj(1, (0.4, 0.4, 0.4), center=(-0.15, 0.0, 2.0))
    state = OptState(placements={1: obj}, anchors={1: obj.translation.copy()})
    config = RefineConfig(iterations=2000)
    anneal_translations(state, {1: truth}, view, config, seed=2)
    tail = [e for e in state.trace[-200:] if e.accepted]
    for earlier, later in zip(tail, tail[1:]):
        assert later.objective <= earlier.objective + 1e-12


def test_trace_csv_roundtrip(tmp_path):
    view = front_view()
    obj = make_obj(3, (0.4, 0.4, 0.4), center=(0.0, 0.0, 2.0))
    truth = silhouette(obj, view, cell=0.05)
    state = OptState(placements={3: obj}, anchors={3: obj.translation.copy()})
    anneal_translations(state, {3: truth}, view,
                        RefineConfig(iterations=40), seed=1)
    path = tmp_path / "trace.csv"
    write_trace(path, state.trace)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "temperature", "proposal",
                       "accepted", "objective"]
    assert len(rows) == 41
    entry = state.trace[7]
    row = rows[8]
    assert int(row[0]) == 7
    assert float(row[1]) == entry.temperature
    assert row[2].split(";")[0] == "3"
    assert bool(int(row[3])) == entry.accepted
    assert float(row[4]) == entry.objective


# --- settling ----------------------------------------------------------------


def test_settle_drops_root_to_floor():
    obj = make_obj(1, (0.4, 0.4, 0.4), center=(0.0, 0.0, 0.51))
    state = OptState(placements={1: obj}, anchors={1: obj.translation.copy()})
    graph = SceneGraph(parent={1: FLOOR_ID}, d_vertical={1: 0.0})
    settle(state, graph, RefineConfig(cell=0.05))
    bottom, _ = obj.box().interval(UP)
    assert bottom == pytest.approx(0.01, abs=1e-9)


def test_settle_lands_child_on_parent_voxels():
    table = make_obj(1, (1.0, 1.0, 0.8), center=(0.0, 0.0, 0.4))
    mug = make_obj(2, (0.4, 0.4, 0.4), center=(0.0, 0.0, 1.3))
    state = OptState(
        placements={1: table, 2: mug},
        anchors={1: table.translation.copy(), 2: mug.translation.copy()},
    )
    graph = SceneGraph(parent={1: FLOOR_ID, 2: 1},
                       d_vertical={1: 0.0, 2: 0.0})
    settle(state, graph, RefineConfig(cell=0.05))
    assert mug.translation[2] == pytest.approx(1.0, abs=1e-9)
    assert state.warnings == []


def test_settle_warns_when_columns_miss():
    table = make_obj(1, (1.0, 1.0, 0.8), center=(0.0, 0.0, 0.4))
    mug = make_obj(2, (0.4, 0.4, 0.4), center=(2.0, 0.0, 1.3))
    state = OptState(
        placements={1: table, 2: mug},
        anchors={1: table.translation.copy(), 2: mug.translation.copy()},
    )
    graph = SceneGraph(parent={1: FLOOR_ID, 2: 1},
                       d_vertical={1: 0.0, 2: 0.0})
    settle(state, graph, RefineConfig(cell=0.05))
    assert mug.translation[2] == pytest.approx(1.3, abs=1e-12)
    assert any("no voxel column" in w for w in state.warnings)

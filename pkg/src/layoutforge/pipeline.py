"""End-to-end reconstruction: scene bundle in, placed asset list out.

The stages mirror how a person would work the problem: recover the
room box from the background depth, move everything into room
coordinates, fit a box to every masked object, grow the support tree,
pick an asset and pose per mask, then let the hard constraints,
annealer, and settling pass reconcile the ensemble.  Every stage is
callable on its own so the command line can run and cache them
separately.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BundleError, FineSelectionError
from .geometry import (
    Obb,
    RansacConfig,
    RoomFrame,
    depth_to_pointcloud,
    fit_obb,
    fit_room_planes,
    obb_vertical_orientations,
    room_basis,
    set_distance,
    transform_room,
)
from .ingest.types import LayoutObject, OracleRecord, SceneBundle
from .pose import (
    HomographyConfig,
    PatchFeatureMap,
    coarse_select,
    fine_select,
    geometric_enhance,
    init_translation,
    optimize_scale,
)
from .refine import (
    PlacedObject,
    RefineConfig,
    ViewModel,
    anneal_translations,
    apply_hard_constraints,
    local_refine,
    settle,
)
from .retrieval import RetrievalScore, retrieve
from .scenegraph import SceneGraph, build_support_tree, refine_obbs

log = logging.getLogger(__name__)

UP = np.array([0.0, 0.0, 1.0])


@dataclass
class ReconstructConfig:
    """Stage knobs, with each module's own config nested inside."""

    contact_eps: float = 0.05
    wall_tolerance: float = 0.05
    retrieval_alpha: float = 0.1
    coarse_k: int = 10
    fine_k: int = 4
    patch_px: float = 14.0
    ransac: RansacConfig = field(default_factory=RansacConfig)
    homography: HomographyConfig = field(default_factory=HomographyConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    anneal_seed: int = 0
    jobs: int = 1


@dataclass
class RoomEstimate:
    """Fitted room planes plus the camera-to-room rigid transform."""

    room: RoomFrame  # room coordinates: floor at z = 0, up = +z
    rotation: np.ndarray  # x_room = rotation @ x_camera + translation
    translation: np.ndarray

    def view(self, camera) -> ViewModel:
        """Projection of room-frame points back into the source image."""
        return ViewModel(
            camera,
            rotation=self.rotation.T,
            translation=-(self.rotation.T @ self.translation),
        )

    def to_room(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


@dataclass
class SceneResult:
    """Everything the full pipeline produces for one bundle.

    ``constraint_warnings`` is the subset of ``warnings`` signalling an
    infeasible or dropped constraint, for callers that escalate those.
    """

    layout: list[LayoutObject]
    graph: SceneGraph
    room: RoomFrame
    camera_rotation: np.ndarray
    camera_translation: np.ndarray
    obbs: dict[int, Obb]  # refined boxes, room frame
    placements: dict[int, PlacedObject]
    warnings: list[str] = field(default_factory=list)
    constraint_warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def estimate_room(
    bundle: SceneBundle, config: ReconstructConfig | None = None
) -> RoomEstimate:
    """Fit the room to background depth and derive room coordinates.

    Raises:
        NoFloorError: the background supports no dominant plane.
    """
    config = config or ReconstructConfig()
    foreground = np.zeros(bundle.depth.shape, dtype=bool)
    for mask in bundle.masks.values():
        foreground |= mask.pixels
    background = (bundle.depth > 0) & ~foreground
    cloud = depth_to_pointcloud(bundle.depth, bundle.camera, background)
    room_cam = fit_room_planes(cloud, config.ransac)
    rot, t = room_basis(room_cam)
    return RoomEstimate(
        room=transform_room(room_cam, rot, t), rotation=rot, translation=t
    )


def fit_object_boxes(
    bundle: SceneBundle, estimate: RoomEstimate
) -> dict[int, Obb]:
    """Fit an upright box to each mask's cloud, in room coordinates.

    Masks with no valid depth are skipped with a log entry; the graph
    stage will report them as unplaceable.
    """
    out: dict[int, Obb] = {}
    for mask_id in sorted(bundle.masks):
        pixels = bundle.masks[mask_id].pixels & (bundle.depth > 0)
        if int(pixels.sum()) < 3:
            log.warning("mask %d has fewer than 3 depth samples, skipping", mask_id)
            continue
        cloud = depth_to_pointcloud(bundle.depth, bundle.camera, pixels)
        out[mask_id] = fit_obb(estimate.to_room(cloud), up=UP)
    return out


def _remapped_oracle(
    oracle: OracleRecord, obbs: dict[int, Obb], room: RoomFrame
) -> OracleRecord:
    """Re-index wall contacts against the fitted wall list.

    The oracle's wall indices refer to whatever enumeration the
    annotation used; the only frame shared with the fit is geometry, so
    each contact moves to the nearest fitted wall.
    """
    if not oracle.wall_contacts or not room.walls:
        return oracle
    contacts = {}
    for mask_id in sorted(oracle.wall_contacts):
        if mask_id not in obbs:
            continue
        dists = [set_distance(obbs[mask_id], wall) for wall in room.walls]
        contacts[mask_id] = int(np.argmin(dists))
    return replace(oracle, wall_contacts=contacts)


def build_graph(
    bundle: SceneBundle,
    obbs: dict[int, Obb],
    estimate: RoomEstimate,
    config: ReconstructConfig | None = None,
) -> tuple[SceneGraph, dict[int, Obb]]:
    """Support tree plus leveled boxes.

    Raises:
        MissingOracleError: the bundle has no oracle record.
    """
    config = config or ReconstructConfig()
    oracle = bundle.oracle
    if oracle is not None:
        oracle = _remapped_oracle(oracle, obbs, estimate.room)
    graph = build_support_tree(
        replace(bundle, oracle=oracle),
        obbs,
        eps=config.contact_eps,
        room=estimate.room,
        wall_tolerance=config.wall_tolerance,
    )
    return graph, refine_obbs(graph, obbs, estimate.room)


def _estimate_rotation(
    bundle: SceneBundle,
    mask_id: int,
    asset,
    obb: Obb,
    estimate: RoomEstimate,
    config: ReconstructConfig,
) -> tuple[np.ndarray, str | None]:
    if not asset.template_views:
        # Library entry without template renders: the box is all we have.
        rotation = (
            np.eye(3)
            if obb.degenerate
            else obb_vertical_orientations(obb, UP)[0]
        )
        return rotation, (
            f"mask {mask_id}: asset {asset.asset_id} has no template views, "
            "keeping the box orientation"
        )
    query = PatchFeatureMap(bundle.features.query_patches(mask_id), config.patch_px)
    candidates = coarse_select(asset, query, bundle.features, k=config.coarse_k)
    note = None
    try:
        candidates = fine_select(
            asset, query, bundle.features, candidates,
            k=config.fine_k, config=config.homography,
        )
    except FineSelectionError:
        candidates = candidates[:1]
        note = (
            f"mask {mask_id}: no candidate view supports a homography, "
            "keeping the coarse best"
        )
    # Template rotations are object-to-camera; move them into room
    # coordinates before comparing against the fitted box.
    candidates = [
        replace(c, rotation=estimate.rotation @ c.rotation) for c in candidates
    ]
    return geometric_enhance(candidates, obb, UP).rotation, note


def rank_assets(
    bundle: SceneBundle,
    graph: SceneGraph,
    refined: dict[int, Obb],
    config: ReconstructConfig | None = None,
) -> dict[int, list[RetrievalScore]]:
    """Rank library assets for every non-excluded mask.

    Raises:
        BundleError: the bundle carries no asset manifest.
    """
    config = config or ReconstructConfig()
    if bundle.manifest is None:
        raise BundleError("asset selection needs an asset manifest")
    out: dict[int, list[RetrievalScore]] = {}
    for mask_id in sorted(bundle.masks):
        if mask_id not in refined or mask_id in graph.excluded:
            continue
        out[mask_id] = retrieve(
            mask_id, bundle,
            alpha=config.retrieval_alpha,
            query_dims=2.0 * refined[mask_id].half_extents,
        )
    return out


def pose_placements(
    bundle: SceneBundle,
    estimate: RoomEstimate,
    refined: dict[int, Obb],
    ranked: dict[int, list[RetrievalScore]],
    config: ReconstructConfig | None = None,
) -> tuple[dict[int, PlacedObject], list[str]]:
    """Estimate rotation, scale, and starting translation per mask.

    Takes the top-ranked asset for each mask.  Objects are independent,
    so ``config.jobs`` workers may run them concurrently; results do
    not depend on the worker count.
    """
    config = config or ReconstructConfig()
    ids = sorted(ranked)

    def build(mask_id: int) -> tuple[PlacedObject, str | None]:
        obb = refined[mask_id]
        asset = bundle.manifest.assets[ranked[mask_id][0].asset_id]
        rotation, note = _estimate_rotation(
            bundle, mask_id, asset, obb, estimate, config
        )
        scale = optimize_scale(asset, rotation, obb, mode=asset.scale_mode).scale
        placed = PlacedObject(
            mask_id=mask_id,
            asset=asset,
            rotation=rotation,
            translation=init_translation(obb),
            scale=scale,
        )
        return placed, note

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(build, ids))
    else:
        results = [build(i) for i in ids]

    placements: dict[int, PlacedObject] = {}
    warnings: list[str] = []
    for mask_id, (placed, note) in zip(ids, results):
        placements[mask_id] = placed
        if note:
            warnings.append(note)
    return placements, warnings


def choose_placements(
    bundle: SceneBundle,
    estimate: RoomEstimate,
    graph: SceneGraph,
    refined: dict[int, Obb],
    config: ReconstructConfig | None = None,
) -> tuple[dict[int, PlacedObject], list[str]]:
    """Retrieve an asset and estimate pose and scale for every mask.

    Excluded masks are skipped.

    Raises:
        BundleError: the bundle carries no asset manifest.
    """
    ranked = rank_assets(bundle, graph, refined, config)
    return pose_placements(bundle, estimate, refined, ranked, config)


def reconstruct(
    bundle: SceneBundle, config: ReconstructConfig | None = None
) -> SceneResult:
    """Run every stage on one loaded bundle.

    Deterministic for a fixed bundle and config: plane fitting and
    annealing draw from seeded generators, and worker count never
    changes results.
    """
    config = config or ReconstructConfig()
    timings: dict[str, float] = {}

    start = time.perf_counter()
    estimate = estimate_room(bundle, config)
    timings["room"] = time.perf_counter() - start

    start = time.perf_counter()
    obbs = fit_object_boxes(bundle, estimate)
    timings["boxes"] = time.perf_counter() - start

    start = time.perf_counter()
    graph, refined = build_graph(bundle, obbs, estimate, config)
    timings["graph"] = time.perf_counter() - start

    start = time.perf_counter()
    placements, notes = choose_placements(bundle, estimate, graph, refined, config)
    timings["assets"] = time.perf_counter() - start

    start = time.perf_counter()
    local_refine(placements, graph, estimate.room, config.refine)
    state = apply_hard_constraints(placements, graph, estimate.room, config.refine)
    masks = {i: bundle.masks[i].pixels for i in placements}
    anneal_translations(
        state, masks, estimate.view(bundle.camera), config.refine,
        seed=config.anneal_seed,
    )
    settle(state, graph, config.refine)
    timings["refine"] = time.perf_counter() - start

    layout = [
        LayoutObject(
            asset_id=placed.asset.asset_id,
            source_mask=mask_id,
            rotation=placed.rotation.copy(),
            translation=placed.translation.copy(),
            scale=placed.scale.copy(),
        )
        for mask_id, placed in sorted(state.placements.items())
    ]
    constraint_warnings = list(state.warnings)
    for mask_id in sorted(graph.excluded):
        constraint_warnings.append(
            f"mask {mask_id} has no support relation and was left out"
        )
    warnings = list(bundle.warnings) + notes + constraint_warnings

    return SceneResult(
        layout=layout,
        graph=graph,
        room=estimate.room,
        camera_rotation=estimate.rotation,
        camera_translation=estimate.translation,
        obbs=refined,
        placements=state.placements,
        warnings=warnings,
        constraint_warnings=constraint_warnings,
        timings=timings,
    )

"""Command line front end: staged reconstruction, synthesis, evaluation.

Subcommands ``parse``, ``graph``, ``retrieve`` and ``pose`` run the
pipeline up to the named stage; ``layout`` runs everything through
settling and evaluation; ``synth`` writes a synthetic bundle with
ground truth; ``eval`` compares two layout files.  Every stage leaves
its artifacts under the ``--out`` directory and records a content hash
in ``.cache.json`` there, so a rerun recomputes only the stages whose
inputs actually changed and a completed stage always reproduces its
output byte for byte.

Exit codes: 0 on success, 2 for unusable input, 3 when a stage fails,
and 4 when ``--strict`` escalates an infeasible-constraint warning.
The environment variable LAYOUTFORGE_SEED overrides every seed flag.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleError, LayoutForgeError
from .geometry import Obb, RoomFrame, geodesic_angle
from .ingest.bundle import load_bundle, load_layout, read_json, write_json
from .ingest.types import Asset, AssetManifest, LayoutObject, SceneBundle
from .metrics import (
    EvalReport,
    layout_similarity,
    primary_ids,
    recovery_rates,
    rotation_auc,
    scene_checks,
    support_agreement,
    translation_auc,
)
from .pipeline import (
    ReconstructConfig,
    RoomEstimate,
    build_graph,
    estimate_room,
    fit_object_boxes,
    pose_placements,
    rank_assets,
)
from .refine import (
    OptState,
    PlacedObject,
    anneal_translations,
    apply_hard_constraints,
    local_refine,
    settle,
    write_trace,
)
from .retrieval import RetrievalScore
from .scenegraph import SceneGraph
from .synth import MAX_OBJECTS, generate_scene

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STAGE = 3
EXIT_INFEASIBLE = 4

STAGES = ("parse", "graph", "retrieve", "pose", "refine", "settle", "eval")


@dataclass
class PipelineConfig:
    """One invocation: which stages run, on what, with which knobs.

    ``stages`` maps stage names to flags and must enable a contiguous
    prefix of the stage order, which is how stage dependencies (pose
    needs graph, refine needs pose, ...) are enforced.
    """

    stages: dict[str, bool]
    bundle: Path
    out: Path
    assets: Path | None = None
    seed: int = 0
    strict: bool = False
    trace: bool = False
    export_obj: bool = False
    modules: ReconstructConfig = field(default_factory=ReconstructConfig)

    def __post_init__(self):
        unknown = sorted(set(self.stages) - set(STAGES))
        if unknown:
            raise ValueError(f"unknown stages: {', '.join(unknown)}")
        enabled = [s for s in STAGES if self.stages.get(s)]
        if not enabled:
            raise ValueError("no stage enabled")
        if enabled != list(STAGES[: len(enabled)]):
            needed = STAGES[: STAGES.index(enabled[-1]) + 1]
            raise ValueError(
                f"stage {enabled[-1]!r} needs {', '.join(needed[:-1])} enabled too"
            )
        self.modules.anneal_seed = self.seed

    def enabled(self) -> list[str]:
        return [s for s in STAGES if self.stages.get(s)]


def stages_through(last: str) -> dict[str, bool]:
    """Stage flags enabling everything up to and including ``last``."""
    return {name: STAGES.index(name) <= STAGES.index(last) for name in STAGES}


class _WarningTap(logging.Handler):
    """Collects package log warnings emitted while a stage computes."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


class _StageFailure(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _digest_tree(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(path.relative_to(root).as_posix().encode())
            h.update(path.read_bytes())
    return h.hexdigest()


# Only knobs that can change a stage's output take part in its cache
# key; worker count is excluded because results never depend on it.
def _stage_knobs(stage: str, config: PipelineConfig) -> dict:
    m = config.modules
    if stage == "parse":
        return {"ransac": dataclasses.asdict(m.ransac)}
    if stage == "graph":
        return {"contact_eps": m.contact_eps, "wall_tolerance": m.wall_tolerance}
    if stage == "retrieve":
        return {"alpha": m.retrieval_alpha}
    if stage == "pose":
        return {
            "coarse_k": m.coarse_k,
            "fine_k": m.fine_k,
            "patch_px": m.patch_px,
            "homography": dataclasses.asdict(m.homography),
        }
    if stage == "refine":
        return {
            "refine": dataclasses.asdict(m.refine),
            "seed": m.anneal_seed,
            "trace": config.trace,
        }
    if stage == "settle":
        return {"refine": dataclasses.asdict(m.refine), "obj": config.export_obj}
    return {}


class Pipeline:
    """Runs the enabled stage prefix against one bundle with caching."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.out)
        self.bundle: SceneBundle | None = None
        self.estimate: RoomEstimate | None = None
        self.obbs: dict[int, Obb] = {}
        self.graph: SceneGraph | None = None
        self.refined: dict[int, Obb] = {}
        self.ranked: dict[int, list[RetrievalScore]] = {}
        self.state: OptState | None = None
        self.layout: list[LayoutObject] = []
        self.infeasible: list[str] = []
        self._cache: dict = {}
        self._input_digest: str | None = None

    # -- cache plumbing ------------------------------------------------------

    def _cache_path(self) -> Path:
        return self.out / ".cache.json"

    def _load_cache(self) -> None:
        path = self._cache_path()
        if path.is_file():
            try:
                self._cache = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                log.warning("ignoring unreadable stage cache %s", path)
                self._cache = {}

    def _save_cache(self) -> None:
        write_json(self._cache_path(), self._cache)

    def _stage_key(self, stage: str, upstream: str) -> str:
        if self._input_digest is None:
            digest = _digest_tree(Path(self.config.bundle))
            if self.config.assets is not None:
                digest += _digest_tree(Path(self.config.assets))
            self._input_digest = digest
        payload = json.dumps(
            {
                "stage": stage,
                "inputs": self._input_digest,
                "knobs": _stage_knobs(stage, self.config),
                "upstream": upstream,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def _fresh(self, stage: str, key: str) -> bool:
        record = self._cache.get(stage)
        if not record or record.get("key") != key:
            return False
        return all((self.out / name).is_file() for name in record["artifacts"])

    # -- driver ----------------------------------------------------------

    def run(self) -> int:
        """Execute the enabled stages; returns a process exit code."""
        try:
            self.bundle = load_bundle(self.config.bundle, self.config.assets)
        except (LayoutForgeError, OSError) as exc:
            print(f"input error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        self.out.mkdir(parents=True, exist_ok=True)
        self._load_cache()

        upstream = ""
        for stage in self.config.enabled():
            key = self._stage_key(stage, upstream)
            upstream = key
            if self._fresh(stage, key):
                record = self._cache[stage]
                try:
                    getattr(self, f"_load_{stage}")(record["artifacts"])
                except (LayoutForgeError, OSError, KeyError, ValueError) as exc:
                    # A corrupt artifact is not an input error; recompute.
                    log.warning("cache for stage %s unusable (%s)", stage, exc)
                else:
                    self.infeasible.extend(record.get("infeasible", []))
                    for message in record.get("warnings", []):
                        print(f"warning: {message}", file=sys.stderr)
                    for message in record.get("infeasible", []):
                        print(f"infeasible: {message}", file=sys.stderr)
                    print(f"stage {stage}: cached", file=sys.stderr)
                    continue
            tap = _WarningTap()
            package_log = logging.getLogger("layoutforge")
            package_log.addHandler(tap)
            started = time.perf_counter()
            try:
                artifacts, warnings, infeasible = getattr(self, f"_run_{stage}")()
            except Exception as exc:
                raise _StageFailure(stage, exc) from exc
            finally:
                package_log.removeHandler(tap)
            warnings = tap.messages + warnings
            self._cache[stage] = {
                "key": key,
                "artifacts": artifacts,
                "warnings": warnings,
                "infeasible": infeasible,
            }
            self._save_cache()
            self.infeasible.extend(infeasible)
            for message in warnings:
                print(f"warning: {message}", file=sys.stderr)
            for message in infeasible:
                print(f"infeasible: {message}", file=sys.stderr)
            print(
                f"stage {stage}: ok ({time.perf_counter() - started:.1f} s)",
                file=sys.stderr,
            )

        if self.infeasible and self.config.strict:
            print("strict mode: infeasible constraints reported", file=sys.stderr)
            return EXIT_INFEASIBLE
        return EXIT_OK

    # -- parse ----------------------------------------------------------

    def _run_parse(self):
        self.estimate = estimate_room(self.bundle, self.config.modules)
        self.obbs = fit_object_boxes(self.bundle, self.estimate)
        write_json(
            self.out / "room.json",
            {
                "room": self.estimate.room.to_json(),
                "rotation": [float(v) for v in self.estimate.rotation.ravel()],
                "translation": [float(v) for v in self.estimate.translation],
            },
        )
        write_json(
            self.out / "boxes.json",
            {"boxes": {str(k): v.to_json() for k, v in self.obbs.items()}},
        )
        return ["room.json", "boxes.json"], [], []

    def _load_parse(self, artifacts):
        room = json.loads((self.out / "room.json").read_text(encoding="utf-8"))
        self.estimate = RoomEstimate(
            room=RoomFrame.from_json(room["room"]),
            rotation=np.asarray(room["rotation"], float).reshape(3, 3),
            translation=np.asarray(room["translation"], float),
        )
        boxes = json.loads((self.out / "boxes.json").read_text(encoding="utf-8"))
        self.obbs = {int(k): Obb.from_json(v) for k, v in boxes["boxes"].items()}

    # -- graph ----------------------------------------------------------

    def _run_graph(self):
        self.graph, self.refined = build_graph(
            self.bundle, self.obbs, self.estimate, self.config.modules
        )
        write_json(self.out / "graph.json", self.graph.to_json())
        write_json(
            self.out / "boxes_refined.json",
            {"boxes": {str(k): v.to_json() for k, v in self.refined.items()}},
        )
        infeasible = [
            f"mask {mask_id} has no support relation and was left out"
            for mask_id in sorted(self.graph.excluded)
        ]
        return ["graph.json", "boxes_refined.json"], [], infeasible

    def _load_graph(self, artifacts):
        obj = json.loads((self.out / "graph.json").read_text(encoding="utf-8"))
        self.graph = SceneGraph.from_json(obj)
        boxes = json.loads(
            (self.out / "boxes_refined.json").read_text(encoding="utf-8")
        )
        self.refined = {int(k): Obb.from_json(v) for k, v in boxes["boxes"].items()}

    # -- retrieve ---------------------------------------------------------

    def _run_retrieve(self):
        self.ranked = rank_assets(
            self.bundle, self.graph, self.refined, self.config.modules
        )
        write_json(
            self.out / "retrieval.json",
            {
                "ranked": {
                    str(mask_id): [dataclasses.asdict(s) for s in scores]
                    for mask_id, scores in self.ranked.items()
                }
            },
        )
        return ["retrieval.json"], [], []

    def _load_retrieve(self, artifacts):
        obj = json.loads((self.out / "retrieval.json").read_text(encoding="utf-8"))
        self.ranked = {
            int(mask_id): [RetrievalScore(**entry) for entry in scores]
            for mask_id, scores in obj["ranked"].items()
        }

    # -- pose -----------------------------------------------------------

    def _placements_from(self, objects: list[dict]) -> dict[int, PlacedObject]:
        out = {}
        for entry in objects:
            obj = LayoutObject.from_json(entry)
            out[obj.source_mask] = PlacedObject(
                mask_id=obj.source_mask,
                asset=self.bundle.manifest.assets[obj.asset_id],
                rotation=obj.rotation,
                translation=obj.translation,
                scale=obj.scale,
            )
        return out

    @staticmethod
    def _placement_rows(placements: dict[int, PlacedObject]) -> list[dict]:
        return [
            LayoutObject(
                asset_id=placed.asset.asset_id,
                source_mask=mask_id,
                rotation=placed.rotation,
                translation=placed.translation,
                scale=placed.scale,
            ).to_json()
            for mask_id, placed in sorted(placements.items())
        ]

    def _run_pose(self):
        placements, notes = pose_placements(
            self.bundle, self.estimate, self.refined, self.ranked,
            self.config.modules,
        )
        self.state = OptState(placements=placements, anchors={})
        write_json(
            self.out / "poses.json",
            {"objects": self._placement_rows(placements), "notes": notes},
        )
        return ["poses.json"], list(notes), []

    def _load_pose(self, artifacts):
        obj = json.loads((self.out / "poses.json").read_text(encoding="utf-8"))
        self.state = OptState(
            placements=self._placements_from(obj["objects"]), anchors={}
        )

    # -- refine -----------------------------------------------------------

    def _run_refine(self):
        placements = self.state.placements
        modules = self.config.modules
        local_refine(placements, self.graph, self.estimate.room, modules.refine)
        state = apply_hard_constraints(
            placements, self.graph, self.estimate.room, modules.refine
        )
        masks = {i: self.bundle.masks[i].pixels for i in placements}
        anneal_translations(
            state, masks, self.estimate.view(self.bundle.camera), modules.refine,
            seed=modules.anneal_seed,
        )
        self.state = state
        artifacts = ["refined.json"]
        write_json(
            self.out / "refined.json",
            {
                "objects": self._placement_rows(state.placements),
                "objective": state.objective,
                "warnings": list(state.warnings),
            },
        )
        if self.config.trace:
            write_trace(self.out / "trace.csv", state.trace)
            artifacts.append("trace.csv")
        return artifacts, [], list(state.warnings)

    def _load_refine(self, artifacts):
        obj = json.loads((self.out / "refined.json").read_text(encoding="utf-8"))
        self.state = OptState(
            placements=self._placements_from(obj["objects"]),
            anchors={},
            warnings=list(obj["warnings"]),
            objective=obj["objective"],
        )

    # -- settle -----------------------------------------------------------

    def _run_settle(self):
        before = len(self.state.warnings)
        settle(self.state, self.graph, self.config.modules.refine)
        new_warnings = list(self.state.warnings[before:])
        self.layout = [
            LayoutObject(
                asset_id=placed.asset.asset_id,
                source_mask=mask_id,
                rotation=placed.rotation.copy(),
                translation=placed.translation.copy(),
                scale=placed.scale.copy(),
            )
            for mask_id, placed in sorted(self.state.placements.items())
        ]
        write_json(
            self.out / "layout.json",
            {"objects": [obj.to_json() for obj in self.layout]},
        )
        artifacts = ["layout.json"]
        if self.config.export_obj:
            export_boxes_obj(
                self.out / "layout.obj",
                {i: p.box() for i, p in sorted(self.state.placements.items())},
                {i: p.asset.asset_id for i, p in self.state.placements.items()},
            )
            artifacts.append("layout.obj")
        return artifacts, [], new_warnings

    def _load_settle(self, artifacts):
        obj = json.loads((self.out / "layout.json").read_text(encoding="utf-8"))
        self.layout = [LayoutObject.from_json(entry) for entry in obj["objects"]]
        self.state = OptState(
            placements=self._placements_from(obj["objects"]), anchors={}
        )

    # -- eval -------------------------------------------------------------

    def _run_eval(self):
        report, agreement = evaluate_scene(
            self.state.placements,
            self.graph,
            self.estimate,
            Path(self.bundle.path) / "gt",
            self.config.modules.refine.cell,
        )
        payload = report.to_json()
        payload["support_agreement"] = agreement
        write_json(self.out / "eval.json", payload)
        return ["eval.json"], [], []

    def _load_eval(self, artifacts):
        pass  # nothing downstream consumes the report


def evaluate_scene(
    placements: dict[int, PlacedObject],
    graph: SceneGraph,
    estimate: RoomEstimate,
    gt_dir: Path,
    cell: float,
) -> tuple[EvalReport, float | None]:
    """Physical checks plus, when ground truth exists, truth comparison.

    The fitted frame and the annotation frame share only the camera, so
    poses are aligned through the recorded camera pose before scoring.
    Returns the report and the support-edge agreement (None without a
    ground-truth graph).
    """
    report = EvalReport(
        checks=scene_checks(placements, graph, estimate.room, cell=cell)
    )
    agreement = None
    if not (gt_dir / "layout.json").is_file():
        return report, agreement
    gt_layout, gt_graph = load_layout(gt_dir)
    if gt_graph is not None:
        agreement = support_agreement(graph, gt_graph)
    pose_path = gt_dir / "room.json"
    if not pose_path.is_file():
        return report, agreement
    pose = json.loads(pose_path.read_text(encoding="utf-8"))
    cam_rot = np.asarray(pose["camera_rotation"], float).reshape(3, 3)
    cam_pos = np.asarray(pose["camera_position"], float)
    to_world = cam_rot @ estimate.rotation.T

    aligned = {
        mask_id: PlacedObject(
            mask_id=mask_id,
            asset=placed.asset,
            rotation=to_world @ placed.rotation,
            translation=to_world @ (placed.translation - estimate.translation)
            + cam_pos,
            scale=placed.scale,
        )
        for mask_id, placed in placements.items()
    }
    truth = {
        obj.source_mask: PlacedObject(
            mask_id=obj.source_mask,
            asset=placements[obj.source_mask].asset
            if obj.source_mask in placements
            else _unit_asset(obj.asset_id),
            rotation=obj.rotation,
            translation=obj.translation,
            scale=obj.scale,
        )
        for obj in gt_layout
    }
    # The true asset may differ from the retrieved one; score geometry
    # against what the truth actually names when it is resolvable.
    manifest_assets = {p.asset.asset_id: p.asset for p in placements.values()}
    for obj in gt_layout:
        truth[obj.source_mask].asset = manifest_assets.get(
            obj.asset_id, truth[obj.source_mask].asset
        )

    report.similarity = layout_similarity(aligned, truth)
    estimated = {
        i: (p.asset.category, p.translation) for i, p in aligned.items()
    }
    reference = {
        i: (p.asset.category, p.translation) for i, p in truth.items()
    }
    primary = primary_ids(placements, graph, estimate.room)
    report.recovery = recovery_rates(estimated, reference, primary=primary)
    if report.recovery.matches:
        rot_errors = []
        t_errors = []
        for est_id, ref_id in report.recovery.matches:
            rot_errors.append(
                np.degrees(
                    geodesic_angle(aligned[est_id].rotation, truth[ref_id].rotation)
                )
            )
            t_errors.append(
                float(
                    np.linalg.norm(
                        aligned[est_id].translation - truth[ref_id].translation
                    )
                )
            )
        report.rotation_auc = rotation_auc(np.asarray(rot_errors))
        report.translation_auc = translation_auc(np.asarray(t_errors))
    return report, agreement


def _unit_asset(asset_id: str) -> Asset:
    """Stand-in asset when no manifest resolves an id: a unit box."""
    return Asset(
        asset_id=asset_id,
        category=asset_id,
        extents=np.ones(3),
        scale_mode="fully_free",
    )


# Corner order of Obb.vertices(): sign-sorted, z fastest; each face
# quad below winds outward under that order.
_BOX_QUADS = (
    (0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
    (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3),
)


def export_boxes_obj(
    path: str | Path, boxes: dict[int, Obb], names: dict[int, str]
) -> None:
    """Write posed boxes as a Wavefront OBJ for quick inspection."""
    lines = []
    offset = 0
    for mask_id in sorted(boxes):
        lines.append(f"o {names[mask_id]}_{mask_id}")
        for corner in boxes[mask_id].vertices():
            lines.append("v %.6f %.6f %.6f" % tuple(corner))
        for a, b, c, d in _BOX_QUADS:
            lines.append(f"f {offset + a + 1} {offset + b + 1} {offset + c + 1}")
            lines.append(f"f {offset + a + 1} {offset + c + 1} {offset + d + 1}")
        offset += 8
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- standalone evaluation ---------------------------------------------------


def _load_layout_arg(path: Path) -> tuple[list[LayoutObject], SceneGraph | None]:
    if not path.exists():
        raise BundleError("layout not found", str(path))
    return load_layout(path)


def compare_layouts(
    pred_path: Path, gt_path: Path, assets_dir: Path | None = None
) -> dict:
    """Score one layout file against another in a shared frame.

    Without an asset manifest every object is treated as a unit box, so
    the similarity is a coarse occupancy match; recovery matching uses
    the asset id as its own category either way.
    """
    pred_layout, pred_graph = _load_layout_arg(pred_path)
    gt_layout, gt_graph = _load_layout_arg(gt_path)
    assets = {}
    if assets_dir is not None:
        manifest_path = (
            assets_dir / "assets.json" if assets_dir.is_dir() else assets_dir
        )
        assets = AssetManifest.from_json(read_json(manifest_path)).assets

    def wrap(layout: list[LayoutObject]) -> dict[int, PlacedObject]:
        return {
            obj.source_mask: PlacedObject(
                mask_id=obj.source_mask,
                asset=assets.get(obj.asset_id) or _unit_asset(obj.asset_id),
                rotation=obj.rotation,
                translation=obj.translation,
                scale=obj.scale,
            )
            for obj in layout
        }

    pred, truth = wrap(pred_layout), wrap(gt_layout)
    report = EvalReport(similarity=layout_similarity(pred, truth))
    report.recovery = recovery_rates(
        {i: (p.asset.category, p.translation) for i, p in pred.items()},
        {i: (p.asset.category, p.translation) for i, p in truth.items()},
    )
    if report.recovery.matches:
        rot_errors = np.asarray([
            np.degrees(geodesic_angle(pred[a].rotation, truth[b].rotation))
            for a, b in report.recovery.matches
        ])
        t_errors = np.asarray([
            float(np.linalg.norm(pred[a].translation - truth[b].translation))
            for a, b in report.recovery.matches
        ])
        report.rotation_auc = rotation_auc(rot_errors)
        report.translation_auc = translation_auc(t_errors)
    payload = report.to_json()
    payload["support_agreement"] = (
        support_agreement(pred_graph, gt_graph)
        if pred_graph is not None and gt_graph is not None
        else None
    )
    return payload


# --- argument handling -------------------------------------------------------


def _add_stage_command(sub, name: str, help_text: str) -> None:
    cmd = sub.add_parser(name, help=help_text)
    cmd.add_argument("--bundle", required=True, type=Path,
                     help="scene bundle directory")
    cmd.add_argument("--out", required=True, type=Path,
                     help="work directory for stage artifacts")
    cmd.add_argument("--assets", type=Path, default=None,
                     help="asset library directory overriding the bundle's")
    cmd.add_argument("--seed", type=int, default=0,
                     help="annealer seed")
    cmd.add_argument("--jobs", type=int, default=1,
                     help="worker cap for per-object stages")
    cmd.add_argument("--strict", action="store_true",
                     help="exit 4 when a constraint is infeasible")
    cmd.add_argument("--trace", action="store_true",
                     help="write the annealer proposal log as trace.csv")
    cmd.add_argument("--export-obj", action="store_true",
                     help="also write posed boxes as layout.obj")
    cmd.set_defaults(command=name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layoutforge",
        description="Reconstruct a placed-asset layout from a scene bundle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_stage_command(sub, "parse", "fit the room and per-object boxes")
    _add_stage_command(sub, "graph", "infer the support structure")
    _add_stage_command(sub, "retrieve", "rank library assets per object")
    _add_stage_command(sub, "pose", "estimate rotation, scale, translation")
    _add_stage_command(sub, "layout", "run the full pipeline through eval")

    ev = sub.add_parser("eval", help="compare two layout files")
    ev.add_argument("--pred", required=True, type=Path,
                    help="predicted layout file or directory")
    ev.add_argument("--gt", required=True, type=Path,
                    help="reference layout file or directory")
    ev.add_argument("--assets", type=Path, default=None,
                    help="bundle directory providing asset extents")
    ev.add_argument("--out", type=Path, default=None,
                    help="directory for eval.json (default: print)")
    ev.set_defaults(command="eval")

    sy = sub.add_parser("synth", help="generate a synthetic bundle")
    sy.add_argument("--out", required=True, type=Path,
                    help="bundle directory to create")
    sy.add_argument("--seed", type=int, default=0, help="generator seed")
    sy.add_argument("--objects", type=int, default=None,
                    help=f"placed object count (3..{MAX_OBJECTS})")
    sy.add_argument("--depth-noise", type=float, default=0.0,
                    help="gaussian depth noise sigma in meters")
    sy.set_defaults(command="synth")
    return parser


_STAGE_FOR_COMMAND = {
    "parse": "parse",
    "graph": "graph",
    "retrieve": "retrieve",
    "pose": "pose",
    "layout": "eval",
}


def _run_stage_command(args: argparse.Namespace) -> int:
    config = PipelineConfig(
        stages=stages_through(_STAGE_FOR_COMMAND[args.command]),
        bundle=args.bundle,
        out=args.out,
        assets=args.assets,
        seed=args.seed,
        strict=args.strict,
        trace=args.trace,
        export_obj=args.export_obj,
        modules=ReconstructConfig(jobs=max(1, args.jobs)),
    )
    try:
        return Pipeline(config).run()
    except _StageFailure as exc:
        print(exc, file=sys.stderr)
        return EXIT_STAGE


def _run_eval_command(args: argparse.Namespace) -> int:
    try:
        payload = compare_layouts(args.pred, args.gt, args.assets)
    except (LayoutForgeError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.out is None:
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        write_json(args.out / "eval.json", payload)
    return EXIT_OK


def _run_synth_command(args: argparse.Namespace) -> int:
    if args.objects is not None and not 3 <= args.objects <= MAX_OBJECTS:
        print(
            f"input error: object count {args.objects} outside 3..{MAX_OBJECTS}",
            file=sys.stderr,
        )
        return EXIT_INPUT
    tap = _WarningTap()
    package_log = logging.getLogger("layoutforge")
    package_log.addHandler(tap)
    try:
        scene = generate_scene(
            args.out, seed=args.seed, objects=args.objects,
            depth_noise=args.depth_noise,
        )
    except LayoutForgeError as exc:
        print(f"stage synth: {exc}", file=sys.stderr)
        return EXIT_STAGE
    finally:
        package_log.removeHandler(tap)
    for message in tap.messages:
        print(f"warning: {message}", file=sys.stderr)
    print(
        f"bundle with {len(scene.layout)} objects written to {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    seed_env = os.environ.get("LAYOUTFORGE_SEED")
    if seed_env is not None and hasattr(args, "seed"):
        try:
            args.seed = int(seed_env)
        except ValueError:
            print(
                f"input error: LAYOUTFORGE_SEED={seed_env!r} is not an integer",
                file=sys.stderr,
            )
            return EXIT_INPUT
    if args.command == "eval":
        return _run_eval_command(args)
    if args.command == "synth":
        return _run_synth_command(args)
    return _run_stage_command(args)


if __name__ == "__main__":
    sys.exit(main())

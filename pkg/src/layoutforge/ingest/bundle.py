"""Loading and saving of scene bundles and reconstruction outputs.

A bundle is a directory:

    camera.json    pinhole intrinsics and image size
    depth.pfm      metric depth, float32 PFM, 0 = invalid
    masks.json     instance masks, run-length encoded
    oracle.json    optional scene facts from an annotator/generator
    assets.json    optional asset library manifest
    features/      optional binary feature files

Outputs are ``layout.json`` (placed objects; the row-major rotation
matrix is authoritative, the quaternion is informative) and
``graph.json`` (the support structure).  All JSON is UTF-8 with
snake_case keys and sorted keys on write, so identical inputs produce
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import BundleError, DanglingIdError
from ..scenegraph import SceneGraph
from . import rle
from .features import FeatureStore, write_features
from .pfm import read_pfm, write_pfm
from .types import (
    AssetManifest,
    CameraIntrinsics,
    LayoutObject,
    Mask,
    OracleRecord,
    SceneBundle,
)


def write_json(path: str | Path, obj) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: str | Path):
    path = Path(path)
    if not path.is_file():
        raise BundleError("required file missing", str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"invalid JSON: {exc}", str(path))


def load_bundle(
    path: str | Path,
    assets_dir: str | Path | None = None,
) -> SceneBundle:
    """Load and validate a scene bundle directory.

    Args:
        path: bundle directory.
        assets_dir: optional library directory whose ``assets.json``
            replaces the bundle's own and whose ``features/`` is
            searched after the bundle's.

    Raises:
        BundleError: missing files or malformed fields.
        DanglingIdError: a record references an unknown mask id.
    """
    root = Path(path)
    if not root.is_dir():
        raise BundleError("bundle directory not found", str(root))
    warnings: list[str] = []

    camera = CameraIntrinsics.from_json(read_json(root / "camera.json"))
    depth = read_pfm(root / "depth.pfm")
    if depth.shape != (camera.height, camera.width):
        raise BundleError(
            f"depth shape {depth.shape} does not match camera "
            f"{camera.height}x{camera.width}", str(root / "depth.pfm")
        )
    if np.isfinite(depth).sum() and (depth > 0).mean() < 0.01:
        warnings.append("less than 1% of depth pixels are valid")

    masks = _load_masks(root / "masks.json", camera)
    overlap_checked = np.zeros((camera.height, camera.width), dtype=bool)
    for m in masks.values():
        if (overlap_checked & m.pixels).any():
            warnings.append(f"mask {m.mask_id} overlaps another mask")
        overlap_checked |= m.pixels
        if m.area < 9:
            warnings.append(f"mask {m.mask_id} has under 9 pixels")

    oracle = None
    if (root / "oracle.json").is_file():
        oracle = OracleRecord.from_json(read_json(root / "oracle.json"))
        _check_oracle_ids(oracle, masks)

    manifest = None
    feature_roots = [root / "features"]
    if assets_dir is not None:
        lib = Path(assets_dir)
        feature_roots.append(lib / "features")
        manifest = AssetManifest.from_json(read_json(lib / "assets.json"))
    elif (root / "assets.json").is_file():
        manifest = AssetManifest.from_json(read_json(root / "assets.json"))

    if manifest is not None:
        for m in masks.values():
            if m.category not in manifest.categories:
                warnings.append(
                    f"mask category {m.category!r} missing from the category map"
                )

    features = FeatureStore([p for p in feature_roots])
    if any(p.is_dir() for p in feature_roots):
        for mask_id in sorted(masks):
            if not features.has(f"query_{mask_id}.bin"):
                warnings.append(f"no query features for mask {mask_id}")

    return SceneBundle(
        path=str(root),
        camera=camera,
        depth=depth,
        masks=masks,
        oracle=oracle,
        manifest=manifest,
        features=features,
        warnings=warnings,
    )


def _load_masks(path: Path, camera: CameraIntrinsics) -> dict[int, Mask]:
    obj = read_json(path)
    try:
        width, height = int(obj["width"]), int(obj["height"])
        records = obj["masks"]
    except (KeyError, TypeError) as exc:
        raise BundleError(f"malformed masks file: {exc!r}", str(path))
    if (width, height) != (camera.width, camera.height):
        raise BundleError(
            f"mask canvas {width}x{height} does not match camera "
            f"{camera.width}x{camera.height}", str(path)
        )
    masks: dict[int, Mask] = {}
    for rec in records:
        try:
            mask_id = int(rec["id"])
            category = str(rec["category"])
            counts = [int(c) for c in rec["rle"]]
            bbox = tuple(int(v) for v in rec["bbox2d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"malformed mask record: {exc!r}", str(path))
        if mask_id < 0:
            raise BundleError(f"negative mask id {mask_id}", str(path))
        if mask_id in masks:
            raise BundleError(f"duplicate mask id {mask_id}", str(path))
        try:
            pixels = rle.decode(counts, height, width)
            actual = rle.tight_bbox(pixels)
        except ValueError as exc:
            raise BundleError(f"mask {mask_id}: {exc}", str(path))
        if actual != bbox:
            raise BundleError(
                f"mask {mask_id}: bbox2d {bbox} does not match pixels {actual}",
                str(path),
            )
        masks[mask_id] = Mask(mask_id, category, pixels, actual)
    return masks


def _check_oracle_ids(oracle: OracleRecord, masks: dict[int, Mask]) -> None:
    def known(ids, where):
        for i in ids:
            if i not in masks:
                raise DanglingIdError(f"oracle {where} references unknown mask {i}")

    known(oracle.floor_supported, "floor_supported")
    known(oracle.ceiling_supported, "ceiling_supported")
    known(oracle.excluded, "excluded")
    known(oracle.wall_contacts.keys(), "wall_contacts")
    known(oracle.object_dims.keys(), "object_dims")
    both = set(oracle.floor_supported) & set(oracle.ceiling_supported)
    if both:
        raise BundleError(f"masks marked both floor and ceiling supported: {both}")
    for (a, b) in oracle.occlusion_support:
        known((a, b), "occlusion_support")
        if a == b:
            raise BundleError(f"self-support entry for mask {a}")
    for mask_id, dims in oracle.object_dims.items():
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise BundleError(f"mask {mask_id}: dims must be 3 positive numbers")


def save_bundle(
    path: str | Path,
    camera: CameraIntrinsics,
    depth: np.ndarray,
    masks: dict[int, Mask],
    oracle: OracleRecord | None = None,
    manifest: AssetManifest | None = None,
    features: dict[str, np.ndarray] | None = None,
) -> None:
    """Write a bundle directory (used by the scene generator)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_json(root / "camera.json", camera.to_json())
    write_pfm(root / "depth.pfm", depth)
    write_json(
        root / "masks.json",
        {
            "width": camera.width,
            "height": camera.height,
            "masks": [
                {
                    "id": m.mask_id,
                    "category": m.category,
                    "rle": rle.encode(m.pixels),
                    "bbox2d": list(m.bbox2d),
                }
                for m in (masks[k] for k in sorted(masks))
            ],
        },
    )
    if oracle is not None:
        write_json(root / "oracle.json", oracle.to_json())
    if manifest is not None:
        write_json(root / "assets.json", manifest.to_json())
    if features:
        feat_dir = root / "features"
        feat_dir.mkdir(exist_ok=True)
        for name in sorted(features):
            write_features(feat_dir / name, features[name])


def save_layout(
    layout: list[LayoutObject],
    graph: SceneGraph | None,
    path: str | Path,
) -> None:
    """Write ``layout.json`` (and ``graph.json``) into a directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_json(root / "layout.json", {"objects": [o.to_json() for o in layout]})
    if graph is not None:
        write_json(root / "graph.json", graph.to_json())


def load_layout(path: str | Path) -> tuple[list[LayoutObject], SceneGraph | None]:
    """Read a layout directory (or a bare layout.json file path)."""
    path = Path(path)
    layout_file = path if path.is_file() else path / "layout.json"
    obj = read_json(layout_file)
    layout = [LayoutObject.from_json(rec) for rec in obj.get("objects", [])]
    graph = None
    graph_file = layout_file.parent / "graph.json"
    if graph_file.is_file():
        graph = SceneGraph.from_json(read_json(graph_file))
    return layout, graph

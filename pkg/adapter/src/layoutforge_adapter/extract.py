"""Turn one RGB image into a scene bundle by querying vision models.

The pipeline per image:

    depth model      -> depth.pfm
    VLM inventory    -> category list
    detector         -> 2D boxes
    segmenter        -> masks.json (sanitized: disjoint, >= 9 px each)
    feature model    -> features/query_<id>.bin per mask
    VLM placement    -> oracle.json

camera.json is written unconditionally; when no intrinsics are
configured the documented assumption fx = fy = 0.8 * width with a
centered principal point is used and flagged as assumed.

Every model stage degrades independently: a failed call records the
files it should have produced in ``missing.json`` and the rest of the
bundle is still written.  Stages that need masks (features, placement)
are skipped when segmentation failed.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import clients
from .bundlefmt import rle_encode, tight_bbox, write_feature_grid, write_json, write_pfm
from .config import AdapterConfig
from .errors import AdapterError, ModelUnavailable
from .prompts import render_layout_prompt, render_object_prompt

MIN_MASK_PIXELS = 9

# Fallback inventory vocabulary handed to the VLM when the config does
# not supply the asset library's own category list.
DEFAULT_VOCABULARY = (
    "bed", "bench", "box", "cabinet", "chair", "crate", "desk", "lamp",
    "mirror", "plant", "rug", "shelf", "sofa", "stool", "table",
    "television", "wardrobe",
)


@dataclass
class ExtractionReport:
    """What one run produced and what it could not."""

    out: Path
    image_sha256: str
    mask_count: int = 0
    missing: list[dict] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing


def extract_bundle(image: str | Path, config: AdapterConfig,
                   vocabulary: list[str] | None = None) -> ExtractionReport:
    """Run all model stages for one image and write the bundle.

    Args:
        image: path of an RGB image readable by Pillow.
        config: endpoints, replay/record directories, output path.
        vocabulary: category names offered to the inventory prompt;
            overrides ``config.vocabulary``, which in turn overrides
            :data:`DEFAULT_VOCABULARY`.

    Raises:
        AdapterError: unreadable image or unusable configuration.
    """
    image = Path(image)
    try:
        blob = image.read_bytes()
    except OSError as exc:
        raise AdapterError(f"cannot read image: {exc}")
    try:
        with Image.open(io.BytesIO(blob)) as img:
            width, height = img.size
    except UnidentifiedImageError as exc:
        raise AdapterError(f"not a decodable image: {exc}")
    sha = hashlib.sha256(blob).hexdigest()

    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "camera.json", _camera_record(config, width, height))

    transport = clients.build_transport(config)
    report = ExtractionReport(out=out, image_sha256=sha)

    try:
        depth = clients.parse_depth(
            transport.send(clients.depth_request(sha, width, height)),
            width, height,
        )
        write_pfm(out / "depth.pfm", depth)
    except ModelUnavailable as exc:
        _record_missing(report, "depth.pfm", exc)

    words = vocabulary or config.vocabulary or list(DEFAULT_VOCABULARY)
    records = _run_mask_chain(
        transport, report, sha, width, height, out, list(words), config,
    )

    if records is None:
        skip = ModelUnavailable("segmenter", "requires masks")
        _record_missing(report, "features/", skip)
        _record_missing(report, "oracle.json", skip)
    else:
        report.mask_count = len(records)
        _run_features(transport, report, sha, out, records)
        _run_placement(transport, report, sha, out, records, config)

    if report.missing:
        write_json(out / "missing.json", {
            "complete": False,
            "missing": sorted(report.missing, key=lambda m: m["part"]),
        })
    return report


def _camera_record(config: AdapterConfig, width: int, height: int) -> dict:
    if config.intrinsics is not None:
        values = config.intrinsics
        source = "config"
    else:
        # Assumed pinhole for images of unknown provenance.
        values = {
            "fx": 0.8 * width, "fy": 0.8 * width,
            "cx": width / 2.0, "cy": height / 2.0,
        }
        source = "assumed_default"
    return {
        "fx": float(values["fx"]), "fy": float(values["fy"]),
        "cx": float(values["cx"]), "cy": float(values["cy"]),
        "width": width, "height": height,
        "intrinsics_source": source,
    }


def _record_missing(report: ExtractionReport, part: str,
                    exc: ModelUnavailable) -> None:
    report.missing.append(
        {"part": part, "model": exc.model, "reason": exc.reason}
    )


def _run_mask_chain(transport, report, sha, width, height, out,
                    vocabulary, config) -> list[dict] | None:
    """Inventory -> detect -> segment -> sanitized masks.json.

    Returns the written mask records, or None when any link failed; in
    that case masks.json is recorded as missing.
    """
    try:
        prompt = render_object_prompt(config.object_prompt, vocabulary)
        names = clients.parse_objects(
            transport.send(clients.objects_request(sha, prompt))
        )
        detections = clients.parse_detections(
            transport.send(clients.detector_request(sha, names)),
            width, height,
        )
        raw_masks = clients.parse_masks(
            transport.send(clients.segmenter_request(sha, detections)),
            width, height,
        )
    except ModelUnavailable as exc:
        _record_missing(report, "masks.json", exc)
        return None

    # Model masks may overlap or be specks; the bundle format requires
    # disjoint masks and the engine ignores regions under 9 pixels.
    # Earlier responses win contested pixels.
    claimed = np.zeros((height, width), dtype=bool)
    records = []
    for rec in raw_masks:
        pixels = rec["pixels"] & ~claimed
        if int(pixels.sum()) < MIN_MASK_PIXELS:
            continue
        claimed |= pixels
        records.append({
            "id": len(records),
            "category": rec["category"],
            "rle": rle_encode(pixels),
            "bbox2d": list(tight_bbox(pixels)),
        })
    write_json(out / "masks.json", {
        "width": width, "height": height, "masks": records,
    })
    return records


def _run_features(transport, report, sha, out, records) -> None:
    feat_dir = out / "features"
    for rec in records:
        name = f"query_{rec['id']}.bin"
        try:
            grid = clients.parse_feature_grid(transport.send(
                clients.features_request(
                    sha, rec["id"], rec["category"],
                    tuple(rec["bbox2d"]), rec["rle"],
                )
            ))
        except ModelUnavailable as exc:
            _record_missing(report, f"features/{name}", exc)
            continue
        feat_dir.mkdir(exist_ok=True)
        write_feature_grid(feat_dir / name, grid)


def _run_placement(transport, report, sha, out, records, config) -> None:
    roster = [
        {"id": rec["id"], "category": rec["category"], "box": rec["bbox2d"]}
        for rec in records
    ]
    try:
        prompt = render_layout_prompt(config.layout_prompt, roster)
        oracle = clients.parse_layout(
            transport.send(clients.layout_request(sha, prompt, roster)),
            {rec["id"] for rec in records},
        )
    except ModelUnavailable as exc:
        _record_missing(report, "oracle.json", exc)
        return
    write_json(out / "oracle.json", oracle)

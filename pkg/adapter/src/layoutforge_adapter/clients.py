"""Model transports, request builders, and response parsers.

A request is a plain dict naming the model role, the task, and every
input that should invalidate the cache when it changes (image digest,
prompt text, upstream results).  Transports turn a request into a
response dict: over HTTP in live mode, from a :class:`ResponseCache`
in replay mode.  Parsers validate response shape and convert payloads;
anything off raises :class:`BadResponse`, which extraction treats the
same as an unreachable model.

Binary payloads (depth maps, feature grids) travel as base64 of raw
little-endian float32, row-major.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import urllib.error
import urllib.request

import numpy as np

from .bundlefmt import rle_decode
from .cache import ResponseCache, request_key
from .errors import BadResponse, ModelUnavailable


# --- binary payload helpers ----------------------------------------------


def pack_f32(values: np.ndarray) -> str:
    """Base64 of an array's raw ``<f4`` bytes, C order."""
    return base64.b64encode(
        np.ascontiguousarray(values, dtype="<f4").tobytes()
    ).decode("ascii")


def unpack_f32(blob: str, count: int, model: str) -> np.ndarray:
    try:
        raw = base64.b64decode(blob, validate=True)
    except (binascii.Error, TypeError) as exc:
        raise BadResponse(model, f"bad base64 payload: {exc}")
    if len(raw) != 4 * count:
        raise BadResponse(
            model, f"payload holds {len(raw)} bytes, expected {4 * count}"
        )
    return np.frombuffer(raw, dtype="<f4").copy()


def rle_digest(counts: list[int]) -> str:
    """Short stable digest standing in for a mask in request payloads."""
    blob = json.dumps(counts, separators=(",", ":"))
    return hashlib.sha256(blob.encode("ascii")).hexdigest()


# --- transports ------------------------------------------------------------


class ReplayTransport:
    """Serves responses from a cache directory; never touches the network."""

    def __init__(self, cache: ResponseCache):
        self.cache = cache

    def send(self, request: dict) -> dict:
        response = self.cache.get(request)
        if response is None:
            raise ModelUnavailable(
                request["model"],
                f"no cached response for request {request_key(request)[:12]}",
            )
        return response


class HttpTransport:
    """POSTs the request JSON to the role's configured endpoint."""

    def __init__(self, endpoints: dict[str, str], timeout: float):
        self.endpoints = endpoints
        self.timeout = timeout

    def send(self, request: dict) -> dict:
        model = request["model"]
        url = self.endpoints.get(model)
        if url is None:
            raise ModelUnavailable(model, "no endpoint configured")
        body = json.dumps(request, sort_keys=True).encode("utf-8")
        req = urllib.request.Request(
            url, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as answer:
                payload = answer.read()
        except (urllib.error.URLError, OSError) as exc:
            raise ModelUnavailable(model, f"endpoint failed: {exc}")
        try:
            response = json.loads(payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadResponse(model, f"endpoint returned non-JSON: {exc}")
        if not isinstance(response, dict):
            raise BadResponse(model, "endpoint returned a non-object")
        return response


class RecordingTransport:
    """Write-through wrapper that captures responses for later replay."""

    def __init__(self, inner, cache: ResponseCache):
        self.inner = inner
        self.cache = cache

    def send(self, request: dict) -> dict:
        response = self.inner.send(request)
        self.cache.put(request, response)
        return response


def build_transport(config) -> object:
    if config.replay is not None:
        transport = ReplayTransport(ResponseCache(config.replay))
    else:
        transport = HttpTransport(config.endpoints, config.timeout)
    if config.record is not None:
        transport = RecordingTransport(
            transport, ResponseCache(config.record, create=True)
        )
    return transport


# --- request builders -------------------------------------------------------
# Shared by live extraction and by the tooling that seeds sample caches,
# so both sides always agree on the request hash.


def depth_request(image_sha: str, width: int, height: int) -> dict:
    return {
        "model": "depth",
        "task": "metric_depth",
        "image_sha256": image_sha,
        "width": width,
        "height": height,
    }


def objects_request(image_sha: str, prompt: str) -> dict:
    return {
        "model": "vlm",
        "task": "object_inventory",
        "image_sha256": image_sha,
        "prompt": prompt,
    }


def detector_request(image_sha: str, categories: list[str]) -> dict:
    return {
        "model": "detector",
        "task": "detect",
        "image_sha256": image_sha,
        "categories": sorted(set(categories)),
    }


def segmenter_request(image_sha: str, detections: list[dict]) -> dict:
    return {
        "model": "segmenter",
        "task": "instance_masks",
        "image_sha256": image_sha,
        "boxes": [
            {"category": d["category"], "box": [int(v) for v in d["box"]]}
            for d in detections
        ],
    }


def features_request(image_sha: str, mask_id: int, category: str,
                     bbox: tuple[int, int, int, int],
                     counts: list[int]) -> dict:
    return {
        "model": "features",
        "task": "query_patches",
        "image_sha256": image_sha,
        "mask": {
            "id": int(mask_id),
            "category": category,
            "bbox": [int(v) for v in bbox],
            "rle_sha256": rle_digest(counts),
        },
    }


def layout_request(image_sha: str, prompt: str, roster: list[dict]) -> dict:
    return {
        "model": "vlm",
        "task": "layout_analysis",
        "image_sha256": image_sha,
        "prompt": prompt,
        "objects": roster,
    }


# --- response parsers --------------------------------------------------------


def parse_depth(response: dict, width: int, height: int) -> np.ndarray:
    try:
        rw, rh = int(response["width"]), int(response["height"])
        blob = response["data_b64"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadResponse("depth", f"malformed response: {exc!r}")
    if (rw, rh) != (width, height):
        raise BadResponse(
            "depth", f"map is {rw}x{rh}, image is {width}x{height}"
        )
    values = unpack_f32(blob, width * height, "depth")
    depth = values.reshape(height, width)
    if not np.isfinite(depth).all():
        raise BadResponse("depth", "non-finite depth values")
    if (depth < 0).any():
        raise BadResponse("depth", "negative depth values")
    return depth.astype(np.float32)


def parse_objects(response: dict) -> list[str]:
    try:
        entries = response["objects"]
        names = [str(e["name"]) for e in entries]
        counts = [int(e.get("count", 1)) for e in entries]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadResponse("vlm", f"malformed inventory: {exc!r}")
    if not names:
        raise BadResponse("vlm", "inventory lists no objects")
    if any(not n.strip() for n in names) or any(c < 1 for c in counts):
        raise BadResponse("vlm", "inventory has empty names or bad counts")
    return names


def parse_detections(response: dict, width: int, height: int) -> list[dict]:
    try:
        raw = response["detections"]
        detections = [
            {
                "category": str(d["category"]),
                "box": [int(v) for v in d["box"]],
            }
            for d in raw
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadResponse("detector", f"malformed detections: {exc!r}")
    for d in detections:
        x, y, w, h = d["box"]
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
            raise BadResponse("detector", f"box out of bounds: {d['box']}")
    return detections


def parse_masks(response: dict, width: int, height: int) -> list[dict]:
    """Each entry: category plus a decoded boolean pixel array."""
    try:
        raw = response["masks"]
    except KeyError as exc:
        raise BadResponse("segmenter", f"malformed masks: {exc!r}")
    out = []
    for rec in raw:
        try:
            category = str(rec["category"])
            counts = [int(c) for c in rec["rle"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise BadResponse("segmenter", f"malformed mask record: {exc!r}")
        try:
            pixels = rle_decode(counts, height, width)
        except ValueError as exc:
            raise BadResponse("segmenter", str(exc))
        out.append({"category": category, "pixels": pixels})
    return out


def parse_feature_grid(response: dict) -> np.ndarray:
    try:
        h, w, d = (
            int(response["height"]), int(response["width"]), int(response["dim"])
        )
        blob = response["data_b64"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadResponse("features", f"malformed grid: {exc!r}")
    if h < 1 or w < 1 or d < 1:
        raise BadResponse("features", f"bad grid shape {h}x{w}x{d}")
    values = unpack_f32(blob, h * w * d, "features")
    return values.reshape(h, w, d)


def parse_layout(response: dict, valid_ids: set[int]) -> dict:
    """Convert the placement answer into oracle.json content.

    Validation is strict about identity (an id outside the roster means
    the answer belongs to different inputs) but lenient about judgment:
    an object marked both on the floor and hanging keeps the floor
    reading, degenerate pairs and nonpositive dimensions are dropped.
    """
    try:
        entries = response["objects"]
        raw_pairs = response.get("occluded_support_pairs", [])
        unplaceable = [int(i) for i in response.get("unplaceable", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadResponse("vlm", f"malformed layout answer: {exc!r}")

    floor: list[int] = []
    ceiling: list[int] = []
    walls: dict[str, int] = {}
    dims: dict[str, list[float]] = {}
    seen: set[int] = set()
    for rec in entries:
        try:
            mask_id = int(rec["id"])
            on_floor = bool(rec["on_floor"])
            hanging = bool(rec["hangs_from_ceiling"])
            wall = rec.get("touches_wall")
            dims_m = rec.get("dimensions_m")
        except (KeyError, TypeError, ValueError) as exc:
            raise BadResponse("vlm", f"malformed layout entry: {exc!r}")
        if mask_id not in valid_ids:
            raise BadResponse("vlm", f"answer names unknown object id {mask_id}")
        if mask_id in seen:
            raise BadResponse("vlm", f"duplicate layout entry for id {mask_id}")
        seen.add(mask_id)
        if on_floor:
            floor.append(mask_id)
        elif hanging:
            ceiling.append(mask_id)
        if wall is not None:
            walls[str(mask_id)] = int(wall)
        if dims_m is not None:
            vals = [float(v) for v in dims_m]
            if len(vals) == 3 and all(v > 0 for v in vals):
                dims[str(mask_id)] = vals

    pairs: list[list] = []
    for rec in raw_pairs:
        try:
            lower, upper = int(rec["lower"]), int(rec["upper"])
            supported = bool(rec["supported"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadResponse("vlm", f"malformed support pair: {exc!r}")
        if lower not in valid_ids or upper not in valid_ids:
            raise BadResponse("vlm", f"pair names unknown ids {lower}, {upper}")
        if lower == upper:
            continue
        pairs.append([lower, upper, supported])

    for i in unplaceable:
        if i not in valid_ids:
            raise BadResponse("vlm", f"unplaceable names unknown id {i}")

    return {
        "floor_supported": sorted(floor),
        "ceiling_supported": sorted(ceiling),
        "wall_contacts": walls,
        "occlusion_support": pairs,
        "object_dims": dims,
        "excluded": sorted(set(unplaceable)),
    }

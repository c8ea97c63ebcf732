"""Adapter configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from string import Template

from . import prompts
from .errors import AdapterError

# The five model roles the adapter can call.
MODELS = ("depth", "detector", "segmenter", "features", "vlm")


@dataclass
class AdapterConfig:
    """Everything one extraction run needs besides the image.

    ``endpoints`` maps a model role to an HTTP URL (live mode).  Roles
    without an endpoint can only be served from ``replay``; a request
    that neither can answer degrades that stage to "missing" in the
    output bundle.  ``intrinsics`` carries known camera values as a
    dict with fx/fy/cx/cy; when absent the documented default is
    assumed and flagged in camera.json.
    """

    out: Path
    endpoints: dict[str, str] = field(default_factory=dict)
    replay: Path | None = None
    record: Path | None = None
    intrinsics: dict | None = None
    vocabulary: list[str] | None = None
    object_prompt: Template = prompts.OBJECT_EXTRACTION
    layout_prompt: Template = prompts.LAYOUT_ANALYSIS
    timeout: float = 120.0

    def __post_init__(self):
        self.out = Path(self.out)
        unknown = set(self.endpoints) - set(MODELS)
        if unknown:
            raise AdapterError(f"unknown model roles in endpoints: {sorted(unknown)}")
        if self.intrinsics is not None:
            missing = {"fx", "fy", "cx", "cy"} - set(self.intrinsics)
            if missing:
                raise AdapterError(f"intrinsics missing keys: {sorted(missing)}")


def load_config(path: str | Path, out: Path, replay: Path | None,
                record: Path | None) -> AdapterConfig:
    """Build a config from an optional JSON file plus CLI paths.

    The file may set ``endpoints``, ``intrinsics``, ``vocabulary``,
    ``timeout``, and prompt template overrides
    (``object_prompt``/``layout_prompt`` as raw template text).
    """
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise AdapterError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise AdapterError(f"config is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise AdapterError("config root must be a JSON object")
    vocabulary = raw.get("vocabulary")
    kwargs: dict = {
        "out": out,
        "replay": replay,
        "record": record,
        "endpoints": dict(raw.get("endpoints", {})),
        "intrinsics": raw.get("intrinsics"),
        "vocabulary": [str(v) for v in vocabulary] if vocabulary else None,
        "timeout": float(raw.get("timeout", 120.0)),
    }
    if "object_prompt" in raw:
        kwargs["object_prompt"] = Template(str(raw["object_prompt"]))
    if "layout_prompt" in raw:
        kwargs["layout_prompt"] = Template(str(raw["layout_prompt"]))
    return AdapterConfig(**kwargs)

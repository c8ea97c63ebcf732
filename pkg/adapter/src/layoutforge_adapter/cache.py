"""Response cache keyed by a digest of the request payload.

Each model call is described by a JSON-serializable request dict.  Its
key is the SHA-256 of the compact, key-sorted JSON encoding, and the
cached response lives at ``<dir>/<key>.json``.  Image bytes never enter
a request directly; callers put their digest in the payload instead, so
keys stay short and the cache stays readable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import AdapterError


def request_key(request: dict) -> str:
    """Stable hex digest of a request payload."""
    blob = json.dumps(
        request, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Read/write access to one cache directory."""

    def __init__(self, root: str | Path, create: bool = False):
        self.root = Path(root)
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise AdapterError(f"cache directory not found: {self.root}")

    def path_for(self, request: dict) -> Path:
        return self.root / f"{request_key(request)}.json"

    def get(self, request: dict) -> dict | None:
        path = self.path_for(request)
        if not path.is_file():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise AdapterError(f"corrupt cache entry {path.name}: {exc}")

    def put(self, request: dict, response: dict) -> Path:
        path = self.path_for(request)
        blob = json.dumps(
            response, sort_keys=True, indent=2, ensure_ascii=False
        )
        path.write_text(blob + "\n", encoding="utf-8")
        return path

"""Acceptance checks for the adapter against the shipped sample set.

Each sample is an RGB image under ``samples/`` plus a response cache
under ``samples/responses/``.  Replayed extraction must produce bundles
the layout engine loads without a single warning, and the whole output
tree must be byte-identical run over run.
"""

from __future__ import annotations

from pathlib import Path

import pytest

from layoutforge_adapter import AdapterConfig, extract_bundle
from layoutforge_adapter.clients import HttpTransport

SAMPLES_DIR = Path(__file__).resolve().parents[1] / "samples"
RESPONSES_DIR = SAMPLES_DIR / "responses"


def _verdict(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def sample_images() -> list[Path]:
    return sorted(SAMPLES_DIR.glob("*.png"))


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_adapter_replay_acceptance(tmp_path, monkeypatch):
    load_bundle = pytest.importorskip("layoutforge.ingest").load_bundle

    # Replay must never reach for the network.
    def no_network(self, request):
        raise AssertionError("replay attempted a live model call")

    monkeypatch.setattr(HttpTransport, "send", no_network)

    images = sample_images()
    _verdict(
        "adapter sample set", len(images) == 5,
        f"{len(images)} sample images shipped",
    )

    dirty, mismatched = [], []
    for image in images:
        first = tmp_path / f"{image.stem}_a"
        second = tmp_path / f"{image.stem}_b"
        for out in (first, second):
            report = extract_bundle(
                image, AdapterConfig(out=out, replay=RESPONSES_DIR)
            )
            if not report.complete:
                dirty.append(f"{image.stem}: missing {report.missing}")

        bundle = load_bundle(first)
        if bundle.warnings:
            dirty.append(f"{image.stem}: warnings {bundle.warnings}")
        if not bundle.masks or bundle.oracle is None:
            dirty.append(f"{image.stem}: empty bundle")

        if tree_bytes(first) != tree_bytes(second):
            mismatched.append(image.stem)

    _verdict(
        "adapter replay (clean load)", not dirty,
        "5/5 bundles load with zero warnings" if not dirty else "; ".join(dirty),
    )
    _verdict(
        "adapter replay (deterministic)", not mismatched,
        "both runs byte-identical for all samples"
        if not mismatched else f"diverged: {mismatched}",
    )

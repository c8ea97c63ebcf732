"""Asset retrieval: rank category-matched assets against one mask.

A candidate asset is scored by the mean cosine similarity between the
mask's global embedding and the asset's 20 thumbnail-view embeddings,
minus a proportion-mismatch penalty weighted by ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import BundleError, EmptyCategoryError, EmptyInputError

if TYPE_CHECKING:
    from .ingest.types import Asset, AssetManifest, SceneBundle

DEFAULT_ALPHA = 0.1


@dataclass
class RetrievalScore:
    """One ranked candidate: total score and its two ingredients."""

    asset_id: str
    score: float
    similarity: float
    penalty: float


def size_penalty(asset_dims, query_dims) -> float:
    """Aspect-ratio mismatch between an asset box and a query estimate.

    Both inputs are (length, width, height).  The penalty is the sum of
    absolute differences of the length/height and width/height ratios,
    so it is scale-free: congruent boxes score zero.

    Raises:
        ValueError: either height is zero or negative.
    """
    la, wa, ha = (float(v) for v in asset_dims)
    lq, wq, hq = (float(v) for v in query_dims)
    if ha <= 0 or hq <= 0:
        raise ValueError(f"heights must be positive, got {ha} and {hq}")
    return abs(la / ha - lq / hq) + abs(wa / ha - wq / hq)


def retrieve(
    mask_id: int,
    bundle: "SceneBundle",
    manifest: "AssetManifest | None" = None,
    alpha: float = DEFAULT_ALPHA,
    query_dims=None,
) -> list[RetrievalScore]:
    """Rank the library assets that can stand in for one mask.

    Candidates are restricted to assets whose library category the
    mask's scene category maps to.  Query dimensions come from the
    bundle oracle when present, else from ``query_dims`` (callers
    usually pass fitted box extents as the fallback).

    Returns candidates sorted by descending score; exact ties break
    toward the smaller asset id.

    Raises:
        EmptyCategoryError: no asset matches the mask's category.
        EmptyInputError: no dimension estimate is available.
    """
    manifest = manifest or bundle.manifest
    if manifest is None:
        raise BundleError("retrieval needs an asset manifest")
    if mask_id not in bundle.masks:
        raise EmptyInputError(f"unknown mask id {mask_id}")
    mask = bundle.masks[mask_id]

    candidates = manifest.candidates(mask.category)
    if not candidates:
        raise EmptyCategoryError(
            f"no asset in the library maps to category {mask.category!r}"
        )

    if bundle.oracle is not None and mask_id in bundle.oracle.object_dims:
        dims = bundle.oracle.object_dims[mask_id]
    elif query_dims is not None:
        dims = query_dims
    else:
        raise EmptyInputError(
            f"mask {mask_id} has no dimension estimate for the size penalty"
        )

    query = bundle.features.query_global(mask_id)
    scored = []
    for asset in candidates:
        scored.append(_score_asset(asset, query, dims, alpha, bundle))
    scored.sort(key=lambda r: (-r.score, r.asset_id))
    return scored


def _score_asset(
    asset: "Asset",
    query: np.ndarray,
    dims,
    alpha: float,
    bundle: "SceneBundle",
) -> RetrievalScore:
    if not asset.thumbnail_views:
        raise BundleError(f"asset {asset.asset_id} has no thumbnail views")
    sims = []
    for view in range(len(asset.thumbnail_views)):
        emb = bundle.features.thumbnail(asset.asset_id, view)
        sims.append(float(query @ emb))
    similarity = float(np.mean(sims))
    penalty = size_penalty(asset.extents, dims)
    return RetrievalScore(
        asset_id=asset.asset_id,
        score=similarity - alpha * penalty,
        similarity=similarity,
        penalty=penalty,
    )

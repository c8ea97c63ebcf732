"""Data carried by a scene bundle and by reconstruction outputs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import BundleError
from ..voxels import VoxelGrid
from .features import FeatureStore

TEMPLATE_VIEW_COUNT = 162
THUMBNAIL_VIEW_COUNT = 20


@dataclass
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; x right, y down, z forward."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise BundleError(f"focal lengths must be positive: {self.fx}, {self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise BundleError(f"bad image size {self.width}x{self.height}")

    def to_json(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CameraIntrinsics":
        try:
            return cls(
                fx=float(obj["fx"]), fy=float(obj["fy"]),
                cx=float(obj["cx"]), cy=float(obj["cy"]),
                width=int(obj["width"]), height=int(obj["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"malformed camera record: {exc!r}")


@dataclass
class Mask:
    """One instance mask with its category label."""

    mask_id: int
    category: str
    pixels: np.ndarray  # (H, W) bool
    bbox2d: tuple[int, int, int, int]  # x, y, w, h, tight

    @property
    def area(self) -> int:
        return int(self.pixels.sum())


@dataclass
class OracleRecord:
    """Scene facts supplied by an external annotator or a generator.

    ``occlusion_support`` answers "does a support b?" for pairs whose
    geometry is inconclusive; ``object_dims`` gives estimated physical
    (length, width, height) per mask, meters.
    """

    floor_supported: list[int] = field(default_factory=list)
    ceiling_supported: list[int] = field(default_factory=list)
    wall_contacts: dict[int, int] = field(default_factory=dict)
    occlusion_support: dict[tuple[int, int], bool] = field(default_factory=dict)
    object_dims: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    excluded: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "floor_supported": self.floor_supported,
            "ceiling_supported": self.ceiling_supported,
            "wall_contacts": {str(k): v for k, v in self.wall_contacts.items()},
            "occlusion_support": [
                [a, b, bool(v)] for (a, b), v in self.occlusion_support.items()
            ],
            "object_dims": {
                str(k): [float(x) for x in v] for k, v in self.object_dims.items()
            },
            "excluded": self.excluded,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OracleRecord":
        try:
            return cls(
                floor_supported=[int(i) for i in obj.get("floor_supported", [])],
                ceiling_supported=[int(i) for i in obj.get("ceiling_supported", [])],
                wall_contacts={
                    int(k): int(v) for k, v in obj.get("wall_contacts", {}).items()
                },
                occlusion_support={
                    (int(a), int(b)): bool(v)
                    for a, b, v in obj.get("occlusion_support", [])
                },
                object_dims={
                    int(k): tuple(float(x) for x in v)  # type: ignore[misc]
                    for k, v in obj.get("object_dims", {}).items()
                },
                excluded=[int(i) for i in obj.get("excluded", [])],
            )
        except (TypeError, ValueError) as exc:
            raise BundleError(f"malformed oracle record: {exc!r}")


@dataclass
class TemplateView:
    """One rendered viewpoint of an asset.

    ``rotation`` is the object-to-camera rotation the render shows;
    consumers compose it with their own camera rotation to orient the
    object in scene coordinates.
    """

    rotation: np.ndarray  # (3, 3)
    feature: str  # file name under features/


@dataclass
class Asset:
    """A library object: canonical box extents plus lookup resources.

    The canonical frame is centered on the box: x right, y front, z up.
    ``subspaces`` are openings (shelf bays, drawers) as axis-aligned
    interior boxes in that frame.
    """

    asset_id: str
    category: str
    extents: np.ndarray  # (3,) l, w, h
    scale_mode: str  # height_free | two_long_axes | fully_free
    subspaces: list[dict] = field(default_factory=list)
    voxel: VoxelGrid | None = None
    template_views: list[TemplateView] = field(default_factory=list)
    thumbnail_views: list[str] = field(default_factory=list)

    SCALE_MODES = ("height_free", "two_long_axes", "fully_free")

    def __post_init__(self):
        self.extents = np.asarray(self.extents, dtype=float)
        if self.extents.shape != (3,) or np.any(self.extents <= 0):
            raise BundleError(
                f"asset {self.asset_id}: extents must be 3 positive numbers"
            )
        if self.scale_mode not in self.SCALE_MODES:
            raise BundleError(
                f"asset {self.asset_id}: unknown scale mode {self.scale_mode!r}"
            )
        if self.template_views and len(self.template_views) != TEMPLATE_VIEW_COUNT:
            raise BundleError(
                f"asset {self.asset_id}: expected {TEMPLATE_VIEW_COUNT} template "
                f"views, got {len(self.template_views)}"
            )
        if self.thumbnail_views and len(self.thumbnail_views) != THUMBNAIL_VIEW_COUNT:
            raise BundleError(
                f"asset {self.asset_id}: expected {THUMBNAIL_VIEW_COUNT} thumbnail "
                f"views, got {len(self.thumbnail_views)}"
            )

    def to_json(self) -> dict:
        return {
            "id": self.asset_id,
            "category": self.category,
            "extents": [float(v) for v in self.extents],
            "scale_mode": self.scale_mode,
            "subspaces": [
                {
                    "center": [float(v) for v in s["center"]],
                    "half_extents": [float(v) for v in s["half_extents"]],
                }
                for s in self.subspaces
            ],
            "voxel": self.voxel.to_json() if self.voxel is not None else None,
            "template_views": [
                {
                    "rotation": [float(v) for v in np.asarray(tv.rotation).ravel()],
                    "feature": tv.feature,
                }
                for tv in self.template_views
            ],
            "thumbnail_views": list(self.thumbnail_views),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Asset":
        views = [
            TemplateView(
                rotation=np.asarray(tv["rotation"], dtype=float).reshape(3, 3),
                feature=str(tv["feature"]),
            )
            for tv in obj.get("template_views", [])
        ]
        voxel = obj.get("voxel")
        return cls(
            asset_id=str(obj["id"]),
            category=str(obj["category"]),
            extents=np.asarray(obj["extents"], dtype=float),
            scale_mode=str(obj["scale_mode"]),
            subspaces=list(obj.get("subspaces", [])),
            voxel=VoxelGrid.from_json(voxel) if voxel else None,
            template_views=views,
            thumbnail_views=[str(s) for s in obj.get("thumbnail_views", [])],
        )


@dataclass
class AssetManifest:
    """All library assets plus the scene-label -> asset-category map."""

    assets: dict[str, Asset]
    categories: dict[str, str]  # scene category -> library category

    def inverse_categories(self, library_category: str) -> list[str]:
        return sorted(
            k for k, v in self.categories.items() if v == library_category
        )

    def candidates(self, scene_category: str) -> list[Asset]:
        """Assets whose library category the scene category maps to."""
        target = self.categories.get(scene_category, scene_category)
        found = [a for a in self.assets.values() if a.category == target]
        return sorted(found, key=lambda a: a.asset_id)

    def to_json(self) -> dict:
        return {
            "assets": [self.assets[k].to_json() for k in sorted(self.assets)],
            "categories": dict(sorted(self.categories.items())),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AssetManifest":
        assets = {}
        for rec in obj.get("assets", []):
            asset = Asset.from_json(rec)
            if asset.asset_id in assets:
                raise BundleError(f"duplicate asset id {asset.asset_id!r}")
            assets[asset.asset_id] = asset
        return cls(assets=assets, categories=dict(obj.get("categories", {})))


@dataclass
class LayoutObject:
    """A placed asset: rigid pose plus an anisotropic scale."""

    asset_id: str
    source_mask: int
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)
    scale: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.scale = np.asarray(self.scale, dtype=float).reshape(3)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion as (w, x, y, z)."""
        q = Rotation.from_matrix(self.rotation).as_quat()  # x, y, z, w
        return np.concatenate(([q[3]], q[:3]))

    def to_json(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "source_mask": int(self.source_mask),
            "rotation": [float(v) for v in self.rotation.ravel()],
            "quaternion": [float(v) for v in self.quaternion()],
            "translation": [float(v) for v in self.translation],
            "scale": [float(v) for v in self.scale],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LayoutObject":
        return cls(
            asset_id=str(obj["asset_id"]),
            source_mask=int(obj["source_mask"]),
            rotation=np.asarray(obj["rotation"], dtype=float).reshape(3, 3),
            translation=np.asarray(obj["translation"], dtype=float),
            scale=np.asarray(obj["scale"], dtype=float),
        )


@dataclass
class SceneBundle:
    """Everything loaded from one scene directory."""

    path: str
    camera: CameraIntrinsics
    depth: np.ndarray  # (H, W) float32 meters, 0 = invalid
    masks: dict[int, Mask]
    oracle: OracleRecord | None
    manifest: AssetManifest | None
    features: FeatureStore
    warnings: list[str] = field(default_factory=list)

    def mask_ids(self) -> list[int]:
        return sorted(self.masks)

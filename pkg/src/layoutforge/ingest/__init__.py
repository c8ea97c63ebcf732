"""Scene bundle formats: loading, validation, and output writers."""

from .bundle import (
    load_bundle,
    load_layout,
    read_json,
    save_bundle,
    save_layout,
    write_json,
)
from .features import FeatureStore, read_features, write_features
from .pfm import read_pfm, write_pfm
from .types import (
    Asset,
    AssetManifest,
    CameraIntrinsics,
    LayoutObject,
    Mask,
    OracleRecord,
    SceneBundle,
    TemplateView,
)

__all__ = [
    "Asset",
    "AssetManifest",
    "CameraIntrinsics",
    "FeatureStore",
    "LayoutObject",
    "Mask",
    "OracleRecord",
    "SceneBundle",
    "TemplateView",
    "load_bundle",
    "load_layout",
    "read_features",
    "read_json",
    "read_pfm",
    "save_bundle",
    "save_layout",
    "write_features",
    "write_json",
    "write_pfm",
]

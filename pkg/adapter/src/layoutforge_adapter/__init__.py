"""Vision-model front end producing scene bundles for the layout engine."""

from .config import AdapterConfig
from .errors import AdapterError, BadResponse, ModelUnavailable
from .extract import ExtractionReport, extract_bundle

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "BadResponse",
    "ExtractionReport",
    "ModelUnavailable",
    "extract_bundle",
]

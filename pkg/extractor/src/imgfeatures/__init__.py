"""Offline VGG19 feature extraction to the shared interchange format."""

from .extract import (
    CONTENT_DIM,
    LAYER_FILTERS,
    STYLE_LAYERS,
    ExtractionManifest,
    emit_synthetic_features,
    extract,
)

__version__ = "0.1.0"

__all__ = [
    "CONTENT_DIM",
    "ExtractionManifest",
    "LAYER_FILTERS",
    "STYLE_LAYERS",
    "emit_synthetic_features",
    "extract",
]

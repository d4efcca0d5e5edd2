"""Face-embedding extraction bridge writing the canonical EMB1 format."""

from .extract import ExtractionSummary, discover_images, extract
from .manifest import ExtractionManifest
from .registry import REGISTRY, ModelSpec, load_model, model_spec

__version__ = "0.1.0"

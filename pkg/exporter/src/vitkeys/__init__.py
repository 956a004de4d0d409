"""Per-patch key-feature export from self-supervised vision transformers."""

from .export import ExportManifest, export_features
from .vit import load_checkpoint, random_checkpoint

__version__ = "0.1.0"

__all__ = ["export_features", "ExportManifest", "load_checkpoint",
           "random_checkpoint", "__version__"]

"""Export pooled transformer embeddings for a list of texts as an EMB1 file."""

__version__ = "0.1.0"

from .extract import InputError, ModelLoadError, SidecarConfig, extract

__all__ = ["InputError", "ModelLoadError", "SidecarConfig", "extract", "__version__"]

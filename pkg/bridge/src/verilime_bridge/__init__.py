"""Embedding bridge: a subprocess serving feature vectors from any model
over line-delimited JSON, plus offline batch extraction to .emb files."""

__version__ = "0.1.0"

from .batch import embed_batch, read_manifest_paths
from .models import DummyModel, ModelLoadError, TorchScriptModel, load_model
from .server import handle_request, serve

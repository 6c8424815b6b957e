"""Export pretrained-CNN stage activations to KMCF feature-stack files."""

__version__ = "0.1.0"

from .export import ExportResult, ExportSpec, export_sequence  # noqa: F401
from .network import DEFAULT_LAYERS, cell_size  # noqa: F401

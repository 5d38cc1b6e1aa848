"""Pretrained-backbone feature exporter.

Bridges class-per-folder image datasets to the two-stream classifier by
extracting two intermediate ResNet50 activations per image and writing them
as FTS1 tensor files plus a dataset manifest.
"""

from .backbone import DEFAULT_TAPS, Extractor, TapNotFoundError, load_backbone
from .export import ExportSpec, VerifyReport, export, verify_export
from .fts import FtsError, read_fts, write_fts

__version__ = "0.1.0"

"""Convert framework checkpoint archives into CNTS v1 snapshot files."""

from .cnts_format import read_cnts, write_cnts
from .export import (
    ExportError,
    ExportManifest,
    LayerMapping,
    export,
    load_manifest,
    verify,
)

__version__ = "0.1.0"

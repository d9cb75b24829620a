"""Offline conversion of community HSI datasets into HSIC containers."""

from .convert import ConversionError, convert, verify
from .hsic import HsicError, read_header, read_hsic, write_hsic
from .manifest import ConversionManifest, ManifestError, load_manifest, sha256_of

__version__ = "0.1.0"

__all__ = [
    "convert", "verify", "ConversionError",
    "read_hsic", "write_hsic", "read_header", "HsicError",
    "ConversionManifest", "load_manifest", "ManifestError", "sha256_of",
    "__version__",
]

"""Image-folder to SPF1 feature extraction for the patchbank engine."""

__version__ = "0.1.0"

from .config import ExtractorConfig
from .extract import extract_folder

__all__ = ["ExtractorConfig", "extract_folder", "__version__"]

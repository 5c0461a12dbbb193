"""Touch, motion, and keystroke biometrics for handheld devices: feature
extraction, verification pipelines, score fusion, and key generation."""

__version__ = "0.1.0"

from .matrix import FeatureMatrix

__all__ = ["FeatureMatrix", "__version__"]

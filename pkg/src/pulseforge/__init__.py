"""Camera-based pulse measurement from raw frames."""

__version__ = "0.1.0"

"""Prior and posterior simulation-based calibration checking."""

__version__ = "0.1.0"

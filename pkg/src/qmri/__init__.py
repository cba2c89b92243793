"""qmri: simulation, reconstruction and R2* mapping for multi-echo MRI."""

__version__ = "0.1.0"

from .core import MGREImage, QMaps, RngStream, read_array, write_array  # noqa: F401

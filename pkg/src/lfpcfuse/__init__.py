"""Point-pixel fusion of LiDAR point clouds with multi-view camera features."""

from lfpcfuse.errors import (
    FormatError,
    LfpcError,
    NumericalIntegrityError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "LfpcError",
    "NumericalIntegrityError",
    "ValidationError",
    "__version__",
]

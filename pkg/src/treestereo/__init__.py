"""Tree-based non-local stereo matching with hierarchical disparity prediction.

The library matches rectified stereo pairs by aggregating a truncated
color+gradient cost over spanning trees of the pixel grid (minimum or
random spanning tree), optionally accelerated by a coarse-to-fine pyramid
that predicts, per pixel, a narrow interval of candidate disparities and
restricts both the cost volume and the tree structure to it.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, InternalError, TreeStereoError

__all__ = [
    "__version__",
    "ConfigError",
    "DataError",
    "InternalError",
    "TreeStereoError",
]

"""Locally adaptive P-spline smoothing in one to three dimensions.

Smooth surfaces are fitted as mixed models whose variance parameters are
estimated by a fixed-point update; see :func:`fit_points` and
:func:`fit_grid`.
"""

from .families import get_family
from .model import ModelSpec, SmoothFit, fit_grid, fit_points
from .penalty import AdaptivityMode
from .sop import FitControl, FitResult, fit, fit_design

__all__ = ["AdaptivityMode", "FitControl", "FitResult", "ModelSpec", "SmoothFit",
           "fit", "fit_design", "fit_grid", "fit_points", "get_family"]
__version__ = "0.1.0"

"""Numerical laboratory for hypoelliptic Ornstein-Uhlenbeck operators."""

from .matrix_core import OperatorSpec, classify_spectrum, kalman_index, mat_exp
from .covariance import covariance_bundle, covariance_matrices, det_and_volume
from .constants import compute_constants
from .models import builtin_model, load_model

__all__ = [
    "OperatorSpec",
    "classify_spectrum",
    "kalman_index",
    "mat_exp",
    "covariance_bundle",
    "covariance_matrices",
    "det_and_volume",
    "compute_constants",
    "builtin_model",
    "load_model",
]
__version__ = "0.1.0"

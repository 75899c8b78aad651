"""Continuous-time open quantum walks on Z^d.

Simulation of nearest-neighbor walks with internal degrees of freedom:
exact jump-process trajectory sampling, site-wise master-equation
integration, and the analytic limit-theorem parameters (stationary state,
drift, CLT covariance, large-deviation rate function).
"""

__version__ = "0.1.0"

from . import examples, limits, linalg, master, model, spectral, trajectory
from .examples import builtin_model, classical_model
from .model import WalkModel, build_model, model_from_d0

__all__ = [
    "__version__",
    "examples",
    "limits",
    "linalg",
    "master",
    "model",
    "spectral",
    "trajectory",
    "builtin_model",
    "classical_model",
    "WalkModel",
    "build_model",
    "model_from_d0",
]

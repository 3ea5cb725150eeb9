"""Numerical laboratory for frequency-localized multipliers, square functions,
multi-scale decompositions and multilinear Kakeya overlap functionals."""
from ._kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

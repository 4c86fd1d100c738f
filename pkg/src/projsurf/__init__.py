"""Projective differential geometry of surfaces on a finite-difference lattice.

Modules: ``grid`` (lattice fields and stencils), ``core`` (coefficients,
compatibility, symmetries, classes), ``frames`` (frame systems and
transport), ``families`` (surface generators), ``congruence``
(W-congruences and Bäcklund maps), ``fieldio`` and ``cli``.
"""

from .core import Coeffs, PreconditionError, classify, gc1_residual, gc2_residual
from .grid import GridError, GridSpec, ScalarField

__all__ = ["Coeffs", "GridError", "GridSpec", "PreconditionError", "ScalarField", "classify", "gc1_residual",
           "gc2_residual"]
__version__ = "0.1.0"

"""Numerical toolkit for hyperbolic suspension flows.

Builds the mapping torus of a hyperbolic toral automorphism, computes its
invariant splitting and the dual cone fields, constructs a monotone escape
weight on the cosphere bundle, evaluates the admissible weight-strength
threshold, locates transfer-operator resonances through a mollified Fredholm
determinant on a glued Fourier/collocation basis, and continues resonances
and spectral projectors along vector-field perturbation families.
"""

__version__ = "0.1.0"

from anoflow.torus import (
    Monodromy,
    TorusPoint,
    TangentVector,
    Covector,
    SphereCovector,
    Cone,
)
from anoflow.fields import VectorField, PerturbationFamily, suspension_field
from anoflow.flow import FlowJet, evolve, cotangent_lift, projective_flow

__all__ = [
    "Monodromy",
    "TorusPoint",
    "TangentVector",
    "Covector",
    "SphereCovector",
    "Cone",
    "VectorField",
    "PerturbationFamily",
    "suspension_field",
    "FlowJet",
    "evolve",
    "cotangent_lift",
    "projective_flow",
]

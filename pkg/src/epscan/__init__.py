"""Exceptional points of linearly parameterized Hamiltonian families.

The package builds spin-model Hamiltonian pencils H(lambda) = H0 + lambda*V,
tracks their eigenvalue branches through the complex lambda plane, locates
exceptional points by monodromy and by a discriminant oracle, and runs the
statistical machinery (scaling fits, random-perturbation ensembles) that
discriminates first- from second-order quantum phase transitions.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .spinmodels import (
    HamiltonianFamily,
    SpinOperators,
    build_spin_ops,
    custom_family,
    evaluate_at,
    family_ho,
    family_qpt1,
    family_qpt1p,
    family_qpt2,
    ground_state_observable,
    real_sweep,
)

__all__ = [
    "__version__",
    "HamiltonianFamily",
    "SpinOperators",
    "build_spin_ops",
    "custom_family",
    "evaluate_at",
    "family_ho",
    "family_qpt1",
    "family_qpt1p",
    "family_qpt2",
    "ground_state_observable",
    "real_sweep",
]

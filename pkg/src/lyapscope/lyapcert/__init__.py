"""Sampled verification of certificate conditions."""

from .fenchel import BoundaryArgmaxWarning, ConjugateValue, SearchBox, fenchel_conjugate, fenchel_residual
from .plan import DEFAULT_SEED, SamplePlan, default_seed, unit_directions
from .report import FAIL, INCONCLUSIVE, PASS, CertificateReport
from .verify import (
    check_diffeo,
    chord_pairs,
    convexity_witness_value,
    decrease_threshold,
    lyapunov_witness_value,
    scale_invariance_check,
    verify_convexity,
    verify_gconvex,
    verify_lyapunov,
)

__all__ = [
    "BoundaryArgmaxWarning",
    "CertificateReport",
    "ConjugateValue",
    "DEFAULT_SEED",
    "FAIL",
    "INCONCLUSIVE",
    "PASS",
    "SamplePlan",
    "SearchBox",
    "check_diffeo",
    "chord_pairs",
    "convexity_witness_value",
    "decrease_threshold",
    "default_seed",
    "fenchel_conjugate",
    "fenchel_residual",
    "lyapunov_witness_value",
    "scale_invariance_check",
    "unit_directions",
    "verify_convexity",
    "verify_gconvex",
    "verify_lyapunov",
]

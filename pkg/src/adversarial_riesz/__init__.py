"""Adversarial estimation of Riesz representers and debiased functionals."""

from .core import (
    Dataset,
    EvaluableFunction,
    MomentFunctional,
    RieszEstimate,
    Term,
    adversarial_criterion,
    apply_moment,
    ate,
    constant,
    cross_effect,
    empirical_moment,
    estimate_continuity_constant,
    linear,
    policy_effect,
    shift_transport,
    transport,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EvaluableFunction",
    "MomentFunctional",
    "RieszEstimate",
    "Term",
    "adversarial_criterion",
    "apply_moment",
    "ate",
    "constant",
    "cross_effect",
    "empirical_moment",
    "estimate_continuity_constant",
    "linear",
    "policy_effect",
    "shift_transport",
    "transport",
]

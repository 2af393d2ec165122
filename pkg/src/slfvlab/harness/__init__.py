"""Verification experiments. Each returns an :class:`ExperimentReport`."""
from .cdi import cdi_experiment
from .checks import (bridge_identity_check, jump_rate_check, pair_merge_check, poisson_conservation_check,
                     theta_diagnostic)
from .distance import WeightedPointMeasure, convergence_diagnostic, measure_distance
from .duality import DualitySetup, InsufficientParticles, duality_check, duality_refinement
from .genealogy import lookdown_vs_coalescent_check
from .report import Check, ExperimentReport
from .variation import TestFunction, upsilon, variation_bound_check

__all__ = [
    "Check", "DualitySetup", "ExperimentReport", "InsufficientParticles", "TestFunction", "WeightedPointMeasure",
    "bridge_identity_check", "cdi_experiment", "convergence_diagnostic", "duality_check", "duality_refinement",
    "jump_rate_check", "lookdown_vs_coalescent_check", "measure_distance", "pair_merge_check",
    "poisson_conservation_check", "theta_diagnostic", "upsilon", "variation_bound_check",
]

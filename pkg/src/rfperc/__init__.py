"""Solver suite for the overparameterized binary random-features perceptron.

Analytic side: replica-symmetric saddle points (phase diagram, margins,
generalization errors, stability density) and the Franz-Parisi local
entropy around typical references.  Instance side: teacher-student problem
generation plus Monte Carlo, perceptron-rule and message-passing learners,
with an experiment harness cross-validating the two.
"""

from .special import (
    DEFAULT_ORDER,
    NonlinearityMoments,
    QuadratureRule,
    SIGN_MOMENTS,
    gauss_H,
    gauss_H_beta,
    gauss_hermite,
    integrate_gauss,
    log_H,
    moments_of,
)
from .saddle import (
    ConjugateParams,
    EffectiveOverlaps,
    ModelParams,
    OrderParams,
    SaddleSolution,
    bayes_generalization_error,
    critical_capacity,
    energetic_term,
    entropic_energetic_term,
    entropic_term,
    free_entropy,
    generalization_error,
    max_margin,
    optimal_margin,
    solve_overparam_limit,
    solve_saddle,
    solve_storage_limit,
    stability_density,
    storage_capacity,
)

__all__ = [
    "DEFAULT_ORDER", "NonlinearityMoments", "QuadratureRule", "SIGN_MOMENTS",
    "gauss_H", "gauss_H_beta", "gauss_hermite", "integrate_gauss", "log_H",
    "moments_of",
    "ConjugateParams", "EffectiveOverlaps", "ModelParams", "OrderParams",
    "SaddleSolution", "bayes_generalization_error", "critical_capacity",
    "energetic_term", "entropic_energetic_term", "entropic_term",
    "free_entropy", "generalization_error", "max_margin", "optimal_margin",
    "solve_overparam_limit", "solve_saddle", "solve_storage_limit",
    "stability_density", "storage_capacity",
]

__version__ = "0.1.0"

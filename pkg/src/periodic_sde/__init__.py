"""Simulation and verification toolkit for linear stochastic difference
equations with periodic random coefficients and decaying additive noise."""

from .analysis import (
    Budget,
    Ensemble,
    Estimate,
    RegimeReport,
    Thresholds,
    classify_regime,
    empirical_lp_norm,
    limit_tracking_error,
    martingale_variance,
    periodicity_defect,
    quadratic_variation,
    run_ensemble,
    tracking_truncation,
)
from .coefficients import CoefficientPath, fundamental_product, multiplier, window_bound
from .generators import (
    CoefficientSource,
    ModelSpec,
    NoiseSpec,
    SigmaSequence,
    draw_noise,
    make_unit_multiplier_path,
    noise_block,
    validate,
)
from .recurrence import (
    LimitObjects,
    Trajectory,
    closed_form,
    limit_Ybar,
    simulate,
    step,
    subsample_Y,
    tail_sum_psi,
    unweighted_noise_sum,
)

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "CoefficientPath",
    "CoefficientSource",
    "Ensemble",
    "Estimate",
    "LimitObjects",
    "ModelSpec",
    "NoiseSpec",
    "RegimeReport",
    "SigmaSequence",
    "Thresholds",
    "Trajectory",
    "classify_regime",
    "closed_form",
    "draw_noise",
    "empirical_lp_norm",
    "fundamental_product",
    "limit_Ybar",
    "limit_tracking_error",
    "make_unit_multiplier_path",
    "martingale_variance",
    "multiplier",
    "noise_block",
    "periodicity_defect",
    "quadratic_variation",
    "run_ensemble",
    "simulate",
    "step",
    "subsample_Y",
    "tail_sum_psi",
    "tracking_truncation",
    "unweighted_noise_sum",
    "validate",
    "window_bound",
]

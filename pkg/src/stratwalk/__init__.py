"""Recurrence/transience diagnostics for stratified walks driven by circle rotations."""

__version__ = "0.1.0"

from .diophantine import ContinuedFraction, OstrowskiDigits, family_cf, family_quotients
from .config import (
    ExperimentConfig,
    build_environment,
    bundled_config_names,
    load_config,
)
from .criterion import CriterionReport, Verdict, classify, periodic_exact
from .dispersion import DispersionTable
from .measure import (
    EmpiricalMeasure,
    a_ratio,
    fourier_coboundary,
    functional_residual,
    integral_sign,
    nu_f_empirical,
    ratio_trajectory,
    solve_h,
)
from .montecarlo import (
    GrowthTest,
    WalkState,
    WalkStats,
    aggregate,
    return_growth_test,
    run,
    run_many,
    step,
    vertical_run,
    vertical_run_many,
)
from .report import classify_config, run_experiment

__all__ = [
    "ContinuedFraction",
    "CriterionReport",
    "DispersionTable",
    "EmpiricalMeasure",
    "ExperimentConfig",
    "GrowthTest",
    "OstrowskiDigits",
    "Verdict",
    "WalkState",
    "WalkStats",
    "a_ratio",
    "aggregate",
    "build_environment",
    "bundled_config_names",
    "classify",
    "classify_config",
    "family_cf",
    "family_quotients",
    "fourier_coboundary",
    "functional_residual",
    "integral_sign",
    "load_config",
    "nu_f_empirical",
    "periodic_exact",
    "ratio_trajectory",
    "return_growth_test",
    "run",
    "run_many",
    "run_experiment",
    "solve_h",
    "step",
    "vertical_run",
    "vertical_run_many",
    "__version__",
]

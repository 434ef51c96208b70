"""Flow-perturbation entropy estimators and annealed SMC on Gaussian mixtures."""

from ._core import (
    Config,
    ConfigError,
    Flow,
    Gmm,
    NumericalFailure,
    bench_run,
    benchmark_gmm,
    estimate,
    exact_inverse_log_det,
    flow,
    sample_unit_sphere,
    target,
    work,
)

__all__ = [
    "Config",
    "ConfigError",
    "Flow",
    "Gmm",
    "NumericalFailure",
    "bench_run",
    "benchmark_gmm",
    "estimate",
    "exact_inverse_log_det",
    "flow",
    "sample_unit_sphere",
    "target",
    "work",
]

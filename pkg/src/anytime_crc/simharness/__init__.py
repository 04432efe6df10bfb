"""Deterministic Monte Carlo harness for the synthetic calibration experiments."""

from .experiments import (EXPERIMENTS, ExperimentResult, RunTrace, SetSizeComparison, SimConfig,
                          clopper_pearson, compare_set_sizes, eprocess_check, log_grid, psi_gamma,
                          record_points, run_experiment)
from .kernels import compensated_cumsum, threshold_path
from .models import (LinearModel, QuadratureRisk, SetSizeTable, cond_miscoverage_exact_linear,
                     cond_miscoverage_shift, critical_lambda_linear, fit_held_out_model, fit_ols,
                     gen_linear_block, gen_linear_stream, gen_multiclass_block,
                     gen_multiclass_stream, gen_shift_block, gen_shift_stream)
from .normal import normal_cdf, normal_pdf, normal_ppf, normal_sf
from .rng import Stream, stream_key, uniforms

__all__ = [
    "EXPERIMENTS", "ExperimentResult", "LinearModel", "QuadratureRisk", "RunTrace",
    "SetSizeComparison", "SetSizeTable", "SimConfig", "Stream", "clopper_pearson",
    "compare_set_sizes", "compensated_cumsum", "cond_miscoverage_exact_linear",
    "cond_miscoverage_shift", "critical_lambda_linear", "eprocess_check", "fit_held_out_model",
    "fit_ols", "gen_linear_block", "gen_linear_stream", "gen_multiclass_block",
    "gen_multiclass_stream", "gen_shift_block", "gen_shift_stream", "log_grid", "normal_cdf",
    "normal_pdf", "normal_ppf", "normal_sf", "psi_gamma", "record_points", "run_experiment",
    "stream_key", "threshold_path", "uniforms",
]

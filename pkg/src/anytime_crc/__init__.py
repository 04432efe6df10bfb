"""Anytime-valid conformal risk control.

Correction terms (:mod:`.boundaries`), the exact streaming calibrator
(:mod:`.risk_core`), importance-weighted calibration under covariate shift
(:mod:`.shift`), tightness bands (:mod:`.lowerband`) and a Monte Carlo
harness (:mod:`.simharness`).
"""

from .boundaries import (BoundaryConfig, CorrectionMethod, b_value, correction_term, f_value,
                         gamma_anytime, gamma_duchi, gamma_fixed_subgamma, gamma_standard,
                         h_value, m_star_iid, stitched_boundary_general, stitching_constants)
from .errors import (BandUndefinedError, CheckpointError, ConfigurationError, DomainError,
                     EmptyStateError, InfeasibleError)
from .lowerband import (LowerBandParams, band_levels, delta_seq, g_fn, k_lower, k_lower_shift)
from .risk_core import (CalibratorState, LossProfile, empirical_risk, max_jump,
                        prediction_set_interval, prediction_set_multilabel, profile_fnr,
                        profile_from_score, threshold)
from .shift import (GaussianRatioWeight, ShiftState, gamma_shift, m_star_shift, threshold_shift,
                    weight_gaussian_ratio, weighted_empirical_risk)

__version__ = "0.1.0"

__all__ = [
    "BandUndefinedError", "BoundaryConfig", "CalibratorState", "CheckpointError",
    "ConfigurationError", "CorrectionMethod", "DomainError", "EmptyStateError",
    "GaussianRatioWeight", "InfeasibleError", "LossProfile", "LowerBandParams", "ShiftState",
    "b_value", "band_levels", "correction_term", "delta_seq", "empirical_risk", "f_value",
    "g_fn", "gamma_anytime", "gamma_duchi", "gamma_fixed_subgamma", "gamma_shift",
    "gamma_standard", "h_value", "k_lower", "k_lower_shift", "m_star_iid", "m_star_shift",
    "max_jump", "prediction_set_interval", "prediction_set_multilabel", "profile_fnr",
    "profile_from_score", "stitched_boundary_general", "stitching_constants", "threshold",
    "threshold_shift", "weight_gaussian_ratio", "weighted_empirical_risk",
]

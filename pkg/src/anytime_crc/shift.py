"""Importance-weighted anytime-valid calibration under a known covariate shift.

Each calibration loss is multiplied by its importance weight ``w = dP*/dP``.
The correction is

    gamma_n = B (1 - mean(w)) + b_{B,m*,delta}(max(m*, B^2 W_n)) / n,   W_n = sum w_i^2,

where m* is the first sample size at which the analogous quantity built with
``m = n`` drops to alpha. Until then thresholds stay at ``lambda_max``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .boundaries import BoundaryConfig, _b, _h, _as_output
from .errors import CheckpointError, ConfigurationError, DomainError
from .risk_core import (CHECKPOINT_VERSION, LossProfile, RiskAggregate, Sample, _as_profile,
                        _dec_float, _enc_float)

logger = logging.getLogger(__name__)

SHIFT_VARIANTS = ("proof", "statement")


@dataclass(frozen=True)
class GaussianRatioWeight:
    """Density ratio ``N(x; mean_star, sd_star^2) / N(x; mean_cal, sd_cal^2)``."""

    mean_star: float
    sd_star: float
    mean_cal: float
    sd_cal: float

    def __post_init__(self) -> None:
        if not (self.sd_star > 0 and self.sd_cal > 0):
            raise ConfigurationError("standard deviations must be > 0")

    def log_weight(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("covariates must be finite")
        zs = (x - self.mean_star) / self.sd_star
        zc = (x - self.mean_cal) / self.sd_cal
        return 0.5 * (zc**2 - zs**2) + math.log(self.sd_cal / self.sd_star)

    def __call__(self, x):
        return _as_output(np.exp(self.log_weight(x)))

    def second_moment(self) -> float:
        """``E_P[w^2]``; infinite when the ratio is not square-integrable under P."""
        a = 2.0 / self.sd_star**2 - 1.0 / self.sd_cal**2
        if a <= 0:
            return math.inf
        bq = 2.0 * self.mean_star / self.sd_star**2 - self.mean_cal / self.sd_cal**2
        c = 2.0 * self.mean_star**2 / self.sd_star**2 - self.mean_cal**2 / self.sd_cal**2
        log_norm = math.log(self.sd_cal / self.sd_star**2) - 0.5 * math.log(a)
        return math.exp(log_norm + 0.5 * (bq**2 / a - c))

    @classmethod
    def parse(cls, spec: str) -> "GaussianRatioWeight":
        """Build from ``"mean_star,sd_star,mean_cal,sd_cal"``."""
        parts = [float(p) for p in spec.split(",")]
        if len(parts) != 4:
            raise ConfigurationError(f"expected four comma-separated numbers, got {spec!r}")
        return cls(*parts)


def weight_gaussian_ratio(x, params: GaussianRatioWeight):
    return params(x)


def shift_condition(n, sum_w, sum_w2, alpha: float, cfg: BoundaryConfig):
    """``B (1 - sum_w/n) + b_{B,n,delta}(B^2 W_n) / n``, the quantity defining m*.

    Vectorized over aligned ``n``, ``sum_w``, ``sum_w2``.
    """
    n = np.asarray(n, dtype=float)
    B = cfg.B
    v = B**2 * np.asarray(sum_w2, dtype=float)
    return _as_output(B * (1.0 - np.asarray(sum_w, dtype=float) / n) + _b(v, n, cfg.delta) / n)


def gamma_shift(n, sum_w, sum_w2, cfg: BoundaryConfig, m_star: int, variant: str = "proof",
                clamp: bool = True):
    """Weighted correction term at sample size ``n``.

    ``variant="proof"`` uses ``b(max(m*, B^2 W_n))``; ``"statement"`` replaces it
    with ``h(B^2 W_n)``. Negative values are clamped to zero unless ``clamp`` is
    False.
    """
    if variant not in SHIFT_VARIANTS:
        raise ConfigurationError(f"variant must be one of {SHIFT_VARIANTS}, got {variant!r}")
    n = np.asarray(n, dtype=float)
    B = cfg.B
    v = B**2 * np.asarray(sum_w2, dtype=float)
    mean_term = B * (1.0 - np.asarray(sum_w, dtype=float) / n)
    if variant == "proof":
        radial = _b(np.maximum(v, float(m_star)), float(m_star), cfg.delta)
    else:
        radial = _h(v, float(m_star), cfg.delta)
    gamma = mean_term + radial / n
    if clamp:
        gamma = np.maximum(gamma, 0.0)
    return _as_output(gamma)


class _CompensatedSum:
    """Neumaier-compensated running sum."""

    __slots__ = ("value", "_c")

    def __init__(self, value: float = 0.0, comp: float = 0.0) -> None:
        self.value = value
        self._c = comp

    def add(self, x: float) -> None:
        t = self.value + x
        if abs(self.value) >= abs(x):
            self._c += (self.value - t) + x
        else:
            self._c += (x - t) + self.value
        self.value = t

    def __float__(self) -> float:
        return self.value + self._c


class ShiftState:
    """Single-writer streaming state of the weighted calibrator."""

    def __init__(self, alpha: float, cfg: BoundaryConfig | None = None, *,
                 variant: str = "proof", running_min: bool = True,
                 lambda_min: float = 0.0, lambda_max: float = math.inf) -> None:
        self.cfg = cfg if cfg is not None else BoundaryConfig()
        self.alpha = float(alpha)
        if not 0 < self.alpha < self.cfg.B:
            raise ConfigurationError(f"alpha must lie in (0, B={self.cfg.B}), got {alpha}")
        if variant not in SHIFT_VARIANTS:
            raise ConfigurationError(f"variant must be one of {SHIFT_VARIANTS}, got {variant!r}")
        self.variant = variant
        self.running_min = running_min
        self._agg = RiskAggregate(lambda_min, lambda_max)
        self._sum_w = _CompensatedSum()
        self._sum_w2 = _CompensatedSum()
        self.max_weight = 0.0
        self.m_star: int | None = None
        self.lambda_prev = self._agg.lambda_max
        self.last_gamma: float | None = None
        self.clamp_events = 0

    @property
    def n(self) -> int:
        return self._agg.n

    @property
    def sum_w(self) -> float:
        return float(self._sum_w)

    @property
    def sum_w2(self) -> float:
        return float(self._sum_w2)

    @property
    def lambda_max(self) -> float:
        return self._agg.lambda_max

    def gamma(self, clamp: bool = True) -> float:
        if self.m_star is None:
            raise DomainError("m* not reached yet; the correction is undefined")
        return gamma_shift(self.n, self.sum_w, self.sum_w2, self.cfg, self.m_star, self.variant, clamp)

    def weighted_empirical_risk(self, lam: float) -> float:
        """``(1/n) sum w_i loss_i(lam)``; may exceed B when weights exceed one."""
        return self._agg.risk(lam)

    def max_jump(self) -> float:
        return self._agg.max_jump()

    def push(self, sample: Sample, weight: float) -> None:
        """Add a sample and refresh m*, without computing a threshold."""
        weight = float(weight)
        if not math.isfinite(weight) or weight < 0:
            raise DomainError(f"importance weight must be finite and >= 0, got {weight}")
        self._agg.push(_as_profile(sample), weight)
        self._sum_w.add(weight)
        self._sum_w2.add(weight * weight)
        self.max_weight = max(self.max_weight, weight)
        if self.m_star is None:
            cond = shift_condition(self.n, self.sum_w, self.sum_w2, self.alpha, self.cfg)
            if cond <= self.alpha:
                self.m_star = self.n
                logger.info("shift m* reached at n=%d", self.n)

    def threshold(self) -> float:
        """Raw weighted threshold at the current state (``lambda_max`` before m*)."""
        if self.m_star is None:
            return self.lambda_max
        raw = self.gamma(clamp=False)
        gamma = max(raw, 0.0)
        if raw < 0:
            self.clamp_events += 1
            logger.debug("negative shift correction %.3g clamped at n=%d", raw, self.n)
        self.last_gamma = gamma
        return self._agg.threshold(self.alpha - gamma)

    def update(self, sample: Sample, weight: float) -> float:
        self.push(sample, weight)
        if self.m_star is None:
            self.last_gamma = None
        lam = self.threshold()
        if self.running_min:
            lam = min(lam, self.lambda_prev)
        self.lambda_prev = lam
        return lam

    def to_dict(self) -> dict:
        d = {
            "kind": "shift",
            "version": CHECKPOINT_VERSION,
            "alpha": self.alpha,
            "delta": self.cfg.delta,
            "B": self.cfg.B,
            "method": "shift_anytime",
            "variant": self.variant,
            "running_min": self.running_min,
            "m_star": self.m_star,
            "sum_w": [self._sum_w.value, self._sum_w._c],
            "sum_w2": [self._sum_w2.value, self._sum_w2._c],
            "max_weight": self.max_weight,
            "clamp_events": self.clamp_events,
            "lambda_prev": _enc_float(self.lambda_prev),
            "last_gamma": self.last_gamma,
        }
        d.update(self._agg.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftState":
        if d.get("version") != CHECKPOINT_VERSION or d.get("kind") != "shift":
            raise CheckpointError(f"unsupported checkpoint (kind={d.get('kind')!r}, version={d.get('version')!r})")
        state = cls(d["alpha"], BoundaryConfig(loss_bound=d["B"], delta=d["delta"]),
                    variant=d["variant"], running_min=d["running_min"],
                    lambda_min=_dec_float(d["lambda_min"]), lambda_max=_dec_float(d["lambda_max"]))
        state._agg = RiskAggregate.from_dict(d)
        state._sum_w = _CompensatedSum(*d["sum_w"])
        state._sum_w2 = _CompensatedSum(*d["sum_w2"])
        state.max_weight = d["max_weight"]
        state.clamp_events = d["clamp_events"]
        state.m_star = d["m_star"]
        state.lambda_prev = _dec_float(d["lambda_prev"])
        state.last_gamma = d["last_gamma"]
        return state

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ShiftState":
        return cls.from_dict(json.loads(text))


def m_star_shift(state: ShiftState) -> int | None:
    return state.m_star


def weighted_empirical_risk(state: ShiftState, lam: float) -> float:
    return state.weighted_empirical_risk(lam)


def threshold_shift(state: ShiftState) -> float:
    return state.threshold()


__all__ = [
    "GaussianRatioWeight", "LossProfile", "ShiftState", "gamma_shift", "m_star_shift",
    "shift_condition", "threshold_shift", "weight_gaussian_ratio", "weighted_empirical_risk",
]

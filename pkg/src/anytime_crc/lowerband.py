"""Tightness bands: with probability >= 1 - 2 delta the risk stays in [alpha - k_n, alpha].

The slack is ``k_n = d_{g(n)} + gamma_{g(n)} + gamma'_{g(n)}(delta_{floor(log2 n)})``
with ``g(n)`` the largest power of two <= n; all three pieces are frozen on
dyadic blocks ``[2^i, 2^{i+1})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boundaries import BoundaryConfig, _as_output, gamma_anytime, gamma_fixed_subgamma
from .errors import BandUndefinedError, ConfigurationError, DomainError
from .shift import gamma_shift


def g_fn(n):
    """Largest power of two not exceeding ``n``."""
    arr = np.asarray(n)
    if np.any(arr < 1):
        raise DomainError(f"n must be >= 1, got {n!r}")
    if arr.ndim == 0:
        n = int(n)
        return 1 << (n.bit_length() - 1)
    return np.left_shift(np.int64(1), dyadic_index(arr))


def dyadic_index(n):
    """``floor(log2 n)``, computed exactly."""
    if np.ndim(n) == 0:
        return int(n).bit_length() - 1
    _, exponent = np.frexp(np.asarray(n, dtype=float))
    return (exponent - 1).astype(np.int64)


def delta_seq(i, delta: float):
    """``delta / (i (i + 1))``; the series over i >= 1 sums to ``delta``."""
    arr = np.asarray(i)
    if np.any(arr < 1):
        raise DomainError(f"index must be >= 1, got {i!r}")
    return _as_output(delta / (arr * (arr + 1.0)))


@dataclass(frozen=True)
class LowerBandParams:
    """Inputs of the band.

    ``d_source="analytic"`` uses ``B / g(n)``, the jump size of distinct-score
    indicator losses; ``"measured"`` expects the caller to pass the observed
    largest jump at the ``g(n)``-sized prefix. ``squared_weights`` switches the
    shift variant to ``W_n^2`` inside the radical.
    """

    alpha: float
    cfg: BoundaryConfig = field(default_factory=BoundaryConfig)
    d_source: str = "analytic"
    variant: str = "iid"
    squared_weights: bool = False
    safe_boundary: bool = False

    def __post_init__(self) -> None:
        if self.d_source not in ("analytic", "measured"):
            raise ConfigurationError(f"d_source must be 'analytic' or 'measured', got {self.d_source!r}")
        if self.variant not in ("iid", "shift"):
            raise ConfigurationError(f"variant must be 'iid' or 'shift', got {self.variant!r}")
        if not 0 < self.alpha < self.cfg.B:
            raise ConfigurationError(f"alpha must lie in (0, B), got {self.alpha}")

    @property
    def delta(self) -> float:
        return self.cfg.delta

    @property
    def B(self) -> float:
        return self.cfg.B


def _jump(params: LowerBandParams, g, measured_jump):
    if params.d_source == "measured":
        if measured_jump is None:
            raise ConfigurationError("d_source='measured' needs the observed jump at g(n)")
        return np.asarray(measured_jump, dtype=float)
    return params.B / np.asarray(g, dtype=float)


def _check_defined(n, m_star: int) -> None:
    if np.any(np.asarray(n) < max(2, m_star)):
        raise BandUndefinedError(f"band undefined for n < max(2, m*={m_star}); got n={n!r}")


def k_lower(n, params: LowerBandParams, m_star: int, measured_jump=None):
    """Band slack for the i.i.d. anytime calibrator.

    ``measured_jump`` (measured d-source only) is the largest jump of the
    empirical risk after ``g(n)`` samples; arrays are accepted for array ``n``.
    """
    _check_defined(n, m_star)
    g = g_fn(n)
    i = dyadic_index(n)
    alpha, cfg = params.alpha, params.cfg
    d = _jump(params, g, measured_jump)
    gam = gamma_anytime(g, alpha, cfg, m_star, params.safe_boundary)
    tail = gamma_fixed_subgamma(g, alpha, delta_seq(i, cfg.delta), cfg.B)
    return _as_output(d + gam + tail)


def gamma_prime_shift(n, sum_w2, B: float, delta, squared_weights: bool = False):
    """``sqrt(2 B^2 W_n / n^2 log(1/delta))`` (``W_n^2`` when ``squared_weights``)."""
    n = np.asarray(n, dtype=float)
    W = np.asarray(sum_w2, dtype=float)
    if squared_weights:
        W = W**2
    return _as_output(np.sqrt(2.0 * B**2 * W / n**2 * np.log(1.0 / np.asarray(delta, dtype=float))))


def k_lower_shift(n, params: LowerBandParams, m_star: int, sum_w_at_g, sum_w2_at_g,
                  measured_jump=None, shift_variant: str = "proof"):
    """Band slack for the weighted calibrator.

    ``sum_w_at_g`` and ``sum_w2_at_g`` are the weight sums after ``g(n)``
    samples (a snapshot of the stream at the dyadic time).
    """
    _check_defined(n, m_star)
    g = g_fn(n)
    i = dyadic_index(n)
    cfg = params.cfg
    d = _jump(params, g, measured_jump)
    gam = gamma_shift(g, sum_w_at_g, sum_w2_at_g, cfg, m_star, shift_variant)
    tail = gamma_prime_shift(g, sum_w2_at_g, cfg.B, delta_seq(i, cfg.delta), params.squared_weights)
    return _as_output(d + gam + tail)


def k_lower_from_state(n: int, params: LowerBandParams, snapshot) -> float:
    """Band slack read off a state snapshot taken at ``g(n)`` samples.

    ``snapshot`` is a :class:`~anytime_crc.risk_core.CalibratorState` (i.i.d.
    variant) or :class:`~anytime_crc.shift.ShiftState` whose ``n`` equals
    ``g(n)``.
    """
    g = g_fn(n)
    if snapshot.n != g:
        raise DomainError(f"snapshot has n={snapshot.n}, expected g(n)={g}")
    jump = snapshot.max_jump() if params.d_source == "measured" else None
    if params.variant == "iid":
        return k_lower(n, params, snapshot.m_star, jump)
    if snapshot.m_star is None:
        raise BandUndefinedError("shift m* not reached at the snapshot")
    return k_lower_shift(n, params, snapshot.m_star, snapshot.sum_w, snapshot.sum_w2, jump,
                         snapshot.variant)


def band_levels(ns, params: LowerBandParams, m_star: int) -> np.ndarray:
    """``alpha - k_n`` for every n in ``ns`` (NaN where the band is undefined)."""
    ns = np.asarray(ns, dtype=np.int64)
    out = np.full(ns.shape, math.nan)
    ok = ns >= max(2, m_star)
    if np.any(ok):
        out[ok] = params.alpha - np.asarray(k_lower(ns[ok], params, m_star))
    return out

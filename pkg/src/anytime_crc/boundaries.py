"""Closed-form correction terms and time-uniform boundaries.

Every function here is pure. Functions taking a variance argument ``v`` or a
sample size ``n`` accept either scalars or numpy arrays; scalars in give a
Python ``float`` out.

Logarithms are natural except for the explicit base-2 / base-eta iterated
logarithm inside the stitching term.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError, InfeasibleError

# f = F_SQRT * sqrt(v h) + F_LIN * B h, from the eta = 2 stitched boundary.
F_SQRT = 1.44
F_LIN = 2.42

#: The free scale l0 of the stitched boundary, fixed at 1.
STITCH_L0 = 1.0

M_STAR_CAP = 10**9


class CorrectionMethod(str, enum.Enum):
    ANYTIME = "anytime"
    STANDARD = "standard"
    FIXED_DUCHI = "fixed_duchi"
    FIXED_SUBGAMMA = "fixed_subgamma"
    SHIFT_ANYTIME = "shift_anytime"

    @property
    def running_min(self) -> bool:
        """Whether thresholds are passed through a running minimum by default."""
        return self in (CorrectionMethod.ANYTIME, CorrectionMethod.SHIFT_ANYTIME)

    @classmethod
    def parse(cls, value: "str | CorrectionMethod") -> "CorrectionMethod":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"duchi": "fixed_duchi", "fixed": "fixed_duchi", "subgamma": "fixed_subgamma",
                   "shift": "shift_anytime"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigurationError(f"unknown correction method {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class BoundaryConfig:
    """Parameters shared by all boundary formulas.

    Attributes
    ----------
    loss_bound : float
        Upper bound B of the loss (losses live in [0, B]).
    delta : float
        Failure probability, in (0, 1).
    m : float
        Stitch-start scale; the iterated-log term vanishes for v <= m.
    eta : float
        Geometric epoch ratio of the general stitched boundary (> 1).
    """

    loss_bound: float = 1.0
    delta: float = 0.1
    m: float = 1.0
    eta: float = 2.0

    def __post_init__(self) -> None:
        for name in ("loss_bound", "delta", "m", "eta"):
            value = getattr(self, name)
            if not isinstance(value, (int, float, np.floating, np.integer)) or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be a finite real, got {value!r}")
        if self.loss_bound <= 0:
            raise ConfigurationError(f"loss_bound must be > 0, got {self.loss_bound}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.m <= 0:
            raise ConfigurationError(f"m must be > 0, got {self.m}")
        if self.eta <= 1:
            raise ConfigurationError(f"eta must be > 1, got {self.eta}")

    @property
    def B(self) -> float:
        return float(self.loss_bound)

    def with_m(self, m: float) -> "BoundaryConfig":
        return replace(self, m=float(m))


def _as_output(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check_v(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"variance argument must be >= 0, got {v!r}")
    return arr


def _check_n(n) -> np.ndarray:
    arr = np.asarray(n)
    if arr.dtype.kind not in "iuf" or np.any(arr < 1) or np.any(arr != np.floor(arr)):
        raise DomainError(f"sample size must be a positive integer, got {n!r}")
    return arr.astype(float)


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not 0 < value < 1:
        raise DomainError(f"{name} must lie in (0, 1), got {value}")
    return value


def _log_term(delta: float) -> float:
    return math.log(math.pi**2 / (6.0 * delta))


def _h(v: np.ndarray, m, delta: float) -> np.ndarray:
    ratio = np.maximum(v, m) / m
    return 2.0 * np.log(np.log2(ratio) + 1.0) + _log_term(delta)


def _f(v: np.ndarray, m, B: float, delta: float) -> np.ndarray:
    h = _h(v, m, delta)
    return F_SQRT * np.sqrt(v * h) + F_LIN * B * h


def _b(v: np.ndarray, m, delta: float) -> np.ndarray:
    return F_SQRT * np.sqrt(v * _h(v, m, delta))


def h_value(v, cfg: BoundaryConfig):
    """Iterated-logarithm stitching term ``2 log(log2(max(v, m)/m) + 1) + log(pi^2 / (6 delta))``."""
    return _as_output(_h(_check_v(v), cfg.m, cfg.delta))


def f_value(v, cfg: BoundaryConfig):
    """Sub-gamma stitched radius ``1.44 sqrt(v h(v)) + 2.42 B h(v)``."""
    return _as_output(_f(_check_v(v), cfg.m, cfg.B, cfg.delta))


def b_value(v, cfg: BoundaryConfig):
    """The square-root part of :func:`f_value` alone (scale parameter zero)."""
    return _as_output(_b(_check_v(v), cfg.m, cfg.delta))


def stitching_constants(eta: float) -> tuple[float, float]:
    """Return ``(k1, k2)`` of the general stitched boundary for epoch ratio ``eta``."""
    if not eta > 1:
        raise ConfigurationError(f"eta must be > 1, got {eta}")
    k1 = (eta**0.25 + eta**-0.25) / math.sqrt(2.0)
    k2 = (math.sqrt(eta) + 1.0) / 2.0
    return k1, k2


def _default_log_h(k):
    # h(k) = (k + 1)^2 pi^2 / 6, whose reciprocals sum to one over k >= 0
    return 2.0 * np.log(k + 1.0) + math.log(math.pi**2 / 6.0)


def stitched_boundary_general(v, c: float, cfg: BoundaryConfig,
                              log_h: Callable | None = None):
    """General stitched boundary with epoch ratio ``cfg.eta``.

    ``sqrt(k1^2 v d(v) + k2^2 c^2 d(v)^2) + k2 c d(v)`` where
    ``d(v) = log h(log_eta(max(v, m)/m)) + log(l0/delta)`` and ``l0 = 1``.
    ``log_h`` replaces the default ``log((k+1)^2 pi^2/6)``; any increasing h with
    ``sum 1/h(k) <= 1`` keeps the boundary valid.
    """
    arr = _check_v(v)
    k1, k2 = stitching_constants(cfg.eta)
    log_h = _default_log_h if log_h is None else log_h
    epochs = np.log(np.maximum(arr, cfg.m) / cfg.m) / math.log(cfg.eta)
    d = log_h(epochs) + math.log(STITCH_L0 / cfg.delta)
    out = np.sqrt(k1**2 * arr * d + k2**2 * c**2 * d**2) + k2 * c * d
    return _as_output(out)


def anytime_condition(m_prime, alpha: float, cfg: BoundaryConfig):
    """``f_{B,m',delta}(alpha (B - alpha) m') / m'``, the quantity defining m*."""
    mp = _check_n(m_prime)
    v = alpha * (cfg.B - alpha) * mp
    return _as_output(_f(v, mp, cfg.B, cfg.delta) / mp)


def m_star_iid(alpha: float, cfg: BoundaryConfig, cap: int = M_STAR_CAP) -> int:
    """Smallest sample size at which the anytime correction drops to ``alpha``.

    The condition is scanned candidate by candidate (vectorized in growing
    chunks) without assuming it is monotone in m'. The first hit is returned
    after a scalar re-check of it and of its predecessor.
    """
    B = cfg.B
    if not 0 < alpha < B:
        raise DomainError(f"alpha must lie in (0, B={B}), got {alpha}")
    start, chunk = 1, 1024
    while start <= cap:
        stop = min(cap, start + chunk - 1)
        mp = np.arange(start, stop + 1, dtype=float)
        v = alpha * (B - alpha) * mp
        hits = np.flatnonzero(_f(v, mp, B, cfg.delta) / mp <= alpha)
        if hits.size:
            m_star = int(start + hits[0])
            if not anytime_condition(m_star, alpha, cfg) <= alpha:
                raise InfeasibleError(f"m* certificate failed at {m_star} (alpha={alpha})")
            if m_star > 1 and anytime_condition(m_star - 1, alpha, cfg) <= alpha:
                raise InfeasibleError(f"m* minimality certificate failed at {m_star - 1}")
            return m_star
        start = stop + 1
        chunk = min(chunk * 8, 1 << 22)
    raise InfeasibleError(
        f"no m* <= {cap} satisfies the anytime condition for alpha={alpha}, "
        f"delta={cfg.delta}, B={B}")


def gamma_anytime(n, alpha: float, cfg: BoundaryConfig, m_star: int, safe_boundary: bool = False):
    """Anytime-valid correction ``f_{B,m*,delta}(alpha (B - alpha) n) / n``.

    With ``safe_boundary`` the radius is evaluated at ``max(v, m*)``, the form
    used inside the validity argument; the default feeds the raw variance.
    Values exceed ``alpha`` for ``n < m*`` (uninformative sets).
    """
    nn = _check_n(n)
    if m_star < 1:
        raise DomainError(f"m_star must be >= 1, got {m_star}")
    v = alpha * (cfg.B - alpha) * nn
    if safe_boundary:
        v = np.maximum(v, float(m_star))
    return _as_output(_f(v, float(m_star), cfg.B, cfg.delta) / nn)


def standard_rank(n, alpha: float):
    """``ceil((1 - alpha)(n + 1))`` evaluated exactly for the binary value of ``alpha``."""
    p, q = float(alpha).as_integer_ratio()
    if np.ndim(n) == 0:
        return -((-(q - p) * (int(n) + 1)) // q)
    return np.fromiter((-((-(q - p) * (int(k) + 1)) // q) for k in np.asarray(n).ravel()),
                       dtype=np.int64).reshape(np.shape(n))


def gamma_standard(n, alpha: float):
    """Split-conformal correction ``ceil((1 - alpha)(n + 1)) / n - (1 - alpha)``."""
    nn = _check_n(n)
    _check_unit("alpha", alpha)
    rank = standard_rank(nn.astype(np.int64) if nn.ndim else int(nn), alpha)
    return _as_output(np.asarray(rank, dtype=float) / nn - (1.0 - alpha))


def gamma_duchi(n, alpha: float, delta: float):
    nn = _check_n(n)
    _check_unit("alpha", alpha)
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    log_inv = math.log(1.0 / delta)
    lin = 4.0 * log_inv / (3.0 * nn)
    return _as_output(lin + np.sqrt(lin**2 + 2.0 * alpha * (1.0 - alpha) * log_inv / nn))


def gamma_fixed_subgamma(n, alpha: float, delta, B: float):
    """Fixed-time Bernstein-type correction of a sub-gamma sum with scale B.

    ``(B/n) log(1/delta) + sqrt(2 alpha (B - alpha)/n log(1/delta) + ((B/n) log(1/delta))^2)``.
    ``delta`` may be an array broadcasting against ``n``.
    """
    nn = _check_n(n)
    d = np.asarray(delta, dtype=float)
    if np.any(~((d > 0) & (d <= 1))):
        raise DomainError(f"delta must lie in (0, 1], got {delta!r}")
    if not 0 < alpha < B:
        raise DomainError(f"alpha must lie in (0, B={B}), got {alpha}")
    log_inv = np.log(1.0 / d)
    lin = B / nn * log_inv
    return _as_output(lin + np.sqrt(2.0 * alpha * (B - alpha) / nn * log_inv + lin**2))


def correction_term(method: CorrectionMethod, n, alpha: float, cfg: BoundaryConfig,
                    m_star: int | None = None, safe_boundary: bool = False):
    """Dispatch to the i.i.d. correction selected by ``method``."""
    method = CorrectionMethod.parse(method)
    if method is CorrectionMethod.ANYTIME:
        if m_star is None:
            m_star = m_star_iid(alpha, cfg)
        return gamma_anytime(n, alpha, cfg, m_star, safe_boundary)
    if method is CorrectionMethod.STANDARD:
        return gamma_standard(n, alpha)
    if method is CorrectionMethod.FIXED_DUCHI:
        return gamma_duchi(n, alpha, cfg.delta)
    if method is CorrectionMethod.FIXED_SUBGAMMA:
        return gamma_fixed_subgamma(n, alpha, cfg.delta, cfg.B)
    raise ConfigurationError("shift_anytime needs importance weights; use anytime_crc.shift")


def boundary_table(alpha: float, cfg: BoundaryConfig, n_max: int = 10**6, points: int = 40,
                   safe_boundary: bool = False) -> list[dict]:
    """Standard, fixed-time and anytime corrections on a log-spaced grid of sample sizes.

    The grid always contains ``m* - 1`` and ``m*`` (when within ``n_max``), where
    the anytime correction first drops to ``alpha``.
    """
    if n_max < 1 or points < 1:
        raise DomainError("n_max and points must be >= 1")
    m_star = m_star_iid(alpha, cfg)
    grid = set(np.round(np.geomspace(1, n_max, points)).astype(np.int64).tolist())
    grid.update(n for n in (m_star - 1, m_star) if 1 <= n <= n_max)
    ns = np.array(sorted(grid), dtype=np.int64)
    g_std = np.atleast_1d(gamma_standard(ns, alpha))
    g_dx = np.atleast_1d(gamma_duchi(ns, alpha, cfg.delta))
    g_any = np.atleast_1d(gamma_anytime(ns, alpha, cfg, m_star, safe_boundary))
    return [
        {"n": int(n), "gamma_standard": float(a), "gamma_duchi": float(b),
         "gamma_anytime": float(c), "m_star": m_star}
        for n, a, b, c in zip(ns, g_std, g_dx, g_any)
    ]

"""Synthetic data generators and exact conditional-risk oracles.

Every generator maps a draw address (seed, run, index) to a sample through
:func:`~anytime_crc.simharness.rng.uniforms`, so ``gen_*_stream(seed, i)``
and the vectorized ``gen_*_block`` agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from ..errors import DomainError
from ..shift import GaussianRatioWeight
from .normal import normal_cdf, normal_sf
from .rng import Stream, uniforms

# Linear regression setting: Y = 2X + eps, X ~ U(-3, 3), eps ~ N(0, 1).
LINEAR_X_RANGE = (-3.0, 3.0)
LINEAR_SLOPE = 2.0

# Cubic setting under covariate shift.
SHIFT_NOISE_SD = 0.3
SHIFT_CAL = (0.5, 0.5)   # (mean, sd) of calibration covariates
SHIFT_TEST = (0.0, 0.3)  # (mean, sd) of test covariates
SHIFT_WEIGHT = GaussianRatioWeight(SHIFT_TEST[0], SHIFT_TEST[1], SHIFT_CAL[0], SHIFT_CAL[1])
HELD_OUT_SIZE = 1000

QUAD_NODES = 201
QUAD_HALF_WIDTH = 6.0


# ---------------------------------------------------------------------------
# linear model

def gen_linear_block(seed: int, run: int, start: int, count: int,
                     stream: int = Stream.CALIBRATION):
    """Draws ``start .. start+count-1``: arrays ``(x, y, score)`` with ``score = |y - 2x|``."""
    u = uniforms(seed, run, stream, start, count, 2)
    lo, hi = LINEAR_X_RANGE
    x = lo + (hi - lo) * u[:, 0]
    eps = special.ndtri(u[:, 1])
    y = LINEAR_SLOPE * x + eps
    return x, y, np.abs(y - LINEAR_SLOPE * x)


def gen_linear_stream(seed: int, i: int, run: int = 0) -> tuple[float, float, float]:
    x, y, s = gen_linear_block(seed, run, i, 1)
    return float(x[0]), float(y[0]), float(s[0])


def cond_miscoverage_exact_linear(lam):
    """``P(|eps| > lam) = 2 Phi(-lam)`` for a standard normal residual."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise DomainError("lambda must be >= 0")
    out = special.erfc(lam / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def critical_lambda_linear(level: float) -> float:
    """The lambda at which ``2 Phi(-lambda) = level``."""
    return float(-special.ndtri(level / 2.0))


# ---------------------------------------------------------------------------
# cubic model under covariate shift

def _cubic_response(x, u_noise):
    return -x + x**3 + SHIFT_NOISE_SD * special.ndtri(u_noise)


def gen_shift_block(seed: int, run: int, start: int, count: int,
                    stream: int = Stream.CALIBRATION):
    """Calibration draws ``(x, y, weight)`` with ``X ~ N(0.5, 0.5^2)``."""
    u = uniforms(seed, run, stream, start, count, 2)
    x = SHIFT_CAL[0] + SHIFT_CAL[1] * special.ndtri(u[:, 0])
    y = _cubic_response(x, u[:, 1])
    return x, y, SHIFT_WEIGHT(x)


def gen_shift_stream(seed: int, i: int, run: int = 0) -> tuple[float, float, float]:
    x, y, w = gen_shift_block(seed, run, i, 1)
    return float(x[0]), float(y[0]), float(w[0])


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    slope: float

    def __call__(self, x):
        return self.intercept + self.slope * np.asarray(x, dtype=float)


def fit_ols(x, y) -> LinearModel:
    """Least-squares line through ``(x, y)`` from the normal equations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("x and y must be 1-d arrays of equal length")
    if x.size < 2 or np.ptp(x) == 0:
        raise DomainError("need at least two distinct covariate values")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    slope = float(dx @ (y - ym)) / sxx
    return LinearModel(float(ym - slope * xm), slope)


def fit_held_out_model(seed: int, size: int = HELD_OUT_SIZE) -> LinearModel:
    x, y, _ = gen_shift_block(seed, 0, 0, size, Stream.HELD_OUT)
    return fit_ols(x, y)


class QuadratureRisk:
    """Conditional miscoverage of ``[f(x) - lam, f(x) + lam]`` for the cubic model.

    ``risk(lam) = E_X[ P(|mu(X) + eps| > lam) ]`` with ``mu(x) = x^3 - x - f(x)``
    and ``eps ~ N(0, 0.3^2)``, integrated over ``X ~ N(mean, sd^2)`` by
    Gauss-Legendre quadrature on ``mean +- 6 sd`` (weights renormalized to one).
    """

    def __init__(self, model: LinearModel, mean: float, sd: float,
                 nodes: int = QUAD_NODES, half_width: float = QUAD_HALF_WIDTH) -> None:
        t, w = np.polynomial.legendre.leggauss(nodes)
        x = mean + half_width * sd * t
        dens = np.exp(-0.5 * (half_width * t) ** 2)
        self.weights = w * dens / np.sum(w * dens)
        self.mu = x**3 - x - model(x)
        self.model = model

    def risk(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise DomainError("lambda must be >= 0")
        lam_col = lam[..., None]
        upper = normal_sf((lam_col - self.mu) / SHIFT_NOISE_SD)
        lower = normal_cdf((-lam_col - self.mu) / SHIFT_NOISE_SD)
        out = np.sum((upper + lower) * self.weights, axis=-1)
        return float(out) if out.ndim == 0 else out

    def critical_lambda(self, level: float) -> float:
        """The lambda at which the risk equals ``level`` (risk is decreasing)."""
        hi = 1.0
        while self.risk(hi) > level:
            hi *= 2.0
        return float(optimize.brentq(lambda l: self.risk(l) - level, 0.0, hi, xtol=1e-15))


def cond_miscoverage_shift(lam, model: LinearModel, test_mean: float = SHIFT_TEST[0],
                           test_sd: float = SHIFT_TEST[1]):
    return QuadratureRisk(model, test_mean, test_sd).risk(lam)


# ---------------------------------------------------------------------------
# synthetic multiclass classifier

def gen_multiclass_block(seed: int, run: int, start: int, count: int, K: int,
                         signal: float, stream: int = Stream.CALIBRATION):
    """Labels (0-based) and softmax class scores of shape ``(count, K)``.

    The label is uniform; logits are standard normal with ``signal`` added to
    the true class.
    """
    if K < 2:
        raise DomainError("K must be >= 2")
    u = uniforms(seed, run, stream, start, count, K + 1)
    labels = np.minimum((u[:, 0] * K).astype(np.int64), K - 1)
    logits = special.ndtri(u[:, 1:])
    logits[np.arange(count), labels] += signal
    return labels, special.softmax(logits, axis=1)


def gen_multiclass_stream(seed: int, i: int, K: int, signal: float, run: int = 0):
    labels, scores = gen_multiclass_block(seed, run, i, 1, K, signal)
    return int(labels[0]), scores[0]


def true_class_thresholds(seed: int, run: int, count: int, K: int, signal: float,
                          stream: int = Stream.CALIBRATION, chunk: int = 8192) -> np.ndarray:
    """``1 - f_Y(X)`` per draw: the lambda from which the true class is covered."""
    out = np.empty(count)
    for start in range(0, count, chunk):
        m = min(chunk, count - start)
        labels, scores = gen_multiclass_block(seed, run, start, m, K, signal, stream)
        out[start:start + m] = 1.0 - scores[np.arange(m), labels]
    return out


class SetSizeTable:
    """Evaluation-set estimates of ``E|C_lam(X)|`` and miscoverage for the multiclass family."""

    def __init__(self, labels: np.ndarray, scores: np.ndarray) -> None:
        self.size = labels.size
        self._all = np.sort((1.0 - scores).ravel())
        self._true = np.sort(1.0 - scores[np.arange(labels.size), labels])

    @classmethod
    def generate(cls, seed: int, count: int, K: int, signal: float) -> "SetSizeTable":
        labels, scores = gen_multiclass_block(seed, 0, 0, count, K, signal, Stream.EVALUATION)
        return cls(labels, scores)

    def mean_size(self, lam):
        lam = np.asarray(lam, dtype=float)
        return np.searchsorted(self._all, lam, side="right") / self.size

    def miscoverage(self, lam):
        lam = np.asarray(lam, dtype=float)
        return 1.0 - np.searchsorted(self._true, lam, side="right") / self.size

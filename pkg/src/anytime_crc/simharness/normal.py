"""Standard normal distribution functions (thin wrappers over scipy.special)."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..boundaries import _as_output

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def normal_cdf(x):
    """Phi(x), via the complementary error function (accurate in both tails)."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise ValueError("normal_cdf of NaN")
    return _as_output(special.ndtr(x))


def normal_sf(x):
    """1 - Phi(x) without cancellation."""
    return _as_output(special.ndtr(-np.asarray(x, dtype=float)))


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _as_output(_INV_SQRT_2PI * np.exp(-0.5 * x * x))


def normal_ppf(p):
    return _as_output(special.ndtri(np.asarray(p, dtype=float)))

"""Compiled threshold path for indicator-loss streams.

For losses of the form ``w_i * 1{lambda < s_i}`` the empirical risk after n
samples is ``(sum_{i<=n} w_i - sum_{i<=n, s_i<=lambda} w_i) / n``. With all
scores of a run known in advance, a Fenwick tree over score ranks answers
"smallest score whose prefix mass meets the target" in O(log N), so a
whole run of thresholds costs O(N log N).

The acceptance test mirrors :func:`anytime_crc.risk_core.within_target`, so on
unweighted streams the path is bit-identical to
:class:`~anytime_crc.risk_core.CalibratorState` (integer-valued float sums are
exact). Weighted sums are plain float sums here.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from ..risk_core import TIE_TOLERANCE


@numba.njit(cache=True, nogil=True)
def _threshold_path(sorted_scores, ranks, weights, targets, lambda_min, lambda_max,
                    running_min, eps):
    N = ranks.shape[0]
    tree = np.zeros(N + 1)
    out = np.empty(N)
    top = 1
    while top * 2 <= N:
        top *= 2
    # number of scores <= lambda_min
    lo, hi = 0, N
    while lo < hi:
        mid = (lo + hi) // 2
        if sorted_scores[mid] <= lambda_min:
            lo = mid + 1
        else:
            hi = mid
    n_min = lo
    total = 0.0
    prev = lambda_max
    for t in range(N):
        w = weights[t]
        total += w
        i = ranks[t] + 1
        while i <= N:
            tree[i] += w
            i += i & (-i)
        n = t + 1.0
        bound = targets[t] + eps
        # prefix mass of scores <= lambda_min
        acc = 0.0
        i = n_min
        while i > 0:
            acc += tree[i]
            i -= i & (-i)
        if (total - acc) / n <= bound:
            lam = lambda_min
        else:
            pos = 0
            acc = 0.0
            step = top
            while step > 0:
                nxt = pos + step
                if nxt <= N and not ((total - (acc + tree[nxt])) / n <= bound):
                    pos = nxt
                    acc += tree[nxt]
                step //= 2
            if pos < N and sorted_scores[pos] <= lambda_max:
                lam = sorted_scores[pos]
            else:
                lam = lambda_max
        if running_min and lam > prev:
            lam = prev
        prev = lam
        out[t] = lam
    return out


def threshold_path(scores, targets, weights=None, *, lambda_min: float = 0.0,
                   lambda_max: float = math.inf, running_min: bool = True,
                   eps: float = TIE_TOLERANCE) -> np.ndarray:
    """Thresholds ``lambda_1 .. lambda_N`` for a stream of indicator losses.

    Parameters
    ----------
    scores : array_like
        Breakpoint of each sample's loss (``s_i``), in arrival order.
    targets : array_like
        ``alpha - gamma_n`` for ``n = 1 .. N``; ``-inf`` forces ``lambda_max``.
    weights : array_like, optional
        Loss heights (importance weights times B); ones when omitted.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    if scores.shape != targets.shape or scores.ndim != 1:
        raise ValueError("scores and targets must be 1-d arrays of equal length")
    if weights is None:
        weights = np.ones_like(scores)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if weights.shape != scores.shape:
        raise ValueError("weights must match scores")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return _threshold_path(scores[order], ranks, weights, targets, float(lambda_min),
                           float(lambda_max), bool(running_min), float(eps))


@numba.njit(cache=True, nogil=True)
def _compensated_cumsum(x):
    out = np.empty(x.shape[0])
    s = 0.0
    c = 0.0
    for i in range(x.shape[0]):
        v = x[i]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[i] = s + c
    return out


def compensated_cumsum(x) -> np.ndarray:
    """Running Neumaier-compensated sums, matching the streaming accumulators of ``ShiftState``."""
    return _compensated_cumsum(np.ascontiguousarray(x, dtype=np.float64))

"""Monte Carlo experiments: run many calibration streams and score them with exact oracles.

Each run regenerates its stream from the address (seed, run), computes the
whole threshold path with the compiled kernel and evaluates the conditional
risk of every emitted threshold. Runs are independent; results are reduced
in run order, so summaries do not depend on ``jobs``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import stats

from ..boundaries import BoundaryConfig, CorrectionMethod, correction_term, m_star_iid
from ..errors import ConfigurationError
from ..lowerband import LowerBandParams, band_levels, g_fn, k_lower_shift
from ..shift import SHIFT_VARIANTS, gamma_shift, shift_condition
from .kernels import compensated_cumsum, threshold_path
from .models import (SHIFT_CAL, SHIFT_TEST, SHIFT_WEIGHT, QuadratureRisk, SetSizeTable,
                     cond_miscoverage_exact_linear, critical_lambda_linear, fit_held_out_model,
                     gen_linear_block, gen_shift_block, true_class_thresholds)
from .rng import Stream

logger = logging.getLogger(__name__)

EXPERIMENTS = ("iid_linear", "shift_cubic", "setsize_multiclass")
WEIGHTINGS = ("importance", "none")
QUANTILES = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class SimConfig:
    """Settings of one Monte Carlo experiment.

    ``method=None`` picks the experiment's natural method: the anytime
    correction, or its weighted form for ``shift_cubic`` with importance
    weights. ``weighting="none"`` runs the cubic model without shift (test
    covariates from the calibration distribution, unweighted calibrator).
    The defaults ``runs=500`` and ``n_max=20000`` are desk-scale choices.
    """

    experiment: str = "iid_linear"
    method: str | None = None
    alpha: float = 0.05
    delta: float = 0.1
    loss_bound: float = 1.0
    n_max: int = 20_000
    runs: int = 500
    seed: int = 0
    record_every: int = 100
    record_at: tuple[int, ...] = ()
    jobs: int = 1
    safe_boundary: bool = False
    shift_variant: str = "proof"
    weighting: str = "importance"
    band: bool = True
    classes: int = 100
    signal: float = 3.0
    eval_size: int = 4000

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not 0 < self.alpha < min(1.0, self.loss_bound):
            raise ConfigurationError(f"alpha must lie in (0, 1) and below B, got {self.alpha}")
        if not 0 < self.delta < 1:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.runs < 1 or self.n_max < 1 or self.record_every < 1 or self.jobs < 1:
            raise ConfigurationError("runs, n_max, record_every and jobs must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.shift_variant not in SHIFT_VARIANTS:
            raise ConfigurationError(f"shift_variant must be one of {SHIFT_VARIANTS}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigurationError(f"weighting must be one of {WEIGHTINGS}")
        if self.classes < 2 or self.eval_size < 1:
            raise ConfigurationError("classes must be >= 2 and eval_size >= 1")
        object.__setattr__(self, "record_at", tuple(int(n) for n in self.record_at))
        method = self.resolved_method
        weighted = self.experiment == "shift_cubic" and self.weighting == "importance"
        if weighted != (method is CorrectionMethod.SHIFT_ANYTIME):
            raise ConfigurationError(
                f"method {method.value!r} does not fit experiment {self.experiment!r} "
                f"with weighting {self.weighting!r}")

    @property
    def resolved_method(self) -> CorrectionMethod:
        if self.method is not None:
            return CorrectionMethod.parse(self.method)
        if self.experiment == "shift_cubic" and self.weighting == "importance":
            return CorrectionMethod.SHIFT_ANYTIME
        return CorrectionMethod.ANYTIME

    @property
    def boundary(self) -> BoundaryConfig:
        return BoundaryConfig(loss_bound=self.loss_bound, delta=self.delta)

    def to_dict(self) -> dict:
        """Config echo for summaries; ``jobs`` is left out since results do not depend on it."""
        d = asdict(self)
        del d["jobs"]
        d["method"] = self.resolved_method.value
        d["record_at"] = list(self.record_at)
        return d


@dataclass
class RunTrace:
    """Recorded path of one run.

    Arrays are aligned with ``n`` (the recorded sample sizes). ``violated``
    and ``band_exit`` are evaluated at every n up to ``n_max``, not only at
    the recorded ones. ``gamma`` is NaN where no correction is defined yet
    and ``band_low`` where the band is undefined.
    """

    run: int
    n: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    risk: np.ndarray
    band_low: np.ndarray
    violated_at: np.ndarray
    violated: bool
    first_violation: int | None
    band_exit: bool | None = None
    m_star: int | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class ExperimentResult:
    config: SimConfig
    traces: list[RunTrace]
    summary: dict


def record_points(n_max: int, every: int, extra: Iterable[int] = ()) -> np.ndarray:
    """Sample sizes kept in traces: 1, multiples of ``every``, ``n_max`` and ``extra``."""
    pts = {1, n_max}
    pts.update(range(every, n_max + 1, every))
    pts.update(int(n) for n in extra if 1 <= int(n) <= n_max)
    return np.array(sorted(pts), dtype=np.int64)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def _first_true(flags: np.ndarray) -> int | None:
    idx = np.flatnonzero(flags)
    return int(idx[0]) + 1 if idx.size else None


def _risk_unique(risk_fn: Callable, lam: np.ndarray) -> np.ndarray:
    """Evaluate an oracle once per distinct threshold."""
    uniq, inv = np.unique(lam, return_inverse=True)
    return np.asarray(risk_fn(uniq), dtype=float)[inv]


class _Plan:
    """Quantities shared by all runs of an experiment."""

    def __init__(self, cfg: SimConfig) -> None:
        self.cfg = cfg
        self.bcfg = cfg.boundary
        self.method = cfg.resolved_method
        self.ns = np.arange(1, cfg.n_max + 1, dtype=np.int64)
        self.rec = record_points(cfg.n_max, cfg.record_every, cfg.record_at)
        self.rec_idx = self.rec - 1
        self.m_star = None
        self.gamma = None
        self.targets = None
        self.band_low = None
        self.running_min = self.method.running_min
        self.lambda_max = math.inf
        if self.method is not CorrectionMethod.SHIFT_ANYTIME:
            if self.method is CorrectionMethod.ANYTIME:
                self.m_star = m_star_iid(cfg.alpha, self.bcfg)
            self.gamma = np.asarray(correction_term(self.method, self.ns, cfg.alpha, self.bcfg,
                                                    self.m_star, cfg.safe_boundary), dtype=float)
            self.targets = cfg.alpha - self.gamma
            if cfg.band and self.method is CorrectionMethod.ANYTIME:
                params = LowerBandParams(cfg.alpha, self.bcfg, safe_boundary=cfg.safe_boundary)
                self.band_low = band_levels(self.ns, params, self.m_star)
        self.model = None
        self.oracle = None
        self.lam_crit = None
        self.table = None
        if cfg.experiment == "iid_linear":
            self.lam_crit = critical_lambda_linear(cfg.alpha)
        elif cfg.experiment == "shift_cubic":
            self.model = fit_held_out_model(cfg.seed)
            test = SHIFT_TEST if cfg.weighting == "importance" else SHIFT_CAL
            self.oracle = QuadratureRisk(self.model, *test)
            self.lam_crit = self.oracle.critical_lambda(cfg.alpha)
        else:
            self.lambda_max = 1.0
            self.table = SetSizeTable.generate(cfg.seed, cfg.eval_size, cfg.classes, cfg.signal)

    # -- per-run -----------------------------------------------------------

    def run(self, run: int) -> RunTrace:
        cfg = self.cfg
        B = cfg.loss_bound
        weights = None
        gamma, targets, m_star = self.gamma, self.targets, self.m_star
        extra: dict = {}
        if cfg.experiment == "iid_linear":
            _, _, scores = gen_linear_block(cfg.seed, run, 0, cfg.n_max)
        elif cfg.experiment == "shift_cubic":
            x, y, w = gen_shift_block(cfg.seed, run, 0, cfg.n_max)
            scores = np.abs(y - self.model(x))
            if self.method is CorrectionMethod.SHIFT_ANYTIME:
                weights = w
                gamma, targets, m_star, extra = self._shift_targets(w)
        else:
            scores = true_class_thresholds(cfg.seed, run, cfg.n_max, cfg.classes, cfg.signal)
        heights = B * (np.ones_like(scores) if weights is None else weights)
        lam = threshold_path(scores, targets, heights, lambda_min=0.0, lambda_max=self.lambda_max,
                             running_min=self.running_min)
        return self._score(run, lam, gamma, m_star, extra)

    def _shift_targets(self, w: np.ndarray):
        cfg = self.cfg
        sum_w = compensated_cumsum(w)
        sum_w2 = compensated_cumsum(w * w)
        cond = np.asarray(shift_condition(self.ns, sum_w, sum_w2, cfg.alpha, self.bcfg))
        hits = np.flatnonzero(cond <= cfg.alpha)
        gamma = np.full(cfg.n_max, math.nan)
        targets = np.full(cfg.n_max, -math.inf)
        m_star = int(hits[0]) + 1 if hits.size else None
        clamps = 0
        band = None
        if m_star is not None:
            k = m_star - 1
            raw = np.asarray(gamma_shift(self.ns[k:], sum_w[k:], sum_w2[k:], self.bcfg, m_star,
                                         cfg.shift_variant, clamp=False))
            clamps = int(np.count_nonzero(raw < 0))
            gamma[k:] = np.maximum(raw, 0.0)
            targets[k:] = cfg.alpha - gamma[k:]
            if cfg.band:
                band = np.full(cfg.n_max, math.nan)
                ok = self.ns >= max(2, m_star)
                ns = self.ns[ok]
                g = np.asarray(g_fn(ns))
                params = LowerBandParams(cfg.alpha, self.bcfg, variant="shift")
                kn = k_lower_shift(ns, params, m_star, sum_w[g - 1], sum_w2[g - 1],
                                   shift_variant=cfg.shift_variant)
                band[ok] = cfg.alpha - np.asarray(kn)
        extra = {
            "band_low": band,
            "clamp_events": clamps,
            "mean_w": float(sum_w[-1] / cfg.n_max),
            "W_n": float(sum_w2[-1]),
            "max_w": float(np.max(w)),
        }
        return gamma, targets, m_star, extra

    def _score(self, run: int, lam: np.ndarray, gamma, m_star, extra: dict) -> RunTrace:
        cfg = self.cfg
        alpha = cfg.alpha
        rec = self.rec_idx
        band_low = extra.pop("band_low", self.band_low)
        need_all = band_low is not None
        if cfg.experiment == "iid_linear":
            risk_all = cond_miscoverage_exact_linear(lam)
            violated_all = risk_all > alpha
        elif cfg.experiment == "shift_cubic":
            risk_all = _risk_unique(self.oracle.risk, lam) if need_all else None
            violated_all = lam < self.lam_crit
        else:
            risk_all = self.table.miscoverage(lam)
            violated_all = risk_all > alpha
            extra["set_size"] = self.table.mean_size(lam[rec])
        risk_rec = risk_all[rec] if risk_all is not None else np.asarray(self.oracle.risk(lam[rec]), dtype=float)
        band_exit = None
        if band_low is not None:
            defined = ~np.isnan(band_low)
            band_exit = bool(np.any(defined & ((risk_all < band_low) | (risk_all > alpha))))
        first = _first_true(violated_all)
        return RunTrace(
            run=run,
            n=self.rec.copy(),
            gamma=np.asarray(gamma, dtype=float)[rec],
            lam=lam[rec],
            risk=risk_rec,
            band_low=band_low[rec] if band_low is not None else np.full(rec.size, math.nan),
            violated_at=violated_all[rec],
            violated=first is not None,
            first_violation=first,
            band_exit=band_exit,
            m_star=m_star,
            extra=extra,
        )

    # -- reduction ---------------------------------------------------------

    def summarize(self, traces: list[RunTrace]) -> dict:
        cfg = self.cfg
        runs = len(traces)
        k = sum(t.violated for t in traces)
        risk = np.stack([t.risk for t in traces])
        viol = np.stack([t.violated_at for t in traces])
        per_n = []
        for j, n in enumerate(self.rec):
            q = np.quantile(risk[:, j], QUANTILES)
            per_n.append({
                "n": int(n),
                "violations": int(viol[:, j].sum()),
                "fraction": float(viol[:, j].mean()),
                "risk_quantiles": {str(p): float(v) for p, v in zip(QUANTILES, q)},
            })
        summary = {
            "config": cfg.to_dict(),
            "n_max": cfg.n_max,
            "runs": runs,
            "violation_any_n": _proportion(k, runs),
            "per_n": per_n,
        }
        if self.method is not CorrectionMethod.SHIFT_ANYTIME:
            summary["m_star"] = self.m_star
        else:
            ms = [t.m_star for t in traces if t.m_star is not None]
            summary["m_star"] = {
                "reached": len(ms),
                "min": min(ms) if ms else None,
                "median": float(np.median(ms)) if ms else None,
                "max": max(ms) if ms else None,
            }
            summary["weights"] = {
                "mean_w": _mean([t.extra["mean_w"] for t in traces]),
                "W_n_over_n": _mean([t.extra["W_n"] / cfg.n_max for t in traces]),
                "expected_w2": SHIFT_WEIGHT.second_moment(),
                "max_w": max(t.extra["max_w"] for t in traces),
                "clamp_events": sum(t.extra["clamp_events"] for t in traces),
            }
        exits = [t.band_exit for t in traces if t.band_exit is not None]
        if exits:
            summary["band_exits"] = _proportion(sum(exits), len(exits))
        if self.model is not None:
            summary["model"] = {"intercept": self.model.intercept, "slope": self.model.slope}
            summary["critical_lambda"] = self.lam_crit
        if self.table is not None:
            sizes = np.stack([t.extra["set_size"] for t in traces])
            summary["mean_set_size"] = [float(v) for v in sizes.mean(axis=0)]
        return summary


def _mean(values) -> float:
    return float(np.mean(values))


def _proportion(k: int, n: int) -> dict:
    lo, hi = clopper_pearson(int(k), int(n))
    return {"count": int(k), "total": int(n), "fraction": k / n, "ci95": [lo, hi]}


def _map_runs(fn: Callable[[int], object], runs: int, jobs: int) -> list:
    if jobs <= 1:
        return [fn(r) for r in range(runs)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(runs)))


def run_experiment(cfg: SimConfig) -> ExperimentResult:
    """Run ``cfg.runs`` independent calibration streams and summarize them."""
    plan = _Plan(cfg)
    logger.info("running %s (%s): %d runs, n_max=%d", cfg.experiment, plan.method.value,
                cfg.runs, cfg.n_max)
    traces = _map_runs(plan.run, cfg.runs, cfg.jobs)
    return ExperimentResult(cfg, traces, plan.summarize(traces))


# ---------------------------------------------------------------------------
# set-size comparison

@dataclass
class SetSizeComparison:
    n: np.ndarray
    size_anytime: np.ndarray
    size_fixed: np.ndarray
    gamma_anytime: np.ndarray
    gamma_fixed: np.ndarray
    m_star: int

    @property
    def ratio(self) -> np.ndarray:
        return self.size_anytime / self.size_fixed

    def rows(self) -> list[dict]:
        return [
            {"n": int(n), "size_anytime": float(a), "size_fixed": float(f), "ratio": float(a / f),
             "gamma_anytime": float(ga), "gamma_fixed": float(gf)}
            for n, a, f, ga, gf in zip(self.n, self.size_anytime, self.size_fixed,
                                       self.gamma_anytime, self.gamma_fixed)
        ]


def log_grid(lo: int, hi: int, points: int) -> np.ndarray:
    """Distinct integers spread log-uniformly over ``[lo, hi]``."""
    return np.unique(np.round(np.geomspace(lo, hi, points)).astype(np.int64))


def compare_set_sizes(cfg: SimConfig, grid: np.ndarray | None = None) -> SetSizeComparison:
    """Mean evaluation-set size of the anytime and fixed-time sets, calibrated on the same streams."""
    if cfg.experiment != "setsize_multiclass":
        raise ConfigurationError("compare_set_sizes needs the setsize_multiclass experiment")
    bcfg = cfg.boundary
    m_star = m_star_iid(cfg.alpha, bcfg)
    ns = np.arange(1, cfg.n_max + 1)
    g_any = np.asarray(correction_term(CorrectionMethod.ANYTIME, ns, cfg.alpha, bcfg, m_star,
                                       cfg.safe_boundary))
    g_fix = np.asarray(correction_term(CorrectionMethod.FIXED_DUCHI, ns, cfg.alpha, bcfg))
    if grid is None:
        grid = log_grid(m_star, cfg.n_max, 30)
    grid = np.asarray(grid, dtype=np.int64)
    table = SetSizeTable.generate(cfg.seed, cfg.eval_size, cfg.classes, cfg.signal)

    def one(run: int):
        t = true_class_thresholds(cfg.seed, run, cfg.n_max, cfg.classes, cfg.signal)
        lam_a = threshold_path(t, cfg.alpha - g_any, lambda_max=1.0, running_min=True)
        lam_f = threshold_path(t, cfg.alpha - g_fix, lambda_max=1.0, running_min=False)
        return table.mean_size(lam_a[grid - 1]), table.mean_size(lam_f[grid - 1])

    out = _map_runs(one, cfg.runs, cfg.jobs)
    size_a = np.mean([a for a, _ in out], axis=0)
    size_f = np.mean([f for _, f in out], axis=0)
    return SetSizeComparison(grid, size_a, size_f, g_any[grid - 1], g_fix[grid - 1], m_star)


# ---------------------------------------------------------------------------
# e-process certificate

def psi_gamma(tau: float, c: float) -> float:
    """Sub-gamma cumulant bound ``tau^2 / (2 (1 - c tau))`` for ``0 <= tau < 1/c``."""
    if c > 0 and not tau < 1.0 / c:
        raise ConfigurationError(f"tau must be < 1/c = {1.0 / c}")
    return tau * tau / (2.0 * (1.0 - c * tau))


def eprocess_check(alpha: float = 0.05, B: float = 1.0, t: int = 200, paths: int = 100_000,
                   taus: Iterable[float] = (0.1, 0.5, 0.9), seed: int = 0,
                   chunk: int = 5_000) -> list[dict]:
    """Monte Carlo of ``E[exp(tau M_t - psi(tau) V_t)]`` for the miscoverage process.

    Losses ``B 1{|eps| > lam}`` are drawn from the linear model at the lambda
    whose risk is exactly ``alpha`` (for ``B = 1``), ``M_t = sum(alpha - loss)``
    and ``V_t = alpha (B - alpha) t``. Each entry reports the estimate, its
    standard error and the exact expectation.
    """
    taus = [float(s) / B for s in taus]
    lam_hat = critical_lambda_linear(alpha / B)
    p = float(cond_miscoverage_exact_linear(lam_hat))
    V = alpha * (B - alpha) * t
    M = np.empty(paths)
    for start in range(0, paths, chunk):
        m = min(chunk, paths - start)
        _, _, s = gen_linear_block(seed, 0, start * t, m * t, Stream.DIAGNOSTIC)
        losses = B * (s > lam_hat).reshape(m, t)
        M[start:start + m] = np.sum(alpha - losses, axis=1)
    out = []
    for tau in taus:
        psi = psi_gamma(tau, B)
        vals = np.exp(tau * M - psi * V)
        mgf = (1.0 - p) * math.exp(tau * alpha) + p * math.exp(tau * (alpha - B))
        out.append({
            "tau": tau,
            "mean": float(vals.mean()),
            "se": float(vals.std(ddof=1) / math.sqrt(paths)),
            "exact": math.exp(t * math.log(mgf) - psi * V),
        })
    return out


__all__ = [
    "EXPERIMENTS", "ExperimentResult", "RunTrace", "SetSizeComparison", "SimConfig",
    "clopper_pearson", "compare_set_sizes", "eprocess_check", "log_grid", "psi_gamma",
    "record_points", "run_experiment",
]

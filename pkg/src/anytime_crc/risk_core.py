"""Loss profiles, exact empirical risk and the streaming threshold calibrator.

A calibration sample enters as a :class:`LossProfile`: its loss as a
right-continuous, non-increasing step function of the threshold. The
aggregate of n profiles is kept as a sorted map of breakpoint -> summed jump
mass, so the empirical risk and the threshold infimum are computed exactly
at breakpoints, never on a grid.

Masses are stored as integers scaled by ``2**1074`` (every finite double is an
integer multiple of ``2**-1074``), which makes sums exact and order-free; a
risk value is the correctly rounded quotient of two integers.
"""

from __future__ import annotations

import json
import logging
import math
from bisect import bisect_left, bisect_right
from collections import Counter
from dataclasses import dataclass
from itertools import accumulate
from typing import Callable, Iterable, Iterator, Sequence, Union

from .boundaries import BoundaryConfig, CorrectionMethod, correction_term, m_star_iid
from .errors import CheckpointError, ConfigurationError, DomainError, EmptyStateError

logger = logging.getLogger(__name__)

#: Slack when comparing an empirical risk to ``alpha - gamma``. Corrections
#: such as ``ceil((1-alpha)(n+1))/n - (1-alpha)`` place the target exactly on a
#: risk level, where plain float subtraction can land one ulp short.
TIE_TOLERANCE = 1e-12

_SCALE_BITS = 1074
CHECKPOINT_VERSION = 1


def _exact(x: float) -> int:
    p, q = float(x).as_integer_ratio()
    return p << (_SCALE_BITS + 1 - q.bit_length())


def _ratio(num: int, n: int) -> float:
    return num / (n << _SCALE_BITS)


def within_target(risk: float, target: float) -> bool:
    """The acceptance test ``risk <= target`` used by every threshold search."""
    return risk <= target + TIE_TOLERANCE


def _enc_float(x: float):
    return x if math.isfinite(x) else repr(float(x))


def _dec_float(x) -> float:
    return float(x)


@dataclass(frozen=True)
class LossProfile:
    """Per-sample loss as a step function of the threshold lambda.

    ``values[j]`` is the loss on ``[breakpoints[j-1], breakpoints[j])`` (with
    open ends at the domain edges), so the loss at a breakpoint is the value of
    the interval starting there.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    lambda_max: float = math.inf
    lambda_min: float = 0.0

    def __post_init__(self) -> None:
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        if len(vals) != len(bps) + 1:
            raise DomainError("a loss profile needs exactly one more value than breakpoints")
        if any(not math.isfinite(b) for b in bps):
            raise DomainError("breakpoints must be finite")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise DomainError("breakpoints must be strictly increasing")
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise DomainError("loss values must be finite and non-negative")
        if any(v2 > v1 for v1, v2 in zip(vals, vals[1:])):
            raise DomainError("loss values must be non-increasing in lambda")
        if bps and (bps[0] < self.lambda_min or bps[-1] > self.lambda_max):
            raise DomainError("breakpoints must lie inside [lambda_min, lambda_max]")

    def __call__(self, lam: float) -> float:
        return self.values[bisect_right(self.breakpoints, lam)]

    def jumps(self) -> Iterator[tuple[float, float]]:
        for j, bp in enumerate(self.breakpoints):
            yield bp, self.values[j] - self.values[j + 1]


#: Anything :meth:`CalibratorState.update` accepts: a profile or a raw score.
Sample = Union[LossProfile, float]


def profile_from_score(score: float, B: float = 1.0) -> LossProfile:
    """Miscoverage profile of an absolute-residual style score.

    The loss is ``B`` while ``lambda < score`` and 0 from ``lambda = score`` on.
    """
    score = float(score)
    if not math.isfinite(score) or score < 0:
        raise DomainError(f"score must be finite and >= 0, got {score}")
    return LossProfile((score,), (float(B), 0.0))


def inclusion_threshold(class_score: float) -> float:
    """Smallest lambda at which a class with this score joins the set."""
    return 1.0 - class_score


def profile_fnr(true_labels: Iterable[int], class_scores: Sequence[float]) -> LossProfile:
    """False-negative-rate profile for the family ``{k : f_k >= 1 - lambda}``.

    Labels are 0-based indices into ``class_scores``.
    """
    labels = set(int(k) for k in true_labels)
    if not labels:
        raise DomainError("true_labels must be non-empty")
    K = len(class_scores)
    if any(k < 0 or k >= K for k in labels):
        raise DomainError(f"labels must be indices in [0, {K})")
    scores = [float(f) for f in class_scores]
    if any(not 0.0 <= f <= 1.0 for f in scores):
        raise DomainError("class scores must lie in [0, 1]")
    counts = Counter(inclusion_threshold(scores[k]) for k in labels)
    bps = sorted(counts)
    size = len(labels)
    values = [1.0]
    covered = 0
    for bp in bps:
        covered += counts[bp]
        values.append((size - covered) / size)
    return LossProfile(tuple(bps), tuple(values), lambda_max=1.0, lambda_min=0.0)


def prediction_set_interval(prediction: float, lam: float) -> tuple[float, float]:
    """``{y : |y - prediction| <= lam}`` as a closed interval."""
    if not lam >= 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    return prediction - lam, prediction + lam


def prediction_set_multilabel(class_scores: Sequence[float], lam: float) -> frozenset[int]:
    """``{k : f_k >= 1 - lam}`` with 0-based labels."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    return frozenset(k for k, f in enumerate(class_scores) if lam >= inclusion_threshold(float(f)))


class _JumpLedger:
    """Sorted breakpoint -> integer mass map, chunked for cheap prefix queries."""

    _LOAD = 256

    def __init__(self) -> None:
        self._keys: list[list[float]] = []
        self._mass: list[list[int]] = []
        self._tot: list[int] = []
        self._last: list[float] = []
        self.total = 0
        self.max_mass = 0

    def __len__(self) -> int:
        return sum(len(k) for k in self._keys)

    def add(self, key: float, mass: int) -> None:
        if not self._keys:
            self._keys.append([key])
            self._mass.append([mass])
            self._tot.append(mass)
            self._last.append(key)
            self.total += mass
            self.max_mass = max(self.max_mass, mass)
            return
        i = bisect_left(self._last, key)
        if i == len(self._last):
            i -= 1
        keys, masses = self._keys[i], self._mass[i]
        j = bisect_left(keys, key)
        if j < len(keys) and keys[j] == key:
            masses[j] += mass
            merged = masses[j]
        else:
            keys.insert(j, key)
            masses.insert(j, mass)
            merged = mass
            self._last[i] = keys[-1]
        self._tot[i] += mass
        self.total += mass
        self.max_mass = max(self.max_mass, merged)
        if len(keys) > 2 * self._LOAD:
            half = len(keys) // 2
            self._keys[i:i + 1] = [keys[:half], keys[half:]]
            self._mass[i:i + 1] = [masses[:half], masses[half:]]
            self._tot[i:i + 1] = [sum(masses[:half]), sum(masses[half:])]
            self._last[i:i + 1] = [keys[half - 1], keys[-1]]

    def mass_upto(self, key: float) -> int:
        """Total mass at breakpoints ``<= key``."""
        i = bisect_right(self._last, key)
        acc = sum(self._tot[:i])
        if i < len(self._keys):
            j = bisect_right(self._keys[i], key)
            acc += sum(self._mass[i][:j])
        return acc

    def first_reaching(self, pred: Callable[[int], bool]) -> float | None:
        """Smallest breakpoint whose cumulative mass satisfies the monotone ``pred``."""
        cums = list(accumulate(self._tot))
        i = bisect_left(cums, True, key=pred)
        if i == len(cums):
            return None
        start = cums[i - 1] if i else 0
        inner = list(accumulate(self._mass[i], initial=start))[1:]
        j = bisect_left(inner, True, key=pred)
        return self._keys[i][j]

    def items(self) -> Iterator[tuple[float, int]]:
        for keys, masses in zip(self._keys, self._mass):
            yield from zip(keys, masses)


class RiskAggregate:
    """Exact running sum of (optionally weighted) loss profiles."""

    def __init__(self, lambda_min: float = 0.0, lambda_max: float = math.inf) -> None:
        if not lambda_min < lambda_max:
            raise DomainError("lambda_min must be < lambda_max")
        self.lambda_min = float(lambda_min)
        self.lambda_max = float(lambda_max)
        self.n = 0
        self._base = 0
        self._ledger = _JumpLedger()

    def push(self, profile: LossProfile, weight: float = 1.0) -> None:
        if profile.lambda_max != self.lambda_max or profile.lambda_min != self.lambda_min:
            raise DomainError(
                f"profile domain [{profile.lambda_min}, {profile.lambda_max}] does not match "
                f"the calibrator domain [{self.lambda_min}, {self.lambda_max}]")
        if weight == 1.0:
            scaled = [_exact(v) for v in profile.values]
        else:
            scaled = [_exact(weight * v) for v in profile.values]
        self._base += scaled[0]
        for j, bp in enumerate(profile.breakpoints):
            mass = scaled[j] - scaled[j + 1]
            if mass:
                self._ledger.add(bp, mass)
        self.n += 1

    def _require(self) -> None:
        if self.n == 0:
            raise EmptyStateError("no calibration samples yet")

    def risk(self, lam: float) -> float:
        self._require()
        return _ratio(self._base - self._ledger.mass_upto(lam), self.n)

    def threshold(self, target: float) -> float:
        """Smallest lambda in the domain whose risk is within ``target``."""
        self._require()
        base, denom = self._base, self.n << _SCALE_BITS

        def ok(acc: int) -> bool:
            return within_target((base - acc) / denom, target)

        if ok(self._ledger.mass_upto(self.lambda_min)):
            return self.lambda_min
        key = self._ledger.first_reaching(ok)
        if key is None or key > self.lambda_max:
            return self.lambda_max
        return key

    def max_jump(self) -> float:
        self._require()
        return _ratio(self._ledger.max_mass, self.n)

    def breakpoints(self) -> list[float]:
        return [k for k, _ in self._ledger.items()]

    def to_dict(self) -> dict:
        items = list(self._ledger.items())
        return {
            "n": self.n,
            "base": self._base,
            "breakpoints": [k for k, _ in items],
            "masses": [m for _, m in items],
            "mass_scale_bits": _SCALE_BITS,
            "lambda_min": _enc_float(self.lambda_min),
            "lambda_max": _enc_float(self.lambda_max),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RiskAggregate":
        if d.get("mass_scale_bits") != _SCALE_BITS:
            raise CheckpointError("unsupported mass scale in checkpoint")
        agg = cls(_dec_float(d["lambda_min"]), _dec_float(d["lambda_max"]))
        agg.n = int(d["n"])
        agg._base = int(d["base"])
        for key, mass in zip(d["breakpoints"], d["masses"]):
            agg._ledger.add(float(key), int(mass))
        return agg


def _as_profile(sample: Sample) -> LossProfile:
    if isinstance(sample, LossProfile):
        return sample
    return profile_from_score(sample)


class CalibratorState:
    """Streaming threshold calibrator for i.i.d. calibration data.

    Each :meth:`update` adds one sample, recomputes the correction for the new
    sample size and returns ``lambda_n = inf{lambda : R_n(lambda) <= alpha -
    gamma_n}`` (``lambda_max`` when no lambda qualifies), passed through a
    running minimum for the anytime method.

    Parameters
    ----------
    alpha : float
        Tolerated risk level.
    cfg : BoundaryConfig, optional
        Loss bound and failure probability; ``cfg.m`` is not used (the anytime
        correction stitches from m*).
    method : CorrectionMethod or str
        Which correction term to apply.
    running_min : bool, optional
        Override the method's default running-minimum behaviour.
    safe_boundary : bool
        Evaluate the anytime radius at ``max(v, m*)``.
    lambda_min, lambda_max : float
        Domain of the set family; ``[0, inf)`` suits score sets, ``[0, 1]``
        the multilabel family.
    """

    def __init__(self, alpha: float, cfg: BoundaryConfig | None = None,
                 method: CorrectionMethod | str = CorrectionMethod.ANYTIME, *,
                 running_min: bool | None = None, safe_boundary: bool = False,
                 lambda_min: float = 0.0, lambda_max: float = math.inf,
                 m_star: int | None = None) -> None:
        self.cfg = cfg if cfg is not None else BoundaryConfig()
        self.method = CorrectionMethod.parse(method)
        if self.method is CorrectionMethod.SHIFT_ANYTIME:
            raise ConfigurationError("use anytime_crc.shift.ShiftState for weighted calibration")
        self.alpha = float(alpha)
        if not 0 < self.alpha < self.cfg.B:
            raise ConfigurationError(f"alpha must lie in (0, B={self.cfg.B}), got {alpha}")
        self.running_min = self.method.running_min if running_min is None else bool(running_min)
        self.safe_boundary = bool(safe_boundary)
        if self.method is CorrectionMethod.ANYTIME and m_star is None:
            m_star = m_star_iid(self.alpha, self.cfg)
        self.m_star = m_star
        self._agg = RiskAggregate(lambda_min, lambda_max)
        self.lambda_prev = self._agg.lambda_max
        self.last_gamma: float | None = None
        self._warned = False

    @property
    def n(self) -> int:
        return self._agg.n

    @property
    def lambda_min(self) -> float:
        return self._agg.lambda_min

    @property
    def lambda_max(self) -> float:
        return self._agg.lambda_max

    def correction(self, n: int | None = None) -> float:
        n = self.n if n is None else n
        return correction_term(self.method, n, self.alpha, self.cfg, self.m_star, self.safe_boundary)

    def empirical_risk(self, lam: float) -> float:
        """``R_n(lam)``, exact to the last bit."""
        return self._agg.risk(lam)

    def threshold(self, gamma: float) -> float:
        """Raw (no running minimum) threshold for a given correction."""
        return self._agg.threshold(self.alpha - gamma)

    def max_jump(self) -> float:
        """Largest jump of the empirical risk over all breakpoints."""
        return self._agg.max_jump()

    def breakpoints(self) -> list[float]:
        return self._agg.breakpoints()

    def update(self, sample: Sample) -> float:
        self._agg.push(_as_profile(sample))
        gamma = self.correction()
        lam = self.threshold(gamma)
        if self.running_min:
            lam = min(lam, self.lambda_prev)
        self.last_gamma = gamma
        self.lambda_prev = lam
        if lam == math.inf and not self._warned:
            logger.warning("threshold is lambda_max = inf at n=%d: prediction sets cover everything", self.n)
            self._warned = True
        return lam

    def to_dict(self) -> dict:
        d = {
            "kind": "iid",
            "version": CHECKPOINT_VERSION,
            "alpha": self.alpha,
            "delta": self.cfg.delta,
            "B": self.cfg.B,
            "method": self.method.value,
            "m_star": self.m_star,
            "running_min": self.running_min,
            "safe_boundary": self.safe_boundary,
            "lambda_prev": _enc_float(self.lambda_prev),
            "last_gamma": self.last_gamma,
        }
        d.update(self._agg.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratorState":
        if d.get("version") != CHECKPOINT_VERSION or d.get("kind") != "iid":
            raise CheckpointError(f"unsupported checkpoint (kind={d.get('kind')!r}, version={d.get('version')!r})")
        cfg = BoundaryConfig(loss_bound=d["B"], delta=d["delta"])
        state = cls(d["alpha"], cfg, d["method"], running_min=d["running_min"],
                    safe_boundary=d["safe_boundary"], m_star=d["m_star"],
                    lambda_min=_dec_float(d["lambda_min"]), lambda_max=_dec_float(d["lambda_max"]))
        state._agg = RiskAggregate.from_dict(d)
        state.lambda_prev = _dec_float(d["lambda_prev"])
        state.last_gamma = d["last_gamma"]
        return state

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "CalibratorState":
        return cls.from_dict(json.loads(text))


def empirical_risk(state: CalibratorState, lam: float) -> float:
    return state.empirical_risk(lam)


def threshold(state: CalibratorState, gamma: float) -> float:
    return state.threshold(gamma)


def max_jump(state: CalibratorState) -> float:
    return state.max_jump()

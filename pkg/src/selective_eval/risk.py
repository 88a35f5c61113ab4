"""Selective risk control.

Exact binomial upper confidence bounds on the disagreement rate among
confidently judged instances, fixed-sequence testing over a descending grid
of confidence thresholds, and sequential calibration of a judge cascade.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import NamedTuple, Optional, Protocol, Sequence, Union

import numpy as np
from scipy.special import betainc, betaincinv, gammaln

from .core import Dataset, Label, PreferenceInstance
from .errors import DomainError, SchemaError

logger = logging.getLogger(__name__)

# Direct summation of the binomial pmf up to this many trials; beyond it the
# regularised incomplete beta function is used.
SUMMATION_LIMIT = 1000
BOUND_TOL = 1e-10
_BRACKET = 1e-8
# The returned bound must clear delta by more than the rounding error of a
# pmf sum, or an independently summed CDF can land just below delta.
_CDF_SLACK = 1e-14


class Abstain(Enum):
    ALWAYS = "always_abstain"

    def __repr__(self) -> str:
        return "ALWAYS_ABSTAIN"


ALWAYS_ABSTAIN = Abstain.ALWAYS
Threshold = Union[float, Abstain]


def _check_level(name: str, value: float) -> None:
    if not (0.0 < value < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {value!r}")


# --------------------------------------------------------------------------
# binomial tail


@lru_cache(maxsize=1024)
def _binomial_coefficients(n: int) -> np.ndarray:
    # exact integers rounded once to float; C(1000, 500) ~ 2.7e299 still fits
    return np.array([float(math.comb(n, i)) for i in range(n + 1)])


def _pmf_terms(k: int, n: int, p: float) -> np.ndarray:
    """P(Bin(n, p) = i) for i = 0..k, each to a few ulp.

    Log-space terms would carry an absolute error proportional to the size of
    the log-coefficients (about 1e-14 relative already at n = 45), so the
    product form is used and log space only where a power underflows.
    """
    i = np.arange(k + 1)
    with np.errstate(under="ignore"):
        pw = np.power(p, i.astype(float)) * np.power(1.0 - p, (n - i).astype(float))
    terms = _binomial_coefficients(n)[: k + 1] * pw
    tiny = pw < 1e-290
    if tiny.any():
        j = i[tiny].astype(float)
        log_coef = gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
        terms[tiny] = np.exp(log_coef + j * math.log(p) + (n - j) * math.log1p(-p))
    return terms


def binomial_cdf(k: int, n: int, p: float) -> float:
    """P(Bin(n, p) <= k)."""
    if k < 0:
        return 0.0
    if k >= n:
        return 1.0
    if p <= 0.0:
        return 1.0
    if p >= 1.0:
        return 0.0
    if n <= SUMMATION_LIMIT:
        return min(1.0, math.fsum(_pmf_terms(k, n, p)))
    return float(betainc(n - k, k + 1, 1.0 - p))


def binomial_cdf_all(n: int, p: float) -> np.ndarray:
    """Vector of P(Bin(n, p) <= k) for k = 0..n."""
    if n == 0:
        return np.ones(1)
    if p <= 0.0:
        return np.ones(n + 1)
    if p >= 1.0:
        out = np.zeros(n + 1)
        out[-1] = 1.0
        return out
    if n <= SUMMATION_LIMIT:
        cdf = np.cumsum(_pmf_terms(n, n, p))
    else:
        k = np.arange(n, dtype=float)
        cdf = np.append(betainc(n - k, k + 1, 1.0 - p), 1.0)
    cdf = np.minimum(cdf, 1.0)
    cdf[-1] = 1.0
    return cdf


@lru_cache(maxsize=200_000)
def binomial_upper_bound(k: int, n: int, delta: float) -> float:
    """Largest R with P(Bin(n, R) <= k) >= delta, to within ``BOUND_TOL``.

    Bisection keeps the invariant CDF(lo) >= delta > CDF(hi) and returns ``lo``,
    so the returned value never overshoots the supremum.
    """
    if n < 1:
        raise DomainError("binomial_upper_bound needs n >= 1; empty coverage must be handled by the caller")
    if not (0 <= k <= n):
        raise DomainError(f"need 0 <= k <= n, got k={k}, n={n}")
    _check_level("delta", delta)
    if k == n:
        return 1.0
    lo, hi = 0.0, 1.0
    # The Beta quantile is the bound in closed form; use it only to narrow the
    # bracket, and keep the bracket only if the exact CDF confirms it.
    guess = float(betaincinv(k + 1, n - k, 1.0 - delta))
    a, b = max(0.0, guess - _BRACKET), min(1.0, guess + _BRACKET)
    target = delta + _CDF_SLACK
    if binomial_cdf(k, n, a) >= target > binomial_cdf(k, n, b):
        lo, hi = a, b
    while hi - lo > BOUND_TOL:
        mid = 0.5 * (lo + hi)
        if binomial_cdf(k, n, mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo


@lru_cache(maxsize=256)
def _passing_table(alpha: float, level: float, n_max: int) -> np.ndarray:
    table = np.full(n_max + 1, -1, dtype=np.int64)
    for n in range(1, n_max + 1):
        cdf = binomial_cdf_all(n, alpha)
        table[n] = np.searchsorted(cdf, level, side="right") - 1
    return table


def max_passing_errors(n_max: int, alpha: float, level: float) -> np.ndarray:
    """``t[n]`` = largest error count k with upper bound <= alpha at n trials (-1 if none).

    Uses bound(k, n) <= alpha  <=>  P(Bin(n, alpha) <= k) <= level, which holds
    because the binomial CDF is continuous and decreasing in its success rate.
    """
    size = 64
    while size < n_max:
        size *= 2
    return _passing_table(float(alpha), float(level), size)[: n_max + 1]


def minimum_testable_count(alpha: float, level: float) -> int:
    """Smallest coverage count at which zero errors can pass the bound test."""
    _check_level("alpha", alpha)
    _check_level("delta", level)
    n = max(1, math.ceil(math.log(level) / math.log1p(-alpha)))
    while n > 1 and binomial_cdf(0, n - 1, alpha) <= level:
        n -= 1
    while binomial_cdf(0, n, alpha) > level:
        n += 1
    return n


# --------------------------------------------------------------------------
# records and risk points


@dataclass(frozen=True)
class EvalRecord:
    """One judge output paired with the human majority. ``human=None`` always counts as an error."""

    instance_id: str
    verdict: Label
    confidence: float
    human: Optional[Label]

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise DomainError(f"confidence {self.confidence!r} outside [0, 1] for {self.instance_id!r}")

    @property
    def error(self) -> bool:
        return self.verdict != self.human


@dataclass(frozen=True)
class RiskPoint:
    lam: float
    n: int
    k: int
    risk_hat: float
    risk_bound: float

    def to_json(self) -> dict:
        return {"lambda": self.lam, "n": self.n, "k": self.k, "risk_hat": self.risk_hat, "risk_bound": self.risk_bound}

    @classmethod
    def from_json(cls, obj: dict) -> "RiskPoint":
        return cls(float(obj["lambda"]), int(obj["n"]), int(obj["k"]), float(obj["risk_hat"]), float(obj["risk_bound"]))


def _risk_point(lam: float, n: int, k: int, delta: float) -> RiskPoint:
    if n == 0:
        return RiskPoint(lam, 0, 0, 0.0, 1.0)
    return RiskPoint(lam, n, k, k / n, binomial_upper_bound(k, n, delta))


def empirical_risk(records: Sequence[EvalRecord], lam: float, delta: float) -> RiskPoint:
    if not records:
        raise DomainError("empirical_risk needs at least one record")
    n = k = 0
    for r in records:
        if r.confidence >= lam:
            n += 1
            k += r.error
    return _risk_point(lam, n, k, delta)


# --------------------------------------------------------------------------
# fixed-sequence calibration


class Calibration(NamedTuple):
    threshold: Threshold
    trace: list


def fixed_sequence_threshold(
    confidence: np.ndarray,
    error: np.ndarray,
    alpha: float,
    delta: float,
    *,
    min_count: Optional[int] = None,
    with_trace: bool = True,
) -> Calibration:
    """Fixed-sequence test over the descending distinct confidences.

    Grid points covering fewer than ``min_count`` records are skipped before
    testing starts: no error pattern could pass there, and the skip depends on
    the confidences only, never on the labels. The default ``min_count`` is
    the smallest count at which zero errors pass. After that the walk stops at
    the first point whose upper bound exceeds ``alpha``.
    """
    _check_level("alpha", alpha)
    _check_level("delta", delta)
    conf = np.asarray(confidence, dtype=float)
    err = np.asarray(error, dtype=bool)
    if conf.size == 0:
        raise DomainError("calibration needs at least one record")
    if min_count is None:
        min_count = minimum_testable_count(alpha, delta)

    order = np.argsort(-conf, kind="stable")
    sorted_conf = conf[order]
    last = np.append(np.flatnonzero(np.diff(sorted_conf)), sorted_conf.size - 1)
    grid = sorted_conf[last]
    n = last + 1
    k = np.cumsum(err[order])[last]

    testable = n >= max(min_count, 1)
    grid, n, k = grid[testable], n[testable], k[testable]
    if grid.size == 0:
        return Calibration(ALWAYS_ABSTAIN, [])

    passing = k <= max_passing_errors(int(n[-1]), alpha, delta)[n]
    stop = grid.size if passing.all() else int(np.argmin(passing))
    threshold: Threshold = ALWAYS_ABSTAIN if stop == 0 else float(grid[stop - 1])
    trace = []
    if with_trace:
        visited = min(stop + 1, grid.size)
        trace = [_risk_point(float(grid[i]), int(n[i]), int(k[i]), delta) for i in range(visited)]
    return Calibration(threshold, trace)


def calibrate_single(
    records: Sequence[EvalRecord], alpha: float, delta: float, *, min_count: Optional[int] = None
) -> Calibration:
    if not records:
        raise DomainError("calibrate_single needs at least one record")
    conf = np.fromiter((r.confidence for r in records), dtype=float, count=len(records))
    err = np.fromiter((r.error for r in records), dtype=bool, count=len(records))
    return fixed_sequence_threshold(conf, err, alpha, delta, min_count=min_count)


def point_estimate_threshold(confidence: np.ndarray, error: np.ndarray, alpha: float) -> Threshold:
    """Smallest grid value whose plain empirical risk is at most ``alpha`` (no confidence bound)."""
    conf = np.asarray(confidence, dtype=float)
    err = np.asarray(error, dtype=bool)
    if conf.size == 0:
        return ALWAYS_ABSTAIN
    order = np.argsort(-conf, kind="stable")
    sorted_conf = conf[order]
    last = np.append(np.flatnonzero(np.diff(sorted_conf)), sorted_conf.size - 1)
    k = np.cumsum(err[order])[last]
    ok = np.flatnonzero(k / (last + 1) <= alpha)
    return ALWAYS_ABSTAIN if ok.size == 0 else float(sorted_conf[last[ok[-1]]])


# --------------------------------------------------------------------------
# cascades


@dataclass(frozen=True)
class JudgeThreshold:
    judge_id: str
    threshold: Threshold
    trace: tuple = ()
    warning: Optional[str] = None

    @property
    def always_abstain(self) -> bool:
        return self.threshold is ALWAYS_ABSTAIN

    def accepts(self, confidence: float) -> bool:
        return not self.always_abstain and confidence >= self.threshold


@dataclass(frozen=True)
class ThresholdSet:
    alpha: float
    delta: float
    per_judge: tuple = field(default_factory=tuple)

    @property
    def judge_ids(self) -> list[str]:
        return [j.judge_id for j in self.per_judge]

    def to_json(self) -> dict:
        judges = []
        for j in self.per_judge:
            entry = {
                "id": j.judge_id,
                "threshold": None if j.always_abstain else j.threshold,
                "always_abstain": j.always_abstain,
                "trace": [p.to_json() for p in j.trace],
            }
            if j.warning:
                entry["warning"] = j.warning
            judges.append(entry)
        return {"alpha": self.alpha, "delta": self.delta, "judges": judges}

    @classmethod
    def from_json(cls, obj) -> "ThresholdSet":
        try:
            alpha, delta = float(obj["alpha"]), float(obj["delta"])
            per_judge = []
            for i, entry in enumerate(obj["judges"]):
                abstain = entry["always_abstain"]
                thr = entry["threshold"]
                if not isinstance(abstain, bool) or (thr is None) != abstain:
                    raise SchemaError(f"judges[{i}]: threshold must be null exactly when always_abstain is true")
                if thr is not None and not (0.0 <= float(thr) <= 1.0):
                    raise SchemaError(f"judges[{i}]: threshold {thr!r} outside [0, 1]")
                trace = tuple(RiskPoint.from_json(p) for p in entry["trace"])
                per_judge.append(
                    JudgeThreshold(str(entry["id"]), ALWAYS_ABSTAIN if abstain else float(thr), trace, entry.get("warning"))
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed threshold set: {exc!r}") from None
        ts = cls(alpha, delta, tuple(per_judge))
        ts.validate()
        return ts

    def validate(self) -> None:
        _check_level("alpha", self.alpha)
        _check_level("delta", self.delta)
        for j in self.per_judge:
            if j.always_abstain:
                continue
            for p in j.trace:
                if p.lam >= j.threshold and p.risk_bound > self.alpha:
                    raise SchemaError(f"judge {j.judge_id!r}: trace point at {p.lam} violates alpha above the threshold")


class JudgementProvider(Protocol):
    judge_id: str

    def judgements(self, instances: Sequence[PreferenceInstance]) -> list: ...


def calibration_truth(cal: Dataset, tie_policy: str = "exclude") -> list[tuple[PreferenceInstance, Optional[Label]]]:
    """Pair each usable calibration instance with its human majority label.

    Under ``exclude`` instances without a winner are dropped; under
    ``disagree`` they are kept with ``None`` so that any verdict counts as an
    error. Instances with no annotations are always dropped.
    """
    if tie_policy not in ("exclude", "disagree"):
        raise DomainError(f"unknown tie policy {tie_policy!r}")
    out = []
    for inst, m in zip(cal.instances, cal.majorities().values()):
        if m is None:
            continue
        if m.has_winner:
            out.append((inst, m.label))
        elif tie_policy == "disagree":
            out.append((inst, None))
    return out


def calibrate_cascade(
    judges: Sequence[JudgementProvider],
    cal: Dataset,
    alpha: float,
    delta: float,
    *,
    tie_policy: str = "exclude",
    min_count: Optional[int] = None,
) -> ThresholdSet:
    """Calibrate each judge, in order, on the instances every earlier judge abstained on.

    Each stage is tested at level ``delta / len(judges)``, so the union bound
    over stages gives overall level ``delta``. Later judges are only queried
    on the shrinking working set.
    """
    if not judges:
        raise DomainError("calibrate_cascade needs at least one judge")
    _check_level("alpha", alpha)
    _check_level("delta", delta)
    working = calibration_truth(cal, tie_policy)
    if not working:
        raise DomainError("calibration set is empty after tie exclusion")
    level = delta / len(judges)
    per_judge = []
    for judge in judges:
        if not working:
            msg = "working set empty: every calibration instance was accepted by an earlier judge"
            logger.warning("judge %s: %s", judge.judge_id, msg)
            per_judge.append(JudgeThreshold(judge.judge_id, ALWAYS_ABSTAIN, (), msg))
            continue
        outs = judge.judgements([inst for inst, _ in working])
        records = [EvalRecord(inst.id, j.verdict, j.confidence, human) for (inst, human), j in zip(working, outs)]
        cal_i = calibrate_single(records, alpha, level, min_count=min_count)
        per_judge.append(JudgeThreshold(judge.judge_id, cal_i.threshold, tuple(cal_i.trace)))
        if cal_i.threshold is not ALWAYS_ABSTAIN:
            working = [w for w, r in zip(working, records) if r.confidence < cal_i.threshold]
    return ThresholdSet(alpha, delta, tuple(per_judge))


def calibrate_cascade_arrays(
    confidence: np.ndarray,
    error: np.ndarray,
    alpha: float,
    delta: float,
    *,
    min_count: Optional[int] = None,
) -> list[Threshold]:
    """Array form of :func:`calibrate_cascade` for precomputed judge outputs.

    ``confidence`` and ``error`` have shape (judges, instances).
    """
    m = confidence.shape[0]
    level = delta / m
    active = np.ones(confidence.shape[1], dtype=bool)
    out: list[Threshold] = []
    for i in range(m):
        if not active.any():
            out.append(ALWAYS_ABSTAIN)
            continue
        thr = fixed_sequence_threshold(
            confidence[i, active], error[i, active], alpha, level, min_count=min_count, with_trace=False
        ).threshold
        out.append(thr)
        if thr is not ALWAYS_ABSTAIN:
            active &= confidence[i] < thr
    return out

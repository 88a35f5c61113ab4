"""Calibration and selective-evaluation metrics.

``None`` is the undefined-metric marker throughout: a metric that has no
meaningful value (AUROC with one class, agreement with nothing evaluated)
is reported as ``None``, never as 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .cascade import CascadeOutcome, Decision
from .core import Label, MajorityLabel
from .errors import DomainError

DEFAULT_BINS = 10
# Agreement is a ratio of counts while 1 - alpha is computed in floating
# point; allow for the rounding of the latter.
_AGREEMENT_EPS = 1e-12


def _split(samples) -> tuple[np.ndarray, np.ndarray]:
    samples = list(samples)
    if not samples:
        raise DomainError("metric needs at least one sample")
    conf = np.array([float(c) for c, _ in samples])
    correct = np.array([bool(y) for _, y in samples])
    return conf, correct


def reliability_bins(samples, bins: int = DEFAULT_BINS) -> list[tuple[float, float, int]]:
    """(mean confidence, accuracy, count) for each nonempty equal-width bin.

    Bins are [i/b, (i+1)/b), the last one closed on the right.
    """
    if bins < 1:
        raise DomainError("need at least one bin")
    conf, correct = _split(samples)
    idx = np.minimum(np.floor(conf * bins).astype(int), bins - 1)
    out = []
    for b in range(bins):
        m = idx == b
        n_b = int(m.sum())
        if n_b:
            out.append((math.fsum(conf[m]) / n_b, math.fsum(correct[m]) / n_b, n_b))
    return out


def ece(samples, bins: int = DEFAULT_BINS) -> float:
    table = reliability_bins(samples, bins)
    n = sum(c for _, _, c in table)
    return math.fsum(c / n * abs(acc - mc) for mc, acc, c in table)


def auroc(samples) -> Optional[float]:
    """Probability that a correct sample has higher confidence than an incorrect one (ties count 1/2)."""
    conf, correct = _split(samples)
    n_pos = int(correct.sum())
    n_neg = correct.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(conf)
    u = math.fsum(ranks[correct]) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auprc(samples) -> Optional[float]:
    """Average precision with correct samples as positives; tied confidences form one block."""
    conf, correct = _split(samples)
    n_pos = int(correct.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-conf, kind="stable")
    conf, correct = conf[order], correct[order]
    ends = np.append(np.flatnonzero(np.diff(conf)), conf.size - 1)
    tp = np.cumsum(correct)[ends]
    seen = ends + 1
    gained = np.diff(np.concatenate(([0], tp)))
    return math.fsum(gained[i] / n_pos * tp[i] / seen[i] for i in range(ends.size))


@dataclass(frozen=True)
class CalibrationReport:
    accuracy: float
    ece: float
    auroc: Optional[float]
    auprc: Optional[float]
    bins: tuple

    def to_json(self) -> dict:
        d = asdict(self)
        d["bins"] = [{"confidence": c, "accuracy": a, "count": n} for c, a, n in self.bins]
        return d


def calibration_report(samples, bins: int = DEFAULT_BINS) -> CalibrationReport:
    samples = list(samples)
    _, correct = _split(samples)
    return CalibrationReport(
        float(correct.mean()), ece(samples, bins), auroc(samples), auprc(samples), tuple(reliability_bins(samples, bins))
    )


@dataclass(frozen=True)
class TrialReport:
    selective_agreement: Optional[float]
    coverage: float
    composition: dict = field(default_factory=dict)
    relative_cost: Optional[float] = 0.0
    evaluated: int = 0
    abstained: int = 0
    failed: int = 0

    def to_json(self) -> dict:
        return {
            "selective_agreement": self.selective_agreement,
            "coverage": self.coverage,
            "composition": dict(self.composition),
            "relative_cost": self.relative_cost,
            "evaluated": self.evaluated,
            "abstained": self.abstained,
            "failed": self.failed,
        }


def summarize(
    judge_ids: Sequence[str],
    accepted_by: Sequence[Optional[str]],
    correct: Sequence[Optional[bool]],
    costs: Sequence[float],
    max_cost: float,
    failed: int = 0,
) -> TrialReport:
    """Shared arithmetic behind :func:`trial_report`.

    ``accepted_by[i]`` is the accepting judge id (None when abstained) and
    ``correct[i]`` whether its verdict matched the human majority (None when
    unknown). Failed instances only contribute their cost.
    """
    evaluated = sum(a is not None for a in accepted_by)
    abstained = len(accepted_by) - evaluated
    scored = [c for a, c in zip(accepted_by, correct) if a is not None and c is not None]
    agreement = None if not scored else sum(scored) / len(scored)
    decided = evaluated + abstained
    coverage = evaluated / decided if decided else 0.0
    composition = {jid: 0.0 for jid in judge_ids}
    if evaluated:
        for a in accepted_by:
            if a is not None:
                composition[a] += 1
        composition = {jid: n / evaluated for jid, n in composition.items()}
    total = len(accepted_by) + failed
    if total == 0:
        rel = 0.0
    elif max_cost > 0:
        rel = math.fsum(costs) / (total * max_cost)
    else:
        rel = None
    return TrialReport(agreement, coverage, composition, rel, evaluated, abstained, failed)


def _truth_label(t) -> Optional[Label]:
    if isinstance(t, MajorityLabel):
        return t.label
    return t


def trial_report(outcomes: Sequence[CascadeOutcome], truth: Mapping[str, object], specs) -> TrialReport:
    """Aggregate one run's outcomes.

    ``truth`` maps instance id to a :class:`MajorityLabel` (or a bare label).
    Evaluated instances without a winning majority are left out of the
    agreement, like ties are everywhere else.
    """
    accepted, correct, costs = [], [], []
    failed = 0
    failed_cost = []
    for o in outcomes:
        if o.decision is Decision.FAILED:
            failed += 1
            failed_cost.append(o.cost)
            continue
        costs.append(o.cost)
        if o.decision is Decision.EVALUATED:
            accepted.append(o.judge_id)
            lab = _truth_label(truth.get(o.instance_id))
            correct.append(None if lab is None else o.verdict == lab)
        else:
            accepted.append(None)
            correct.append(None)
    max_cost = max((s.cost_weight for s in specs), default=0.0)
    return summarize([s.id for s in specs], accepted, correct, costs + failed_cost, max_cost, failed)


def meets_target(agreement: Optional[float], alpha: float) -> bool:
    return agreement is not None and agreement >= 1.0 - alpha - _AGREEMENT_EPS


def guarantee_success_rate(per_run_agreement: Iterable[Optional[float]], alpha: float) -> float:
    """Fraction of runs whose agreement reaches 1 - alpha; undefined runs count as failures."""
    runs = list(per_run_agreement)
    if not runs:
        raise DomainError("guarantee_success_rate needs at least one run")
    return sum(meets_target(a, alpha) for a in runs) / len(runs)

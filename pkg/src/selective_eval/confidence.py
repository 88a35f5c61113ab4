"""From judge label distributions to (verdict, confidence) pairs.

Simulated Annotators averages N few-shot-conditioned label distributions,
one per simulated annotator, and reports the top label with its mean
probability. The shot plan decides which examples (and whose labels) each
simulated annotator sees.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import Label, PreferenceInstance, majority_label, ordered_labels
from .errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

ROW_TOL = 1e-6
DEFAULT_SHOTS = 5
DEFAULT_ANNOTATORS = 5


@dataclass(frozen=True)
class AnnotatorSimulation:
    """Per-annotator label distributions for one instance from one judge.

    ``rows[j, c]`` is annotator j's probability for ``labels[c]``.
    """

    instance_id: str
    judge_id: str
    labels: tuple
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] != len(self.labels):
            raise DomainError(f"{self.instance_id}: rows must be an N x {len(self.labels)} matrix with N >= 1")
        if list(self.labels) != list(ordered_labels(self.labels)) or len(set(self.labels)) != len(self.labels):
            raise DomainError(f"{self.instance_id}: label columns must be distinct and in canonical order")
        if not np.all(np.isfinite(rows)) or (rows < 0).any():
            raise DomainError(f"{self.instance_id}: probabilities must be finite and nonnegative")
        if np.abs(rows.sum(axis=1) - 1.0).max() > ROW_TOL:
            raise DomainError(f"{self.instance_id}: every row must sum to 1")
        object.__setattr__(self, "rows", rows)

    @property
    def n_annotators(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class Judgement:
    verdict: Label
    confidence: float


def _judgement_from_mean(labels: Sequence[Label], mean: np.ndarray) -> Judgement:
    # np.argmax returns the first maximum, and columns are in canonical order.
    best = int(np.argmax(mean))
    return Judgement(labels[best], float(min(1.0, mean[best])))


def aggregate_simulated_annotators(sim: AnnotatorSimulation) -> Judgement:
    # fsum is correctly rounded, so the mean does not depend on row order
    n = sim.n_annotators
    mean = np.array([math.fsum(col) / n for col in sim.rows.T])
    return _judgement_from_mean(sim.labels, mean)


def predictive_probability(row: Sequence[float], labels: Sequence[Label] = (Label.FIRST, Label.SECOND)) -> Judgement:
    p = np.asarray(row, dtype=float)
    if p.shape != (len(labels),) or (p < 0).any() or abs(p.sum() - 1.0) > ROW_TOL:
        raise DomainError("predictive_probability needs one distribution over the labels")
    return _judgement_from_mean(labels, p)


_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)")


def parse_verbalized(text: str) -> float:
    """Read a stated confidence out of a free-text reply.

    The first number wins. Values in (1, 100] are read as percentages; the
    result is clamped to [0, 1]. Replies without a number give 0.5.
    """
    match = _NUMBER.search(text or "")
    if match is None:
        logger.warning("no confidence value in judge reply %r; using 0.5", (text or "")[:80])
        return 0.5
    value = float(match.group())
    if 1.0 < value <= 100.0:
        value /= 100.0
    return min(1.0, max(0.0, value))


# --------------------------------------------------------------------------
# shot plans


class ShotMode(Enum):
    INDIVIDUAL = "individual"
    MAJORITY = "majority"
    RANDOMIZED = "randomized"
    ZERO_SHOT = "zero_shot"


@dataclass(frozen=True)
class Shot:
    instance: PreferenceInstance
    label: Label


@dataclass(frozen=True)
class ShotPlan:
    mode: ShotMode
    K: int
    N: int
    seed: int
    shots: tuple  # N tuples of K Shot objects

    @property
    def assignments(self) -> list[list[tuple[str, Label]]]:
        return [[(s.instance.id, s.label) for s in row] for row in self.shots]

    @property
    def instance_ids(self) -> frozenset:
        return frozenset(s.instance.id for row in self.shots for s in row)

    def digest(self) -> str:
        payload = {
            "mode": self.mode.value,
            "K": self.K,
            "N": self.N,
            "seed": self.seed,
            "assignments": [[[i, lab.value] for i, lab in row] for row in self.assignments],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    @classmethod
    def zero_shot(cls) -> "ShotPlan":
        """Single annotator, no examples: the plain predictive-probability setting."""
        return cls(ShotMode.ZERO_SHOT, 0, 1, 0, ((),))


def build_shot_plan(
    pool: Sequence[PreferenceInstance],
    mode: ShotMode | str,
    K: int = DEFAULT_SHOTS,
    N: int = DEFAULT_ANNOTATORS,
    seed: int = 0,
) -> ShotPlan:
    """Assign K in-context examples to each of N simulated annotators.

    individual  same K inputs for all; annotator j sees the j-th human vote.
    majority    N disjoint K-subsets of inputs, each shown with its majority label.
    randomized  same K inputs for all; labels drawn uniformly from {A, B}.
    """
    mode = ShotMode(mode)
    if mode is ShotMode.ZERO_SHOT:
        return ShotPlan.zero_shot()
    if K < 1 or N < 1:
        raise ConfigError(f"K and N must be positive, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    pool = list(pool)

    if mode is ShotMode.MAJORITY:
        usable = []
        for inst in pool:
            if inst.annotations:
                m = majority_label(inst.annotations)
                if m.has_winner:
                    usable.append((inst, m.label))
        if len(usable) < K * N:
            raise ConfigError(
                f"majority shot plan needs {K * N} pool instances with a majority label, "
                f"pool has {len(usable)} (short by {K * N - len(usable)})"
            )
        picks = rng.permutation(len(usable))[: K * N]
        shots = tuple(
            tuple(Shot(*usable[picks[j * K + i]]) for i in range(K)) for j in range(N)
        )
        return ShotPlan(mode, K, N, seed, shots)

    if mode is ShotMode.INDIVIDUAL:
        usable = [inst for inst in pool if len(inst.annotations) >= N]
        if len(usable) < K:
            raise ConfigError(
                f"individual shot plan needs {K} pool instances with >= {N} annotations each, "
                f"pool has {len(usable)} (short by {K - len(usable)})"
            )
        lengths = {len(inst.annotations) for inst in usable}
        if len(lengths) > 1:
            raise ConfigError("individual shot plan needs equally long annotation lists across the pool")
        chosen = [usable[i] for i in rng.choice(len(usable), size=K, replace=False)]
        shots = tuple(tuple(Shot(inst, inst.annotations[j]) for inst in chosen) for j in range(N))
        return ShotPlan(mode, K, N, seed, shots)

    # randomized
    if len(pool) < K:
        raise ConfigError(f"randomized shot plan needs {K} pool instances, pool has {len(pool)} (short by {K - len(pool)})")
    chosen = [pool[i] for i in rng.choice(len(pool), size=K, replace=False)]
    coins = rng.integers(0, 2, size=(N, K))
    labels = (Label.FIRST, Label.SECOND)
    shots = tuple(tuple(Shot(inst, labels[coins[j, i]]) for i, inst in enumerate(chosen)) for j in range(N))
    return ShotPlan(mode, K, N, seed, shots)


def check_not_in_plan(instance: PreferenceInstance, plan: ShotPlan) -> None:
    if instance.id in plan.instance_ids:
        raise ConfigError(f"instance {instance.id!r} is one of the in-context examples of the shot plan")


def judgement_for(sim: AnnotatorSimulation, mode: Optional[str] = None) -> Judgement:
    """Pick the confidence estimator. ``predictive`` reads only the first row."""
    if mode == "predictive":
        return _judgement_from_mean(sim.labels, sim.rows[0])
    return aggregate_simulated_annotators(sim)

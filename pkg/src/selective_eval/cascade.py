"""Run a calibrated judge cascade over instances.

Each instance walks the cascade in order and is accepted by the first judge
whose confidence clears its threshold. Later judges are never queried for
that instance. An instance that no judge accepts is abstained on, and one
whose judge call fails is marked failed (which is not the same as abstained).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .core import Dataset, Label, PreferenceInstance
from .errors import BackendError, ConfigError
from .judges.base import JudgeRunner
from .risk import ThresholdSet

logger = logging.getLogger(__name__)


class Decision(Enum):
    EVALUATED = "evaluated"
    ABSTAINED = "abstained"
    FAILED = "failed"


@dataclass(frozen=True)
class CascadeOutcome:
    instance_id: str
    decision: Decision
    judges_consulted: tuple = ()  # (judge_id, confidence) in cascade order
    cost: float = 0.0
    judge_id: Optional[str] = None
    verdict: Optional[Label] = None
    confidence: Optional[float] = None
    error: Optional[str] = None

    def to_json(self) -> dict:
        out = {"id": self.instance_id, "decision": self.decision.value}
        if self.decision is Decision.EVALUATED:
            out.update(judge=self.judge_id, verdict=self.verdict.value, confidence=self.confidence)
        out["cost"] = self.cost
        if self.error is not None:
            out["error"] = self.error
        return out


def check_alignment(judges: Sequence[JudgeRunner], thresholds: ThresholdSet) -> None:
    ids = [j.judge_id for j in judges]
    tids = thresholds.judge_ids
    for pos, (a, b) in enumerate(zip(ids, tids)):
        if a != b:
            raise ConfigError(f"judge order mismatch at position {pos}: cascade has {a!r}, thresholds have {b!r}")
    if len(ids) != len(tids):
        raise ConfigError(f"cascade has {len(ids)} judges but thresholds cover {len(tids)}")


def run_cascade(instance: PreferenceInstance, judges: Sequence[JudgeRunner], thresholds: ThresholdSet) -> CascadeOutcome:
    check_alignment(judges, thresholds)
    consulted = []
    cost = 0.0
    for runner, thr in zip(judges, thresholds.per_judge):
        try:
            j = runner.judgement(instance)
        except BackendError as exc:
            return CascadeOutcome(instance.id, Decision.FAILED, tuple(consulted), cost, error=str(exc))
        consulted.append((runner.judge_id, j.confidence))
        cost += runner.spec.cost_weight
        if thr.accepts(j.confidence):
            return CascadeOutcome(instance.id, Decision.EVALUATED, tuple(consulted), cost, runner.judge_id, j.verdict, j.confidence)
    return CascadeOutcome(instance.id, Decision.ABSTAINED, tuple(consulted), cost)


def _stage_judgements(runner: JudgeRunner, instances: list):
    """Judge a batch; on a backend failure fall back to one-by-one to isolate the failing instances."""
    try:
        return list(runner.judgements(instances))
    except BackendError:
        out = []
        for inst in instances:
            try:
                out.append(runner.judgement(inst))
            except BackendError as exc:
                out.append(exc)
        return out


def evaluate_dataset(test: Dataset | Sequence[PreferenceInstance], judges: Sequence[JudgeRunner], thresholds: ThresholdSet) -> list[CascadeOutcome]:
    """Stage-by-stage equivalent of :func:`run_cascade` on every instance.

    Each stage sends its pending instances to the judge as one batch, so a
    remote backend can keep several requests in flight. Decisions are the
    same as running the cascade one instance at a time.
    """
    check_alignment(judges, thresholds)
    instances = list(test)
    consulted = [[] for _ in instances]
    cost = [0.0] * len(instances)
    final: list = [None] * len(instances)
    pending = list(range(len(instances)))
    for runner, thr in zip(judges, thresholds.per_judge):
        if not pending:
            break
        outs = _stage_judgements(runner, [instances[i] for i in pending])
        still = []
        for i, j in zip(pending, outs):
            if isinstance(j, BackendError):
                final[i] = CascadeOutcome(instances[i].id, Decision.FAILED, tuple(consulted[i]), cost[i], error=str(j))
                continue
            consulted[i].append((runner.judge_id, j.confidence))
            cost[i] += runner.spec.cost_weight
            if thr.accepts(j.confidence):
                final[i] = CascadeOutcome(
                    instances[i].id, Decision.EVALUATED, tuple(consulted[i]), cost[i], runner.judge_id, j.verdict, j.confidence
                )
            else:
                still.append(i)
        pending = still
    for i in pending:
        final[i] = CascadeOutcome(instances[i].id, Decision.ABSTAINED, tuple(consulted[i]), cost[i])
    n_failed = sum(o.decision is Decision.FAILED for o in final)
    if n_failed:
        logger.warning("%d of %d instances failed", n_failed, len(final))
    return final


def outcome_lines(outcomes: Sequence[CascadeOutcome]) -> list[str]:
    return [json.dumps(o.to_json()) for o in outcomes]

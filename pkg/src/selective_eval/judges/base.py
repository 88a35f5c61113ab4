from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from ..confidence import AnnotatorSimulation, Judgement, ShotPlan, check_not_in_plan, judgement_for
from ..core import PreferenceInstance
from ..errors import ConfigError


class JudgeKind(Enum):
    SYNTHETIC = "synthetic"
    CACHED = "cached"
    REMOTE = "remote"


@dataclass(frozen=True)
class JudgeSpec:
    id: str
    kind: JudgeKind
    cost_weight: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ConfigError("judge id must be nonempty")
        if not (self.cost_weight >= 0):
            raise ConfigError(f"judge {self.id!r}: cost_weight must be >= 0")

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "cost_weight": self.cost_weight, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "JudgeSpec":
        try:
            kind = JudgeKind(obj["kind"])
        except (KeyError, ValueError):
            raise ConfigError(f"judge spec {obj!r}: 'kind' must be one of synthetic, cached, remote") from None
        if "id" not in obj:
            raise ConfigError(f"judge spec {obj!r}: missing 'id'")
        return cls(str(obj["id"]), kind, float(obj.get("cost_weight", 1.0)), dict(obj.get("params", {})))


def stable_hash(*parts) -> int:
    """64-bit hash that is identical across processes and platforms."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def check_cost_order(specs: Sequence[JudgeSpec]) -> None:
    for a, b in zip(specs, specs[1:]):
        if b.cost_weight < a.cost_weight:
            raise ConfigError(
                f"cascade is not ordered by cost: {b.id!r} ({b.cost_weight}) follows {a.id!r} ({a.cost_weight}); "
                "set allow_unordered to override"
            )


class Backend:
    """Produce per-annotator label distributions for instances."""

    spec: JudgeSpec
    deterministic = True

    def simulate(self, instance: PreferenceInstance, plan: ShotPlan) -> AnnotatorSimulation:
        raise NotImplementedError

    def simulate_many(self, instances: Sequence[PreferenceInstance], plan: ShotPlan) -> list[AnnotatorSimulation]:
        return [self.simulate(inst, plan) for inst in instances]


class JudgeRunner:
    """A backend bound to a shot plan and a confidence estimator.

    This is the object the calibration and cascade code talk to.
    """

    def __init__(self, backend: Backend, plan: ShotPlan, confidence: Optional[str] = None):
        self.backend = backend
        self.plan = plan
        self.confidence = confidence

    @property
    def spec(self) -> JudgeSpec:
        return self.backend.spec

    @property
    def judge_id(self) -> str:
        return self.backend.spec.id

    def simulations(self, instances: Sequence[PreferenceInstance]) -> list[AnnotatorSimulation]:
        for inst in instances:
            check_not_in_plan(inst, self.plan)
        return self.backend.simulate_many(instances, self.plan)

    def judgements(self, instances: Sequence[PreferenceInstance]) -> list[Judgement]:
        return [judgement_for(sim, self.confidence) for sim in self.simulations(instances)]

    def judgement(self, instance: PreferenceInstance) -> Judgement:
        return self.judgements([instance])[0]


def make_backend(spec: JudgeSpec, **kwargs) -> Backend:
    if spec.kind is JudgeKind.SYNTHETIC:
        from .synthetic import SyntheticJudge

        return SyntheticJudge(spec)
    if spec.kind is JudgeKind.CACHED:
        from .cached import CachedJudge

        return CachedJudge(spec, **kwargs)
    from .remote import RemoteJudge

    return RemoteJudge(spec, **kwargs)


def judge(spec: JudgeSpec, instance: PreferenceInstance, plan: ShotPlan) -> AnnotatorSimulation:
    """One-shot convenience wrapper: build the backend for ``spec`` and query it once."""
    check_not_in_plan(instance, plan)
    return make_backend(spec).simulate(instance, plan)

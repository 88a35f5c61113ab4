"""Replay judge outputs from a prediction cache.

File layout (JSONL)::

    {"header": true, "shot_plan_digest": "<sha256>"}
    {"instance_id": "x1", "judge_id": "j1", "annotator": 0, "p": {"A": 0.7, "B": 0.3}}
    ...
"""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..confidence import AnnotatorSimulation, ShotPlan
from ..core import Label, PreferenceInstance, ordered_labels
from ..errors import CacheMissError, ConfigError, DigestMismatchError, DomainError, SchemaError
from ..io import atomic_write_text
from .base import Backend, JudgeSpec


class PredictionCache:
    def __init__(self, digest: str, entries: dict):
        self.digest = digest
        self.entries = entries  # (instance_id, judge_id, annotator) -> {Label: p}

    @classmethod
    def load(cls, path) -> "PredictionCache":
        digest = None
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"{where}: invalid JSON ({exc.msg})") from None
                if digest is None:
                    if not (isinstance(obj, dict) and obj.get("header") is True and isinstance(obj.get("shot_plan_digest"), str)):
                        raise SchemaError(f"{where}: first line must be the cache header")
                    digest = obj["shot_plan_digest"]
                    continue
                try:
                    key = (str(obj["instance_id"]), str(obj["judge_id"]), int(obj["annotator"]))
                    dist = {Label.parse(k): float(v) for k, v in obj["p"].items()}
                except (KeyError, TypeError, ValueError, AttributeError, DomainError) as exc:
                    raise SchemaError(f"{where}: malformed cache row ({exc})") from None
                if key in entries:
                    raise SchemaError(f"{where}: duplicate cache key {key}")
                entries[key] = dist
        if digest is None:
            raise SchemaError(f"{path}: empty cache file (no header)")
        return cls(digest, entries)

    def missing(self, judge_id: str, instances: Iterable[PreferenceInstance], n: int) -> list:
        return [(inst.id, judge_id, j) for inst in instances for j in range(n) if (inst.id, judge_id, j) not in self.entries]


@lru_cache(maxsize=32)
def _load_cached(path: str, mtime: float) -> PredictionCache:
    return PredictionCache.load(path)


def load_cache(path) -> PredictionCache:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"prediction cache {p} does not exist")
    return _load_cached(str(p.resolve()), p.stat().st_mtime)


class CachedJudge(Backend):
    def __init__(self, spec: JudgeSpec, cache: Optional[PredictionCache] = None):
        self.spec = spec
        if cache is None:
            if "path" not in spec.params:
                raise ConfigError(f"cached judge {spec.id!r} needs params.path")
            cache = load_cache(spec.params["path"])
        self.cache = cache

    def check_plan(self, plan: ShotPlan) -> None:
        if self.cache.digest != plan.digest():
            raise DigestMismatchError(
                f"cache for judge {self.spec.id!r} was recorded under shot plan {self.cache.digest[:12]}..., "
                f"current plan is {plan.digest()[:12]}..."
            )

    def require(self, instances: Sequence[PreferenceInstance], plan: ShotPlan) -> None:
        """Fail up front, listing every missing key, rather than on the first miss."""
        self.check_plan(plan)
        missing = self.cache.missing(self.spec.id, instances, plan.N)
        if missing:
            raise CacheMissError(missing)

    def simulate(self, instance: PreferenceInstance, plan: ShotPlan) -> AnnotatorSimulation:
        self.check_plan(plan)
        keys = [(instance.id, self.spec.id, j) for j in range(plan.N)]
        missing = [k for k in keys if k not in self.cache.entries]
        if missing:
            raise CacheMissError(missing)
        dists = [self.cache.entries[k] for k in keys]
        labels = ordered_labels(set().union(*dists))
        rows = np.array([[d.get(lab, 0.0) for lab in labels] for d in dists])
        return AnnotatorSimulation(instance.id, self.spec.id, labels, rows)


def cache_lines(digest: str, sims: Iterable[AnnotatorSimulation]) -> list[str]:
    lines = [json.dumps({"header": True, "shot_plan_digest": digest})]
    for sim in sims:
        for j, row in enumerate(sim.rows):
            p = {lab.value: float(v) for lab, v in zip(sim.labels, row)}
            lines.append(json.dumps({"instance_id": sim.instance_id, "judge_id": sim.judge_id, "annotator": j, "p": p}))
    return lines


def write_cache(path, plan: ShotPlan, sims: Iterable[AnnotatorSimulation]) -> None:
    """Record simulations (e.g. from a remote judge) so they can be replayed offline."""
    atomic_write_text(Path(path), "".join(line + "\n" for line in cache_lines(plan.digest(), sims)))

"""A fully specified synthetic world and judge, used to check the guarantee by simulation.

Each instance has a latent preferred response and a difficulty d. Humans
vote for the latent label with probability 1 - d/2. A synthetic judge with
skill s puts probability logistic(s * (1 - 2d) + g) on the latent label, with
g ~ Normal(0, noise) drawn per simulated annotator. On instances with d > 1/2
the judge leans towards the wrong label, and it does so more confidently the
harder the instance. That is the over-confidence the selective procedure has
to guard against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..confidence import AnnotatorSimulation, ShotPlan
from ..core import BINARY, Dataset, Label, PreferenceInstance
from ..errors import ConfigError, DomainError
from .base import Backend, JudgeSpec, stable_hash

DEFAULT_SKILLS = (1.0, 2.0, 4.0)
DEFAULT_NOISE = 0.5
DEFAULT_MAX_DIFFICULTY = 0.85

_LABELS = (Label.FIRST, Label.SECOND)


def human_accuracy(difficulty):
    """Probability that one human vote matches the latent label."""
    return 1.0 - np.asarray(difficulty, dtype=float) / 2.0


def judge_latent_probability(skill: float, difficulty, noise_draw=0.0):
    return expit(skill * (1.0 - 2.0 * np.asarray(difficulty, dtype=float)) + noise_draw)


@dataclass(frozen=True)
class SyntheticWorld:
    latent: tuple
    difficulty: np.ndarray
    annotators: int
    seed: int
    max_difficulty: float = DEFAULT_MAX_DIFFICULTY


def generate_world(
    size: int,
    annotators: int = 5,
    seed: int = 0,
    *,
    max_difficulty: float = DEFAULT_MAX_DIFFICULTY,
    n_models: int = 0,
    id_prefix: str = "w",
) -> tuple[Dataset, SyntheticWorld]:
    """Draw a synthetic preference dataset.

    Difficulty is Uniform(0, max_difficulty). With ``n_models >= 2`` every
    instance is also tagged with a random pair of distinct generating models
    in ``meta['model_a']`` / ``meta['model_b']``; the tags carry no signal.
    """
    if size < 1:
        raise ConfigError("world size must be >= 1")
    if annotators < 1 or annotators % 2 == 0:
        raise ConfigError(f"human pool size must be a positive odd number, got {annotators}")
    if not (0.0 <= max_difficulty <= 1.0):
        raise ConfigError("max_difficulty must lie in [0, 1]")
    if n_models == 1:
        raise ConfigError("n_models must be 0 (untagged) or at least 2")

    ss_latent, ss_votes, ss_models = np.random.SeedSequence(seed).spawn(3)
    rng = np.random.default_rng(ss_latent)
    latent = rng.integers(0, 2, size=size)
    difficulty = rng.uniform(0.0, max_difficulty, size=size)
    agree = np.random.default_rng(ss_votes).random((size, annotators)) < human_accuracy(difficulty)[:, None]
    pairs = None
    if n_models >= 2:
        mrng = np.random.default_rng(ss_models)
        pairs = [mrng.choice(n_models, size=2, replace=False) for _ in range(size)]

    width = len(str(size - 1))
    instances = []
    for i in range(size):
        iid = f"{id_prefix}{i:0{width}d}"
        y = _LABELS[latent[i]]
        votes = tuple(y if a else y.other() for a in agree[i])
        meta = {"latent": y.value, "difficulty": repr(float(difficulty[i])), "world_seed": str(seed)}
        if pairs is not None:
            meta["model_a"] = f"model-{pairs[i][0]:02d}"
            meta["model_b"] = f"model-{pairs[i][1]:02d}"
        instances.append(
            PreferenceInstance(
                iid,
                f"Query for instance {iid}.",
                f"Response A to instance {iid}.",
                f"Response B to instance {iid}.",
                votes,
                meta,
            )
        )
    world = SyntheticWorld(tuple(_LABELS[v] for v in latent), difficulty, annotators, seed, max_difficulty)
    return Dataset(BINARY, tuple(instances)), world


class SyntheticJudge(Backend):
    """Judge whose rows are a pure function of (world seed, judge id, instance id, annotator index)."""

    def __init__(self, spec: JudgeSpec):
        self.spec = spec
        try:
            self.skill = float(spec.params.get("skill", 1.0))
            self.noise = float(spec.params.get("noise", DEFAULT_NOISE))
        except (TypeError, ValueError):
            raise ConfigError(f"judge {spec.id!r}: skill and noise must be numbers") from None
        if self.noise < 0:
            raise ConfigError(f"judge {spec.id!r}: noise must be >= 0")
        self._judge_key = stable_hash("judge", spec.id)

    def _latent(self, instance: PreferenceInstance) -> tuple[Label, float, int]:
        try:
            return (
                Label.parse(instance.meta["latent"]),
                float(instance.meta["difficulty"]),
                int(instance.meta.get("world_seed", self.spec.params.get("world_seed", 0))),
            )
        except (KeyError, ValueError):
            raise DomainError(f"instance {instance.id!r} carries no synthetic-world metadata") from None

    def noise_draws(self, instance_id: str, world_seed: int, n: int) -> np.ndarray:
        inst_key = stable_hash("instance", instance_id)
        out = np.empty(n)
        for j in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([world_seed, self._judge_key, inst_key, j]))
            out[j] = rng.standard_normal()
        return out * self.noise

    def simulate(self, instance: PreferenceInstance, plan: ShotPlan) -> AnnotatorSimulation:
        latent, d, world_seed = self._latent(instance)
        q = judge_latent_probability(self.skill, d, self.noise_draws(instance.id, world_seed, plan.N))
        rows = np.empty((plan.N, 2))
        col = _LABELS.index(latent)
        rows[:, col] = q
        rows[:, 1 - col] = 1.0 - q
        return AnnotatorSimulation(instance.id, self.spec.id, _LABELS, rows)

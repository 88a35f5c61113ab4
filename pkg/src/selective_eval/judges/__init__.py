"""Judge backends behind one interface: synthetic, cached replay, remote HTTP."""

from .base import Backend, JudgeKind, JudgeRunner, JudgeSpec, check_cost_order, judge, make_backend, stable_hash
from .cached import CachedJudge, PredictionCache, load_cache, write_cache
from .synthetic import SyntheticJudge, SyntheticWorld, generate_world, human_accuracy

__all__ = [
    "Backend",
    "CachedJudge",
    "JudgeKind",
    "JudgeRunner",
    "JudgeSpec",
    "PredictionCache",
    "SyntheticJudge",
    "SyntheticWorld",
    "check_cost_order",
    "generate_world",
    "human_accuracy",
    "judge",
    "load_cache",
    "make_backend",
    "stable_hash",
    "write_cache",
]

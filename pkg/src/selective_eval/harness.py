"""Experiment protocol: seeded splits, baseline strategies, repeated trials.

Judge outputs are computed once per (instance, judge) for the whole dataset
and stored in a :class:`JudgementTable`. Every trial and every strategy then
reads the same table, so strategy comparisons see identical judge outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .confidence import DEFAULT_ANNOTATORS, DEFAULT_SHOTS, ShotMode, ShotPlan, build_shot_plan
from .core import Dataset, load_dataset
from .errors import ConfigError, DomainError, SelectiveEvalError
from .judges.base import JudgeKind, JudgeRunner, JudgeSpec, check_cost_order, make_backend, stable_hash
from .judges.cached import CachedJudge
from .judges.synthetic import DEFAULT_MAX_DIFFICULTY, generate_world
from .metrics import CalibrationReport, TrialReport, calibration_report, guarantee_success_rate, meets_target, summarize
from .risk import ALWAYS_ABSTAIN, calibrate_cascade_arrays, calibration_truth, point_estimate_threshold


class Strategy(Enum):
    CASCADED_SELECTIVE = "cascaded_selective"
    NO_SELECTION = "no_selection"
    HEURISTIC = "heuristic"
    CASCADED_HEURISTIC = "cascaded_heuristic"
    POINT_ESTIMATE = "point_estimate"


CONFIDENCE_MODES = ("individual", "majority", "randomized", "predictive")


@dataclass(frozen=True)
class WorldConfig:
    size: int = 2500
    annotators: int = 5
    seed: int = 0
    max_difficulty: float = DEFAULT_MAX_DIFFICULTY
    n_models: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    cascade: tuple
    dataset: Optional[str] = None
    world: Optional[WorldConfig] = None
    confidence: str = "individual"
    shots: int = DEFAULT_SHOTS
    annotators: int = DEFAULT_ANNOTATORS
    shot_pool: Optional[str] = None
    shot_seed: int = 0
    alpha: float = 0.1
    delta: float = 0.1
    cal_size: int = 500
    trials: int = 1000
    seed: int = 0
    strategy: Strategy = Strategy.CASCADED_SELECTIVE
    point_estimate_judge: int = -1
    shift: bool = False
    tie_policy: str = "exclude"
    allow_tie: bool = False
    ece_bins: int = 10
    min_count: Optional[int] = None
    allow_unordered: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "cascade", tuple(self.cascade))
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.cascade:
            raise ConfigError("cascade: at least one judge is required")
        ids = [s.id for s in self.cascade]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"cascade: duplicate judge ids {ids}")
        if not self.allow_unordered:
            check_cost_order(self.cascade)
        for name in ("alpha", "delta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
                raise ConfigError(f"{name}: must lie in (0, 1), got {v!r}")
        if (self.dataset is None) == (self.world is None):
            raise ConfigError("exactly one of 'dataset' and 'world' must be given")
        if self.confidence not in CONFIDENCE_MODES:
            raise ConfigError(f"confidence: must be one of {CONFIDENCE_MODES}")
        if self.trials < 1:
            raise ConfigError("trials: must be >= 1")
        if self.cal_size < 1:
            raise ConfigError("cal_size: must be >= 1")
        if self.world is not None and self.cal_size >= self.world.size:
            raise ConfigError(f"cal_size ({self.cal_size}) must be smaller than the world size ({self.world.size})")
        if not -len(self.cascade) <= self.point_estimate_judge < len(self.cascade):
            raise ConfigError("point_estimate_judge: index out of range for the cascade")
        if self.tie_policy not in ("exclude", "disagree"):
            raise ConfigError("tie_policy: must be 'exclude' or 'disagree'")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "cascade":
                v = [s.to_json() for s in v]
            elif f.name == "world" and v is not None:
                v = {wf.name: getattr(v, wf.name) for wf in fields(WorldConfig)}
            elif isinstance(v, Enum):
                v = v.value
            out[f.name] = v
        return out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_json(cls, obj: dict, base_dir=None) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        if "cascade" not in obj:
            raise ConfigError("config needs a 'cascade' list")
        kw = dict(obj)
        try:
            kw["cascade"] = tuple(JudgeSpec.from_json(s) for s in obj["cascade"])
        except TypeError:
            raise ConfigError("cascade: must be a list of judge specs") from None
        if kw.get("world") is not None:
            wk = set(kw["world"]) - {f.name for f in fields(WorldConfig)}
            if wk:
                raise ConfigError(f"unknown world key(s): {', '.join(sorted(wk))}")
            kw["world"] = WorldConfig(**kw["world"])
        if "strategy" in kw:
            try:
                kw["strategy"] = Strategy(kw["strategy"])
            except ValueError:
                raise ConfigError(f"strategy: must be one of {[s.value for s in Strategy]}") from None
        if base_dir is not None:
            base = Path(base_dir)
            for key in ("dataset", "shot_pool"):
                if kw.get(key) is not None:
                    kw[key] = str(base / kw[key])
            specs = []
            for s in kw["cascade"]:
                if s.kind is JudgeKind.CACHED and "path" in s.params:
                    s = JudgeSpec(s.id, s.kind, s.cost_weight, {**s.params, "path": str(base / s.params["path"])})
                specs.append(s)
            kw["cascade"] = tuple(specs)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            obj = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {p} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_json(obj, base_dir=p.parent)

    def replace(self, **changes) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ExperimentConfig(**d)


# --------------------------------------------------------------------------
# data, shot plans and judges


def load_source(config: ExperimentConfig, dataset_path=None) -> Dataset:
    """The dataset named by ``dataset_path``, else the config's file or synthetic world."""
    if dataset_path is not None:
        return load_dataset(dataset_path, allow_tie=config.allow_tie)
    if config.dataset is not None:
        return load_dataset(config.dataset, allow_tie=config.allow_tie)
    w = config.world
    dataset, _ = generate_world(w.size, w.annotators, w.seed, max_difficulty=w.max_difficulty, n_models=w.n_models)
    return dataset


def make_plan(config: ExperimentConfig) -> ShotPlan:
    """Shot plan for the run, fixed once from ``shot_seed``.

    The pool is the ``shot_pool`` file, or for synthetic worlds a separate
    small world drawn from a derived seed (its ids never collide with the
    evaluated instances).
    """
    if config.confidence == "predictive":
        return ShotPlan.zero_shot()
    K, N = config.shots, config.annotators
    if config.shot_pool is not None:
        pool = list(load_dataset(config.shot_pool, allow_tie=config.allow_tie))
    elif config.world is not None:
        w = config.world
        pool_ds, _ = generate_world(
            K * N,
            max(w.annotators, N if N % 2 else N + 1),
            stable_hash("shot-pool", w.seed) % 2**32,
            max_difficulty=w.max_difficulty,
            id_prefix="shot",
        )
        pool = list(pool_ds)
    else:
        raise ConfigError("shot_pool: a shot pool file is required for file datasets with few-shot confidence")
    return build_shot_plan(pool, ShotMode(config.confidence), K, N, config.shot_seed)


def make_runners(config: ExperimentConfig, plan: ShotPlan, **backend_kwargs) -> list[JudgeRunner]:
    mode = "predictive" if config.confidence == "predictive" else None
    return [JudgeRunner(make_backend(spec, **backend_kwargs.get(spec.id, {})), plan, mode) for spec in config.cascade]


def check_inputs(dataset: Dataset, runners: Sequence[JudgeRunner]) -> None:
    """Fail before any work starts: shot-example overlap, cache digests, missing cache keys."""
    for r in runners:
        overlap = r.plan.instance_ids & {inst.id for inst in dataset}
        if overlap:
            raise ConfigError(f"shot examples also appear in the evaluated data: {sorted(overlap)[:5]}")
        if isinstance(r.backend, CachedJudge):
            r.backend.require(list(dataset), r.plan)


@dataclass
class JudgementTable:
    """Judge outputs for every usable instance: arrays of shape (judges, instances)."""

    ids: tuple
    judge_ids: tuple
    cost_weights: np.ndarray
    confidence: np.ndarray
    error: np.ndarray
    models: Optional[list] = None

    def __len__(self) -> int:
        return len(self.ids)

    def rows_for(self, ids: Sequence[str]) -> np.ndarray:
        index = {iid: i for i, iid in enumerate(self.ids)}
        return np.array([index[i] for i in ids], dtype=int)


def build_table(dataset: Dataset, runners: Sequence[JudgeRunner], tie_policy: str = "exclude") -> JudgementTable:
    pairs = calibration_truth(dataset, tie_policy)
    instances = [inst for inst, _ in pairs]
    conf = np.empty((len(runners), len(pairs)))
    err = np.empty((len(runners), len(pairs)), dtype=bool)
    for i, r in enumerate(runners):
        for c, (j, (_, human)) in enumerate(zip(r.judgements(instances), pairs)):
            conf[i, c] = j.confidence
            err[i, c] = j.verdict != human
    models = None
    if instances and all("model_a" in inst.meta and "model_b" in inst.meta for inst in instances):
        models = [(inst.meta["model_a"], inst.meta["model_b"]) for inst in instances]
    return JudgementTable(
        tuple(inst.id for inst in instances),
        tuple(r.judge_id for r in runners),
        np.array([r.spec.cost_weight for r in runners], dtype=float),
        conf,
        err,
        models,
    )


def prepare(config: ExperimentConfig) -> JudgementTable:
    dataset = load_source(config)
    plan = make_plan(config)
    runners = make_runners(config, plan)
    check_inputs(dataset, runners)
    return build_table(dataset, runners, config.tie_policy)


# --------------------------------------------------------------------------
# splits


def trial_seed(master: int, t: int) -> int:
    return stable_hash("trial", master, t) & (2**63 - 1)


def split_indices(n: int, cal_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < cal_size < n:
        raise DomainError(f"cal_size must satisfy 0 < cal_size < {n}, got {cal_size}")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[:cal_size], perm[cal_size:]


def random_split(dataset: Dataset, cal_size: int, seed: int) -> tuple[Dataset, Dataset]:
    cal, test = split_indices(len(dataset), cal_size, seed)
    return dataset.subset(cal), dataset.subset(test)


class ShiftedSplit(NamedTuple):
    cal: object
    test: object
    dropped: int


def _model_halves(pairs: Sequence[tuple], seed: int) -> tuple[np.ndarray, np.ndarray, int]:
    names = sorted({m for pair in pairs for m in pair})
    if len(names) < 4:
        raise ConfigError(f"shifted split needs at least 4 distinct models, found {len(names)}")
    perm = np.random.default_rng(seed).permutation(len(names))
    first = {names[i] for i in perm[: len(names) // 2]}
    cal, test = [], []
    for i, (a, b) in enumerate(pairs):
        if a in first and b in first:
            cal.append(i)
        elif a not in first and b not in first:
            test.append(i)
    return np.array(cal, dtype=int), np.array(test, dtype=int), len(pairs) - len(cal) - len(test)


def shifted_split(dataset: Dataset, seed: int) -> ShiftedSplit:
    """Split so that calibration and test share no generating model.

    The model set is shuffled and halved; calibration gets the instances whose
    two models both lie in the first half, test those with both in the second.
    Cross-half instances are dropped and counted.
    """
    pairs = []
    for inst in dataset:
        if "model_a" not in inst.meta or "model_b" not in inst.meta:
            raise ConfigError(f"instance {inst.id!r} lacks meta.model_a / meta.model_b required for a shifted split")
        pairs.append((inst.meta["model_a"], inst.meta["model_b"]))
    cal, test, dropped = _model_halves(pairs, seed)
    return ShiftedSplit(dataset.subset(cal), dataset.subset(test), dropped)


def _trial_rows(config: ExperimentConfig, table: JudgementTable, seed: int) -> tuple[np.ndarray, np.ndarray, int]:
    if not config.shift:
        cal, test = split_indices(len(table), config.cal_size, seed)
        return cal, test, 0
    if table.models is None:
        raise ConfigError("shift: every instance needs meta.model_a and meta.model_b")
    cal, test, dropped = _model_halves(table.models, seed)
    if cal.size > config.cal_size:
        cal = np.random.default_rng(stable_hash("shift-cal", seed)).choice(cal, size=config.cal_size, replace=False)
    if cal.size == 0 or test.size == 0:
        raise ConfigError("shifted split produced an empty calibration or test set")
    return cal, test, dropped


# --------------------------------------------------------------------------
# strategies


def strategy_stages(config: ExperimentConfig, table: JudgementTable, cal: np.ndarray) -> list[tuple[int, object]]:
    """(judge index, threshold) per cascade stage for the configured strategy."""
    m = len(table.judge_ids)
    s, alpha = config.strategy, config.alpha
    if s is Strategy.CASCADED_SELECTIVE:
        thr = calibrate_cascade_arrays(
            table.confidence[:, cal], table.error[:, cal], alpha, config.delta, min_count=config.min_count
        )
        return list(enumerate(thr))
    if s is Strategy.NO_SELECTION:
        return [(m - 1, 0.0)]
    if s is Strategy.HEURISTIC:
        return [(m - 1, 1.0 - alpha)]
    if s is Strategy.CASCADED_HEURISTIC:
        return [(i, 1.0 - alpha) for i in range(m)]
    j = config.point_estimate_judge % m
    return [(j, point_estimate_threshold(table.confidence[j, cal], table.error[j, cal], alpha))]


def apply_stages(table: JudgementTable, stages, rows: np.ndarray) -> TrialReport:
    """Vectorised cascade walk over ``rows`` of the table."""
    n = rows.size
    accepted = np.full(n, -1)
    cost = np.zeros(n)
    for i, thr in stages:
        pending = accepted < 0
        cost[pending] += table.cost_weights[i]
        if thr is not ALWAYS_ABSTAIN:
            accepted[pending & (table.confidence[i, rows] >= thr)] = i
    ids = table.judge_ids
    accepted_by = [None if a < 0 else ids[a] for a in accepted.tolist()]
    err = table.error[np.maximum(accepted, 0), rows]
    correct = [None if a < 0 else not e for a, e in zip(accepted.tolist(), err.tolist())]
    return summarize(ids, accepted_by, correct, cost.tolist(), float(table.cost_weights.max()))


def run_strategy(
    config: ExperimentConfig, cal: Dataset, test: Dataset, table: Optional[JudgementTable] = None
) -> TrialReport:
    """One calibration/test run of the configured strategy.

    Instances missing from ``table`` (e.g. tie-majority instances under the
    exclude policy) are ignored.
    """
    if table is None:
        plan = make_plan(config)
        runners = make_runners(config, plan)
        both = cal.with_instances(list(cal) + list(test))
        check_inputs(both, runners)
        table = build_table(both, runners, config.tie_policy)
    known = set(table.ids)
    cal_rows = table.rows_for([i.id for i in cal if i.id in known])
    test_rows = table.rows_for([i.id for i in test if i.id in known])
    if cal_rows.size == 0:
        raise DomainError("calibration set is empty after tie exclusion")
    return apply_stages(table, strategy_stages(config, table, cal_rows), test_rows)


# --------------------------------------------------------------------------
# trials


class TrialFailure(SelectiveEvalError):
    def __init__(self, trial: int, seed: int, cause: Exception):
        self.trial, self.seed, self.cause = trial, seed, cause
        super().__init__(f"trial {trial} (seed {seed}) failed: {cause}")


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    report: TrialReport
    dropped: int = 0


def _mean(xs) -> Optional[float]:
    xs = list(xs)
    return math.fsum(xs) / len(xs) if xs else None


@dataclass(frozen=True)
class AggregateReport:
    strategy: str
    alpha: float
    delta: float
    master_seed: int
    results: tuple
    judge_ids: tuple = field(default_factory=tuple)

    @property
    def agreements(self) -> list:
        return [r.report.selective_agreement for r in self.results]

    @property
    def success_rate(self) -> float:
        return guarantee_success_rate(self.agreements, self.alpha)

    @property
    def coverage_mean(self) -> float:
        return _mean(r.report.coverage for r in self.results)

    def summary(self) -> dict:
        defined = [a for a in self.agreements if a is not None]
        covered = [r.report for r in self.results if r.report.evaluated > 0]
        costs = [r.report.relative_cost for r in self.results if r.report.relative_cost is not None]
        return {
            "strategy": self.strategy,
            "alpha": self.alpha,
            "delta": self.delta,
            "target_agreement": 1.0 - self.alpha,
            "master_seed": self.master_seed,
            "trials": len(self.results),
            "guarantee_success_rate": self.success_rate,
            "successful_runs": sum(meets_target(a, self.alpha) for a in self.agreements),
            "undefined_runs": len(self.results) - len(defined),
            "agreement_mean": _mean(defined),
            "agreement_min": min(defined) if defined else None,
            "agreement_max": max(defined) if defined else None,
            "coverage_mean": self.coverage_mean,
            "composition_mean": {j: _mean(r.composition[j] for r in covered) for j in self.judge_ids},
            "relative_cost_mean": _mean(costs),
            "dropped_mean": _mean(r.dropped for r in self.results),
        }

    def to_json(self) -> dict:
        out = self.summary()
        out["per_trial"] = [
            {"trial": r.trial, "seed": r.seed, "dropped": r.dropped, **r.report.to_json()} for r in self.results
        ]
        return out

    def csv_text(self) -> str:
        return per_trial_csv(self.to_json())


def per_trial_csv(aggregate: dict) -> str:
    rows = aggregate.get("per_trial") or []
    judge_ids = list(aggregate.get("composition_mean", {}))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["trial", "seed", "selective_agreement", "coverage", "relative_cost", "evaluated", "abstained", "failed", "dropped"]
        + [f"composition_{j}" for j in judge_ids]
    )
    for r in rows:
        w.writerow(
            [r["trial"], r["seed"], "" if r["selective_agreement"] is None else r["selective_agreement"], r["coverage"],
             "" if r["relative_cost"] is None else r["relative_cost"], r["evaluated"], r["abstained"], r["failed"],
             r.get("dropped", 0)]
            + [r["composition"].get(j, 0.0) for j in judge_ids]
        )
    return buf.getvalue()


def run_trial(config: ExperimentConfig, table: JudgementTable, t: int) -> TrialResult:
    seed = trial_seed(config.seed, t)
    try:
        cal, test, dropped = _trial_rows(config, table, seed)
        report = apply_stages(table, strategy_stages(config, table, cal), test)
    except Exception as exc:
        raise TrialFailure(t, seed, exc) from exc
    return TrialResult(t, seed, report, dropped)


def run_trials(config: ExperimentConfig, table: Optional[JudgementTable] = None) -> AggregateReport:
    """Repeat split / calibrate / evaluate ``config.trials`` times.

    Trial t uses seed ``trial_seed(config.seed, t)``, so results do not depend
    on ``config.workers``.
    """
    if table is None:
        table = prepare(config)
    if config.cal_size >= len(table) and not config.shift:
        raise ConfigError(f"cal_size ({config.cal_size}) must be smaller than the usable dataset size ({len(table)})")
    if config.workers == 1:
        results = [run_trial(config, table, t) for t in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda t: run_trial(config, table, t), range(config.trials)))
    return AggregateReport(config.strategy.value, config.alpha, config.delta, config.seed, tuple(results), table.judge_ids)


def judge_calibration(table: JudgementTable, rows: Optional[np.ndarray] = None, bins: int = 10) -> dict[str, CalibrationReport]:
    """Per-judge ECE / AUROC / AUPRC against the human majority."""
    rows = np.arange(len(table)) if rows is None else rows
    out = {}
    for i, jid in enumerate(table.judge_ids):
        samples = list(zip(table.confidence[i, rows].tolist(), (~table.error[i, rows]).tolist()))
        out[jid] = calibration_report(samples, bins)
    return out

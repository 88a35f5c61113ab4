"""``selective-eval`` command line: calibrate, evaluate, simulate, replay, report.

Exit codes: 0 success, 1 validation error, 2 backend or runtime error.
Every command that writes files also writes a manifest next to them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import harness
from .cascade import check_alignment, evaluate_dataset, outcome_lines
from .core import Dataset, load_dataset
from .errors import BackendError, ConfigError, SchemaError, SelectiveEvalError, ValidationError
from .io import atomic_write_json, atomic_write_text, dumps, manifest
from .judges.base import JudgeKind
from .judges.cached import CachedJudge
from .metrics import trial_report
from .risk import ThresholdSet, calibrate_cascade

logger = logging.getLogger("selective_eval")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _level(flag: str):
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise UsageError(f"{flag}: expected a number, got {text!r}") from None
        if not 0.0 < v < 1.0:
            raise UsageError(f"{flag}: must lie in (0, 1), got {text}")
        return v

    return parse


def _positive(flag: str):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise UsageError(f"{flag}: expected an integer, got {text!r}") from None
        if v < 1:
            raise UsageError(f"{flag}: must be >= 1, got {v}")
        return v

    return parse


def _deterministic(config: harness.ExperimentConfig) -> bool:
    return all(s.kind is not JudgeKind.REMOTE for s in config.cascade)


def _cache_paths(config: harness.ExperimentConfig) -> dict:
    return {f"cache:{s.id}": s.params["path"] for s in config.cascade if s.kind is JudgeKind.CACHED}


def _write_manifest(path: Path, command: str, config, seeds: dict, inputs: dict) -> None:
    inputs = {k: v for k, v in inputs.items() if v is not None}
    atomic_write_json(
        path,
        manifest(command, config_digest=config.digest(), seeds=seeds, inputs=inputs, deterministic=_deterministic(config)),
    )


def _setup(config: harness.ExperimentConfig, dataset: Dataset):
    plan = harness.make_plan(config)
    runners = harness.make_runners(config, plan)
    return plan, runners


# -- commands ---------------------------------------------------------------


def cmd_calibrate(args) -> int:
    config = harness.ExperimentConfig.load(args.config)
    changes = {}
    for key in ("alpha", "delta"):
        if getattr(args, key) is not None:
            changes[key] = getattr(args, key)
    if args.seed is not None:
        changes["shot_seed"] = args.seed
    config = config.replace(**changes)
    dataset = load_dataset(args.dataset, allow_tie=config.allow_tie)
    _, runners = _setup(config, dataset)
    harness.check_inputs(dataset, runners)
    thresholds = calibrate_cascade(
        runners, dataset, config.alpha, config.delta, tie_policy=config.tie_policy, min_count=config.min_count
    )
    thresholds.validate()
    out = Path(args.out)
    atomic_write_json(out, thresholds.to_json())
    _write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "calibrate",
        config,
        {"shot_seed": config.shot_seed},
        {"dataset": args.dataset, "config": args.config, **_cache_paths(config)},
    )
    for j in thresholds.per_judge:
        shown = "always abstain" if j.always_abstain else f"{j.threshold:.6g}"
        print(f"{j.judge_id}: threshold {shown} ({len(j.trace)} points tested)")
        if j.warning:
            print(f"  warning: {j.warning}")
    return 0


def _load_thresholds(path) -> ThresholdSet:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    ts = ThresholdSet.from_json(obj)
    ts.validate()
    return ts


def cmd_evaluate(args) -> int:
    config = harness.ExperimentConfig.load(args.config)
    thresholds = _load_thresholds(args.thresholds)
    dataset = load_dataset(args.dataset, allow_tie=config.allow_tie)
    plan, runners = _setup(config, dataset)
    check_alignment(runners, thresholds)
    for r in runners:
        if isinstance(r.backend, CachedJudge):
            r.backend.check_plan(plan)
    outcomes = evaluate_dataset(dataset, runners, thresholds)
    report = trial_report(outcomes, dataset.majorities(), config.cascade)
    out = Path(args.out)
    atomic_write_text(out / "outcomes.jsonl", "".join(line + "\n" for line in outcome_lines(outcomes)))
    atomic_write_json(out / "report.json", report.to_json())
    _write_manifest(
        out / "manifest.json",
        "evaluate",
        config,
        {"shot_seed": config.shot_seed},
        {"dataset": args.dataset, "thresholds": args.thresholds, "config": args.config, **_cache_paths(config)},
    )
    print(_trial_line(report))
    return 0


def _trial_line(report) -> str:
    agr = "undefined" if report.selective_agreement is None else f"{report.selective_agreement:.4f}"
    return f"agreement {agr}  coverage {report.coverage:.4f}  evaluated {report.evaluated}  abstained {report.abstained}  failed {report.failed}"


def cmd_simulate(args) -> int:
    config = harness.ExperimentConfig.load(args.config)
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    config = config.replace(**changes)
    agg = harness.run_trials(config)
    out = Path(args.out)
    atomic_write_json(out / "aggregate.json", agg.to_json())
    atomic_write_text(out / "trials.csv", agg.csv_text())
    _write_manifest(
        out / "manifest.json",
        "simulate",
        config,
        {"master": config.seed, "shot_seed": config.shot_seed},
        {"config": args.config, "dataset": config.dataset, **_cache_paths(config)},
    )
    print(render_table(agg.summary()))
    return 0


def replay_report(config: harness.ExperimentConfig, dataset: Dataset, seed: int) -> dict:
    """Full pipeline on one seeded split: calibrate, run the cascade, score it."""
    _, runners = _setup(config, dataset)
    harness.check_inputs(dataset, runners)
    if config.shift:
        cal, test, dropped = harness.shifted_split(dataset, seed)
    else:
        (cal, test), dropped = harness.random_split(dataset, config.cal_size, seed), 0
    thresholds = calibrate_cascade(
        runners, cal, config.alpha, config.delta, tie_policy=config.tie_policy, min_count=config.min_count
    )
    outcomes = evaluate_dataset(test, runners, thresholds)
    report = trial_report(outcomes, test.majorities(), config.cascade)
    table = harness.build_table(test, runners, config.tie_policy)
    diag = harness.judge_calibration(table, bins=config.ece_bins) if len(table) else {}
    return {
        "seed": seed,
        "calibration_size": len(cal),
        "test_size": len(test),
        "dropped": dropped,
        "thresholds": thresholds.to_json(),
        "report": report.to_json(),
        "judge_calibration": {k: v.to_json() for k, v in diag.items()},
        "outcomes": [o.to_json() for o in outcomes],
    }


def cmd_replay(args) -> int:
    config = harness.ExperimentConfig.load(args.config)
    for s in config.cascade:
        if s.kind is JudgeKind.REMOTE:
            raise ConfigError(f"replay runs without network access; judge {s.id!r} is remote")
    dataset = load_dataset(args.dataset, allow_tie=config.allow_tie)
    result = replay_report(config, dataset, args.seed)
    out = Path(args.out)
    atomic_write_json(out / "report.json", result)
    _write_manifest(
        out / "manifest.json",
        "replay",
        config,
        {"split": args.seed, "shot_seed": config.shot_seed},
        {"dataset": args.dataset, "config": args.config, **_cache_paths(config)},
    )
    print(_trial_line(_Report(result["report"])))
    return 0


class _Report:
    def __init__(self, d):
        self.__dict__.update(d)


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def render_table(summary: dict) -> str:
    rows = []
    for key, value in summary.items():
        if key == "per_trial":
            continue
        if isinstance(value, dict):
            for sub, v in value.items():
                rows.append((f"{key}.{sub}", _fmt(v)))
        else:
            rows.append((key, _fmt(value)))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def cmd_report(args) -> int:
    path = Path(args.input)
    try:
        agg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(agg, dict) or not agg.get("per_trial") or not agg.get("trials"):
        raise SchemaError(f"{path}: aggregate report has no trials")
    if args.format == "csv":
        sys.stdout.write(harness.per_trial_csv(agg))
    else:
        print(render_table(agg))
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="selective-eval", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", help="calibrate cascade thresholds on a calibration dataset")
    c.add_argument("--dataset", required=True)
    c.add_argument("--config", required=True)
    c.add_argument("--alpha", type=_level("--alpha"), help="risk tolerance (default: config)")
    c.add_argument("--delta", type=_level("--delta"), help="error level (default: config)")
    c.add_argument("--seed", type=int, help="shot-plan seed (default: config shot_seed)")
    c.add_argument("--out", required=True, help="thresholds JSON path")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="run a calibrated cascade over a test dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--thresholds", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="repeated calibration/test trials")
    s.add_argument("--config", required=True)
    s.add_argument("--trials", type=_positive("--trials"))
    s.add_argument("--seed", type=int, help="master seed (default: config)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replay", help="full pipeline against prediction caches")
    r.add_argument("--dataset", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, required=True, help="split seed")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_replay)

    o = sub.add_parser("report", help="render an aggregate report")
    o.add_argument("--input", required=True)
    o.add_argument("--format", choices=("table", "csv"), default="table")
    o.set_defaults(func=cmd_report)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, harness.TrialFailure):
        return _exit_code(exc.cause)
    if isinstance(exc, (ValidationError, FileNotFoundError, IsADirectoryError)):
        return 1
    return 2


def main(argv: Optional[list] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SelectiveEvalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)

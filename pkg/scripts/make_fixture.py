"""Regenerate the replay fixture in tests/fixtures/replay.

Writes a small synthetic dataset, a shot pool, prediction caches for two
judges, a config pointing at them, and the golden replay report. The golden
file is meant to be frozen: rerun this only when the report format changes
on purpose, and commit the result.

    python scripts/make_fixture.py [--out tests/fixtures/replay]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from selective_eval.cli import replay_report
from selective_eval.confidence import ShotMode, build_shot_plan
from selective_eval.core import load_dataset, write_dataset
from selective_eval.harness import ExperimentConfig
from selective_eval.io import atomic_write_json
from selective_eval.judges import JudgeKind, JudgeSpec, SyntheticJudge, generate_world, write_cache

SIZE = 300
CAL_SIZE = 150
WORLD_SEED = 7
SPLIT_SEED = 11
JUDGES = (("small", 1.0, 1.0), ("large", 4.0, 10.0))  # id, skill, cost


def build(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    dataset, _ = generate_world(SIZE, 5, WORLD_SEED, n_models=6, id_prefix="fx")
    pool, _ = generate_world(25, 5, WORLD_SEED + 1, id_prefix="fxshot")
    plan = build_shot_plan(list(pool), ShotMode.INDIVIDUAL, 5, 5, 0)
    write_dataset(out / "dataset.jsonl", dataset)
    write_dataset(out / "shot_pool.jsonl", pool)

    cascade = []
    for jid, skill, cost in JUDGES:
        backend = SyntheticJudge(JudgeSpec(jid, JudgeKind.SYNTHETIC, cost, {"skill": skill, "noise": 0.5}))
        write_cache(out / f"cache_{jid}.jsonl", plan, backend.simulate_many(list(dataset), plan))
        cascade.append({"id": jid, "kind": "cached", "cost_weight": cost, "params": {"path": f"cache_{jid}.jsonl"}})

    config = {
        "dataset": "dataset.jsonl",
        "shot_pool": "shot_pool.jsonl",
        "cascade": cascade,
        "confidence": "individual",
        "alpha": 0.15,
        "delta": 0.1,
        "cal_size": CAL_SIZE,
        "trials": 20,
    }
    atomic_write_json(out / "config.json", config)

    cfg = ExperimentConfig.load(out / "config.json")
    atomic_write_json(out / "golden_report.json", replay_report(cfg, load_dataset(out / "dataset.jsonl"), SPLIT_SEED))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "replay"))
    build(Path(ap.parse_args().out))


if __name__ == "__main__":
    main()

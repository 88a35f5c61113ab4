"""Shared setup for the sweep scripts: a synthetic three-judge world."""

from __future__ import annotations

import argparse
from dataclasses import dataclass

from selective_eval.harness import ExperimentConfig, WorldConfig
from selective_eval.judges import JudgeKind, JudgeSpec


@dataclass(frozen=True)
class SweepWorld:
    size: int = 2500
    world_seed: int = 0
    skills: tuple = (1.0, 2.0, 4.0)
    costs: tuple = (1.0, 5.0, 25.0)
    noise: float = 0.5
    cal_size: int = 500
    trials: int = 1000
    seed: int = 0
    alpha: float = 0.1
    delta: float = 0.1

    def config(self, **changes) -> ExperimentConfig:
        names = ("small", "medium", "large", "xl", "xxl")
        cascade = tuple(
            JudgeSpec(names[i], JudgeKind.SYNTHETIC, c, {"skill": s, "noise": self.noise})
            for i, (s, c) in enumerate(zip(self.skills, self.costs))
        )
        base = ExperimentConfig(
            cascade=cascade,
            world=WorldConfig(size=self.size, seed=self.world_seed),
            alpha=self.alpha,
            delta=self.delta,
            cal_size=self.cal_size,
            trials=self.trials,
            seed=self.seed,
        )
        return base.replace(**changes)


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--size", type=int, default=SweepWorld.size)
    p.add_argument("--trials", type=int, default=SweepWorld.trials)
    p.add_argument("--cal-size", type=int, default=SweepWorld.cal_size)
    p.add_argument("--seed", type=int, default=SweepWorld.seed)
    p.add_argument("--delta", type=float, default=SweepWorld.delta)
    p.add_argument("--out", help="write the results as JSON here")
    return p


def world_from(args, **kw) -> SweepWorld:
    return SweepWorld(size=args.size, trials=args.trials, cal_size=args.cal_size, seed=args.seed, delta=args.delta, **kw)

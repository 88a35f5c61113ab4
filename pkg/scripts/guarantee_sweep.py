"""Guarantee success rate of every selection strategy on one synthetic world.

    python scripts/guarantee_sweep.py [--trials 1000] [--alpha 0.1] [--out results.json]
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _world import parser, world_from  # noqa: E402

from selective_eval import harness  # noqa: E402
from selective_eval.io import atomic_write_json  # noqa: E402


def main() -> None:
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--alpha", type=float, default=0.1)
    args = p.parse_args()
    world = world_from(args, alpha=args.alpha)
    base = world.config()
    table = harness.prepare(base)

    runs = [("cascaded_selective", {}), ("cascaded_heuristic", {}), ("heuristic", {}), ("no_selection", {})]
    runs += [(f"point_estimate[{s.id}]", {"strategy": "point_estimate", "point_estimate_judge": j}) for j, s in enumerate(base.cascade)]

    rows = []
    print(f"{'strategy':<28} {'success':>8} {'agree':>7} {'cover':>7} {'cost':>7}")
    for name, kw in runs:
        t0 = time.perf_counter()
        agg = harness.run_trials(base.replace(strategy=kw.pop("strategy", name), **kw), table)
        s = agg.summary()
        s["label"] = name
        s["seconds"] = time.perf_counter() - t0
        rows.append(s)
        agree = "-" if s["agreement_mean"] is None else f"{s['agreement_mean']:.3f}"
        print(f"{name:<28} {s['guarantee_success_rate']:>8.3f} {agree:>7} {s['coverage_mean']:>7.3f} {s['relative_cost_mean']:>7.3f}")
    if args.out:
        atomic_write_json(Path(args.out), {"config": base.to_json(), "results": rows})


if __name__ == "__main__":
    main()

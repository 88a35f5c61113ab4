"""Coverage, agreement and cost of the calibrated cascade across risk tolerances.

    python scripts/alpha_sweep.py [--alphas 0.05 0.1 0.15 0.2 0.25 0.3] [--out results.json]
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from _world import parser, world_from  # noqa: E402

from selective_eval import harness  # noqa: E402
from selective_eval.io import atomic_write_json  # noqa: E402


def main() -> None:
    p = parser(__doc__.splitlines()[0])
    p.add_argument("--alphas", type=float, nargs="+", default=[0.3, 0.25, 0.2, 0.15, 0.1, 0.05])
    args = p.parse_args()
    base = world_from(args).config()
    table = harness.prepare(base)

    rows = []
    print(f"{'alpha':>6} {'success':>8} {'agree':>7} {'cover':>7} {'cost':>7}  composition")
    for a in args.alphas:
        s = harness.run_trials(base.replace(alpha=a), table).summary()
        rows.append(s)
        agree = "-" if s["agreement_mean"] is None else f"{s['agreement_mean']:.3f}"
        comp = " ".join(f"{k}={v:.2f}" for k, v in s["composition_mean"].items())
        print(f"{a:>6.3f} {s['guarantee_success_rate']:>8.3f} {agree:>7} {s['coverage_mean']:>7.3f} {s['relative_cost_mean']:>7.3f}  {comp}")
    if args.out:
        atomic_write_json(Path(args.out), {"config": base.to_json(), "results": rows})


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Paired GRPO vs ARSPO runs on the two-task imbalance benchmark.

    python scripts/run_imbalance.py [--workers 5] [--out runs/imbalance]

Prints per-seed capability gains and the hard-task win record, and writes
comparison.json plus every run's traces under --out.
"""

import argparse
import json
from pathlib import Path

from arspo_lab.cli import compare_report, run_seeds
from arspo_lab.config import load_config
from arspo_lab.train import write_outputs

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--baseline", default=ROOT / "configs" / "grpo_imbalance.yaml")
    ap.add_argument("--variant", default=ROOT / "configs" / "arspo_imbalance.yaml")
    ap.add_argument("--workers", type=int, default=5)
    ap.add_argument("--out", default="runs/imbalance")
    args = ap.parse_args()

    base, var = load_config(args.baseline), load_config(args.variant)
    seeds = base.training.seeds
    traces_a = run_seeds(base, seeds, args.workers)
    traces_b = run_seeds(var, seeds, args.workers)
    out = Path(args.out)
    for label, traces, cfg in (("grpo", traces_a, base), ("arspo", traces_b, var)):
        for tr in traces:
            write_outputs(tr, cfg, out / label)
    report = compare_report(traces_a, traces_b, labels=("grpo", "arspo"))
    (out / "comparison.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    hard = report["hard_task"]
    easy = [t for t in report["tasks"] if t != hard][0]
    print(f"hard task: {hard}")
    print(f"{'seed':>4} {'grpo dH_easy':>13} {'grpo dH_hard':>13} {'arspo dH_easy':>14} "
          f"{'arspo dH_hard':>14} {'hard':>5}")
    for run in report["runs"]:
        g, a = run["delta_H_grpo"], run["delta_H_arspo"]
        print(f"{run['seed']:>4} {g[easy]:13.4f} {g[hard]:13.4f} {a[easy]:14.4f} {a[hard]:14.4f} "
              f"{run['hard_task_outcome']:>5}")
    rec = report["hard_task_record"]
    print(f"ARSPO hard-task record vs GRPO: {rec['wins']} wins, {rec['losses']} losses, {rec['ties']} ties")


if __name__ == "__main__":
    main()

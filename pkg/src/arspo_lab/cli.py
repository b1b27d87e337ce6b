"""``arspo-lab`` command line: verify | run | compare.

Exit codes: 0 success, 1 failed verification check, 2 usage or configuration
error, 3 non-finite numerics during training.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import verify
from .config import ConfigError, ExperimentConfig, load_config
from .train import SCHEMA_VERSION, NonFiniteError, train, write_outputs

OUT_ENV_VAR = "ARSPO_LAB_OUT"
DEFAULT_OUT = "runs"

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NONFINITE = 0, 1, 2, 3


class UsageError(Exception):
    pass


def resolve_out_dir(flag: str | None, config: ExperimentConfig | None) -> Path:
    """--out, then the config's output.directory, then $ARSPO_LAB_OUT, then ./runs."""
    if flag:
        return Path(flag)
    if config is not None and config.output.directory:
        return Path(config.output.directory)
    return Path(os.environ.get(OUT_ENV_VAR) or DEFAULT_OUT)


def parse_seeds(text: str | None, config: ExperimentConfig) -> list[int]:
    if not text:
        return config.training.seeds
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be a comma-separated list of integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _load(path: str) -> ExperimentConfig:
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _train_one(config: ExperimentConfig, seed: int):
    return train(config, seed)


def run_seeds(config: ExperimentConfig, seeds: list[int], workers: int) -> list:
    """Train every seed; results come back ordered by the seed list regardless of workers."""
    if workers <= 1 or len(seeds) == 1:
        return [train(config, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
        return list(pool.map(_train_one, [config] * len(seeds), seeds))


def cmd_verify(args) -> int:
    names = list(verify.SUITES) if args.suite == "all" else [args.suite]
    report = verify.run_suites(names)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"verify_{args.suite}.json").write_text(text + "\n")
    print(text)
    for name, suite in report["suites"].items():
        for check in suite["checks"]:
            if not check["passed"]:
                where = f" [{check['entry']}]" if "entry" in check else ""
                print(f"FAIL {name}: {check['name']}{where} error={check['error']:.3g} "
                      f"tolerance={check['tolerance']:.3g}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_FAILED


def cmd_run(args) -> int:
    if len(args.config) != 1:
        raise UsageError("run takes exactly one --config")
    config = _load(args.config[0])
    seeds = parse_seeds(args.seeds, config)
    out = resolve_out_dir(args.out, config)
    for trace in run_seeds(config, seeds, args.workers):
        paths = write_outputs(trace, config, out)
        print(f"seed {trace.seed}: {paths['trace']}")
    return EXIT_OK


def compare_report(traces_a, traces_b, labels=("a", "b")) -> dict:
    """Per-task gains for both methods and the per-seed hard-task record.

    The hard task is the one with the lowest initial capability.
    """
    a, b = labels
    tasks = traces_a[0].tasks
    initial = traces_a[0].initial
    hard = min(tasks, key=lambda k: (initial[k], tasks.index(k)))
    runs = []
    wins = losses = ties = 0
    for ta, tb in zip(traces_a, traces_b):
        da, db = ta.deltas(), tb.deltas()
        diff = tb.final[hard] - ta.final[hard]
        outcome = "win" if diff > 0 else "loss" if diff < 0 else "tie"
        wins += outcome == "win"
        losses += outcome == "loss"
        ties += outcome == "tie"
        runs.append({
            "seed": ta.seed,
            f"delta_H_{a}": da,
            f"delta_H_{b}": db,
            f"final_H_{a}": ta.final,
            f"final_H_{b}": tb.final,
            "delta_of_deltas": {k: db[k] - da[k] for k in tasks},
            "hard_task_outcome": outcome,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "labels": list(labels),
        "tasks": tasks,
        "hard_task": hard,
        "seeds": [t.seed for t in traces_a],
        "runs": runs,
        "hard_task_record": {"wins": wins, "losses": losses, "ties": ties},
    }


def cmd_compare(args) -> int:
    if len(args.config) != 2:
        raise UsageError("compare takes exactly two --config options (baseline first)")
    config_a, config_b = (_load(p) for p in args.config)
    if config_a.model_dump()["environments"] != config_b.model_dump()["environments"]:
        raise UsageError("compared configs must define identical environments")
    if config_a.training.steps != config_b.training.steps:
        raise UsageError("compared configs must share training.steps")
    seeds = parse_seeds(args.seeds, config_a)
    if not args.seeds and config_b.training.seeds != seeds:
        raise UsageError("compared configs must share the seed list (or pass --seeds)")
    traces_a = run_seeds(config_a, seeds, args.workers)
    traces_b = run_seeds(config_b, seeds, args.workers)
    report = compare_report(traces_a, traces_b)
    report["configs"] = [str(p) for p in args.config]
    out = resolve_out_dir(args.out, config_a)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    (out / "comparison.json").write_text(text)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arspo-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run finite-difference and golden-trace suites")
    p.add_argument("--suite", default="all", choices=[*verify.SUITES, "all"])
    p.add_argument("--out", help="also write the JSON report into this directory")
    p.set_defaults(func=cmd_verify)

    for name, func, help_text in (("run", cmd_run, "train one config over its seeds"),
                                  ("compare", cmd_compare, "paired baseline-vs-variant runs")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", action="append", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--seeds", metavar="LIST", help="comma-separated seeds overriding the config")
        p.add_argument("--workers", type=int, default=1, metavar="N")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE


if __name__ == "__main__":
    sys.exit(main())

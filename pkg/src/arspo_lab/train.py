"""Desk-scale multi-task training loop and trace persistence."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dca import DcaScheduler
from .envs import expected_capability, sample_group
from .objectives import Batch, ClipBoundaryError, objective_gradient, objective_value
from .policy import ParamLayout, PolicyModel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("step", "task", "H", "l", "objective", "grad_norm", "branch")
DCA_COLUMNS = ("step", "task", "l", "B", "mu", "mu_past", "delta_total", "branch_fired")
BOUNDARY_NUDGE = 1e-12


class NonFiniteError(FloatingPointError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class TrainingTrace:
    tasks: list
    seed: int
    records: list = field(default_factory=list)  # one dict per step
    adjustments: list = field(default_factory=list)
    final_theta: np.ndarray | None = None

    def capability(self, task: str) -> np.ndarray:
        return np.array([r["H"][task] for r in self.records])

    @property
    def initial(self) -> dict:
        return dict(self.records[0]["H"])

    @property
    def final(self) -> dict:
        return dict(self.records[-1]["H"])

    def deltas(self) -> dict:
        return {k: self.final[k] - self.initial[k] for k in self.tasks}


def _capabilities(policy, env_list) -> dict:
    return {e.name: expected_capability(policy, e)[0] for e in env_list}


def train(config: ExperimentConfig, seed: int | None = None) -> TrainingTrace:
    """Run one seed of the configured experiment and return its trace."""
    seed = config.training.seeds[0] if seed is None else seed
    tr = config.training
    env_list = config.build_envs()
    layout = ParamLayout.for_envs(env_list)
    policy = PolicyModel.init(layout, scale=tr.init_scale, seed=seed, temperature=tr.temperature)
    variant = config.variant()
    weights = config.task_weights()
    mappings = {e.name: config.mapping(e.name) for e in env_list}
    scheduler = DcaScheduler(config.dca_config()) if config.dca.enabled else None

    trace = TrainingTrace([e.name for e in env_list], seed)
    coef = {e.name: 1.0 for e in env_list}
    trace.records.append({"step": 0, "H": _capabilities(policy, env_list), "l": dict(coef),
                          "objective": None, "grad_norm": None, "branch": {}})

    for step in range(1, tr.steps + 1):
        policy.snapshot()
        groups = []
        for k, env in enumerate(env_list):
            for q in range(env.n_contexts):
                groups.append(sample_group(policy, env, q, tr.group_size, rng=(seed, step, k, q),
                                           mapping=mappings[env.name]))
        branches = {}
        if scheduler is not None:
            means = {e.name: float(np.mean([g.metrics.mean() for g in groups if g.task == e.name]))
                     for e in env_list}
            events = scheduler.step(means)
            trace.adjustments.extend(events)
            branches = {ev.task: ev.branch for ev in events}
            coef = scheduler.coefficients
        batch = Batch(groups, weights)
        value = objective_value(batch, variant, coef, policy)
        try:
            grad = objective_gradient(batch, variant, coef, policy)
        except ClipBoundaryError:
            grad = objective_gradient(batch, variant, coef, policy, ratio_nudge=BOUNDARY_NUDGE)
        if not np.isfinite(value):
            raise NonFiniteError(step, "objective")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(step, "gradient")
        policy.theta = policy.theta + tr.step_size * grad
        if not np.all(np.isfinite(policy.theta)):
            raise NonFiniteError(step, "parameters")
        trace.records.append({"step": step, "H": _capabilities(policy, env_list), "l": dict(coef),
                              "objective": float(value), "grad_norm": float(np.linalg.norm(grad)),
                              "branch": branches})
    trace.final_theta = policy.theta.copy()
    return trace


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def trace_csv(trace: TrainingTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rec in trace.records:
        for task in trace.tasks:
            w.writerow([rec["step"], task, _fmt(rec["H"][task]), _fmt(rec["l"][task]),
                        _fmt(rec["objective"]), _fmt(rec["grad_norm"]), rec["branch"].get(task, "")])
    return buf.getvalue()


def dca_csv(trace: TrainingTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DCA_COLUMNS)
    for ev in trace.adjustments:
        w.writerow([ev.step, ev.task, _fmt(ev.l_after), _fmt(ev.baseline), _fmt(ev.mu),
                    _fmt(ev.mu_past), _fmt(ev.delta_total), ev.branch])
    return buf.getvalue()


def summary(trace: TrainingTrace, config: ExperimentConfig) -> dict:
    branch_counts: dict = {}
    for ev in trace.adjustments:
        branch_counts.setdefault(ev.task, {}).setdefault(ev.branch, 0)
        branch_counts[ev.task][ev.branch] += 1
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": trace.seed,
        "steps": trace.records[-1]["step"],
        "config": config.model_dump(mode="json"),
        "initial_H": trace.initial,
        "final_H": trace.final,
        "delta_H": trace.deltas(),
        "final_coefficients": dict(trace.records[-1]["l"]),
        "dca_branch_counts": branch_counts,
    }


def write_outputs(trace: TrainingTrace, config: ExperimentConfig, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = f"seed{trace.seed}"
    paths = {
        "trace": out_dir / f"trace_{suffix}.csv",
        "dca": out_dir / f"dca_{suffix}.csv",
        "summary": out_dir / f"summary_{suffix}.json",
    }
    paths["trace"].write_text(trace_csv(trace))
    paths["dca"].write_text(dca_csv(trace))
    paths["summary"].write_text(json.dumps(summary(trace, config), indent=2, sort_keys=True) + "\n")
    return paths

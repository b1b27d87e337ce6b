"""Dynamic Coefficient Adjustment: per-task objective coefficients driven by metric trends.

Global steps are 1-based. Samples recorded at steps s < t_warm build the frozen
baseline; from the first multiple of ``t_window`` with s >= t_warm + 3 * t_window,
coefficients are adjusted every ``t_window`` steps using the half-open windows
(s - T, s] (current) and (s - 3T, s - T] (past).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np

# high-performance threshold by task kind
TAU_HIGH = {"classification": 0.10, "image": 0.50, "text": 0.60, "video": 0.60}

BRANCHES = ("momentum", "rescue", "decay", "laggard", "none")


class ScheduleError(RuntimeError):
    """adjust() called before warm-up finished or off the T-step schedule."""


@dataclass(frozen=True)
class DcaConfig:
    tau_high: Mapping[str, float]
    t_warm: int = 800
    t_window: int = 100
    alpha_boost: float = 1.1
    alpha_decay: float = 0.9
    eps_mom: float = 0.02
    eps_rescue: float = 0.10
    l_max: float = 4.0
    b_floor: float = 1e-6

    def __post_init__(self):
        if self.t_warm < 1 or self.t_window < 1:
            raise ValueError("t_warm and t_window must be positive")
        if not self.alpha_boost > 1 > self.alpha_decay > 0:
            raise ValueError("need alpha_boost > 1 > alpha_decay > 0")
        if self.eps_mom <= 0 or self.eps_rescue <= 0:
            raise ValueError("eps_mom and eps_rescue must be positive")
        if self.l_max < 1:
            raise ValueError("l_max must be >= 1")
        if not self.tau_high:
            raise ValueError("tau_high needs one entry per task")
        object.__setattr__(self, "tau_high", MappingProxyType(dict(self.tau_high)))

    @property
    def tasks(self) -> list[str]:
        return list(self.tau_high)

    @property
    def first_adjustment(self) -> int:
        T = self.t_window
        earliest = self.t_warm + 3 * T
        return -(-earliest // T) * T


@dataclass(frozen=True)
class CoefficientState:
    step: int
    coefficients: Mapping[str, float]
    baselines: Mapping[str, float]
    history: Mapping[str, tuple]  # task -> tuple of (step, value)
    warmed_up: bool = False
    warmup_count: int = 0
    warmup_sums: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def initial(cls, tasks) -> "CoefficientState":
        tasks = list(tasks)
        return cls(0, {k: 1.0 for k in tasks}, {k: 0.0 for k in tasks}, {k: () for k in tasks},
                   warmup_sums={k: 0.0 for k in tasks})


@dataclass(frozen=True)
class Adjustment:
    step: int
    task: str
    branch: str
    l_before: float
    l_after: float
    baseline: float
    mu: float
    mu_past: float
    delta_total: float
    delta_recent: float


def rescale(coefficients: Mapping[str, float]) -> dict[str, float]:
    values = list(coefficients.values())
    if any(v <= 0 for v in values):
        raise ValueError("coefficients must be positive")
    low = min(values)
    return {k: v / low for k, v in coefficients.items()}


def record_metrics(state: CoefficientState, per_task_means: Mapping[str, float],
                   config: DcaConfig) -> CoefficientState:
    missing = set(state.coefficients) - set(per_task_means)
    if missing:
        raise ValueError(f"missing metric sample for tasks {sorted(missing)}")
    s = state.step + 1
    history = {k: h + ((s, float(per_task_means[k])),) for k, h in state.history.items()}
    baselines, sums = dict(state.baselines), dict(state.warmup_sums)
    count, warmed = state.warmup_count, state.warmed_up
    if s < config.t_warm:
        count += 1
        for k in baselines:
            sums[k] = sums.get(k, 0.0) + float(per_task_means[k])
            baselines[k] = sums[k] / count
    elif not warmed:
        warmed = True
    # only the last 3T samples are ever read back
    keep = 3 * config.t_window
    history = {k: h[-keep:] for k, h in history.items()}
    return replace(state, step=s, history=history, baselines=baselines,
                   warmed_up=warmed, warmup_count=count, warmup_sums=sums)


def _window_mean(samples, lo: int, hi: int) -> float:
    vals = [v for step, v in samples if lo < step <= hi]
    if not vals:
        raise ScheduleError(f"no samples in window ({lo}, {hi}]")
    return float(np.mean(vals))


def adjust(state: CoefficientState, config: DcaConfig) -> tuple[CoefficientState, list[Adjustment]]:
    """One coefficient update; returns the new state and the branch fired per task."""
    s, T = state.step, config.t_window
    if not state.warmed_up:
        raise ScheduleError(f"adjust at step {s} before warm-up finished")
    if s % T != 0:
        raise ScheduleError(f"step {s} is not a multiple of T={T}")
    if s < config.t_warm + 3 * T:
        raise ScheduleError(f"step {s} has no full past window yet")

    tasks = list(state.coefficients)
    stats = {}
    for k in tasks:
        mu = _window_mean(state.history[k], s - T, s)
        mu_past = _window_mean(state.history[k], s - 3 * T, s - T)
        base = state.baselines[k]
        stats[k] = (mu, mu_past, (mu - base) / max(base, config.b_floor))
    # ties go to the earliest task
    laggard = min(tasks, key=lambda k: stats[k][2])

    coef = dict(state.coefficients)
    events = []
    for k in tasks:
        mu, mu_past, gain = stats[k]
        recent = mu - mu_past
        before = coef[k]
        if recent > config.eps_mom:
            branch = "momentum"
        elif recent < -config.eps_rescue:
            branch = "rescue"
            coef[k] = before * config.alpha_boost
        elif gain > config.tau_high[k]:
            branch = "decay"
            coef[k] = max(before * config.alpha_decay, 1.0)
        elif k == laggard:
            branch = "laggard"
            coef[k] = min(before * config.alpha_boost, config.l_max)
        else:
            branch = "none"
        events.append(Adjustment(s, k, branch, before, coef[k], state.baselines[k],
                                 mu, mu_past, gain, recent))
    coef = rescale(coef)
    events = [replace(e, l_after=coef[e.task]) for e in events]
    return replace(state, coefficients=coef), events


@dataclass
class DcaScheduler:
    """Single-writer wrapper: feed one metric sample per step, adjusting on schedule."""

    config: DcaConfig
    state: CoefficientState = None
    log: list = field(default_factory=list)

    def __post_init__(self):
        if self.state is None:
            self.state = CoefficientState.initial(self.config.tasks)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(self.state.coefficients)

    def step(self, per_task_means: Mapping[str, float]) -> list[Adjustment]:
        self.state = record_metrics(self.state, per_task_means, self.config)
        s = self.state.step
        if s < self.config.first_adjustment or s % self.config.t_window:
            return []
        self.state, events = adjust(self.state, self.config)
        self.log.extend(events)
        return events

"""Unified GRPO / GSPO / SAPO surrogate objective, its ARSPO weighting, and analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .group_norm import NormalizedGroup
from .policy import PolicyModel
from .rewards import RewardBreakdown

FAMILIES = ("grpo", "gspo", "sapo")
GROUP_SIZE = 8


class ClipBoundaryError(ArithmeticError):
    """A clipped ratio sits exactly on 1 +/- epsilon, where f is not differentiable."""


@dataclass(frozen=True)
class ObjectiveVariant:
    family: str = "grpo"
    epsilon: float = 0.2
    tau_pos: float = 1.0
    tau_neg: float = 1.05
    kl_beta: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown objective family {self.family!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.tau_pos > 0 and self.tau_neg > 0):
            raise ValueError("SAPO temperatures must be positive")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be non-negative")

    @property
    def smooth(self) -> bool:
        return self.family == "sapo"


@dataclass(frozen=True)
class ResponseGroup:
    """G sampled responses to one query of one task.

    ``actions``, ``old_logp`` and ``new_logp`` are (G, L) arrays; every response has L tokens.
    """

    task: str
    query: int
    actions: np.ndarray
    old_logp: np.ndarray
    new_logp: np.ndarray
    metrics: np.ndarray
    breakdowns: tuple[RewardBreakdown, ...]
    normalized: NormalizedGroup

    def __post_init__(self):
        G = len(self.actions)
        if G < 2:
            raise ValueError("a response group needs G >= 2")
        if self.actions.ndim != 2 or self.actions.shape[1] < 1:
            raise ValueError("actions must be (G, L) with L >= 1")
        if self.old_logp.shape != self.actions.shape or self.new_logp.shape != self.actions.shape:
            raise ValueError("log-prob arrays must match the action shape")
        if len(self.breakdowns) == G:
            totals = np.array([b.total for b in self.breakdowns])
            if not np.array_equal(totals, self.normalized.raw):
                raise ValueError("normalized.raw must equal the reward totals")

    @property
    def group_size(self) -> int:
        return len(self.actions)

    @property
    def lengths(self) -> np.ndarray:
        return np.full(self.group_size, self.actions.shape[1])

    @property
    def rewards(self) -> np.ndarray:
        return self.normalized.raw

    @property
    def advantages(self) -> np.ndarray:
        return self.normalized.advantages

    @property
    def ratios(self) -> np.ndarray:
        return np.exp(self.new_logp - self.old_logp)


@dataclass(frozen=True)
class Batch:
    groups: list
    task_weights: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        weights = dict(self.task_weights)
        if not weights:
            tasks = sorted({g.task for g in self.groups})
            weights = {t: 1.0 / len(tasks) for t in tasks}
            object.__setattr__(self, "task_weights", weights)
        if any(w <= 0 for w in weights.values()):
            raise ValueError("task weights must be positive")
        represented = {g.task for g in self.groups}
        missing = represented - set(weights)
        if missing:
            raise ValueError(f"no weight for tasks {sorted(missing)}")
        total = sum(weights[t] for t in represented)
        if represented and abs(total - 1.0) > 1e-9:
            raise ValueError(f"task weights sum to {total}, expected 1")

    def by_task(self) -> dict[str, list]:
        out: dict[str, list] = {}
        for g in self.groups:
            out.setdefault(g.task, []).append(g)
        return out


def _bounds(variant: ObjectiveVariant) -> tuple[float, float]:
    return 1.0 + variant.epsilon, 1.0 - variant.epsilon


def _clip(x, adv, variant):
    hi, lo = _bounds(variant)
    return np.where(adv > 0, np.minimum(x, hi), np.maximum(x, lo))


def _clip_slope(x, adv, variant):
    hi, lo = _bounds(variant)
    if np.any((adv > 0) & (x == hi)) or np.any((adv <= 0) & (x == lo)):
        raise ClipBoundaryError("ratio exactly on the clip boundary")
    return np.where(adv > 0, x < hi, x > lo).astype(float)


def _sapo_tau(adv, variant):
    return np.where(adv > 0, variant.tau_pos, variant.tau_neg)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def f_value(variant: ObjectiveVariant, r, adv, seq_ratio=None):
    """Token weighting f(r). ``adv`` is the advantage (only its sign matters)."""
    scalar = np.ndim(r) == 0 and np.ndim(adv) == 0
    r, adv = np.asarray(r, dtype=float), np.asarray(adv, dtype=float)
    if variant.family == "grpo":
        out = _clip(r, adv, variant)
    elif variant.family == "gspo":
        if seq_ratio is None:
            raise ValueError("GSPO needs the sequence-level ratio")
        out = _clip(np.asarray(seq_ratio, dtype=float), adv, variant)
    else:
        tau = _sapo_tau(adv, variant)
        out = (4.0 / tau) * _sigmoid(tau * (r - 1.0))
    return float(out) if scalar else out


def f_derivative(variant: ObjectiveVariant, r, adv):
    """df/dr. For GSPO pass the sequence ratio as ``r``."""
    scalar = np.ndim(r) == 0 and np.ndim(adv) == 0
    r, adv = np.asarray(r, dtype=float), np.asarray(adv, dtype=float)
    if variant.family in ("grpo", "gspo"):
        out = _clip_slope(r, adv, variant)
    else:
        sig = _sigmoid(_sapo_tau(adv, variant) * (r - 1.0))
        out = 4.0 * sig * (1.0 - sig)
    return float(out) if scalar else out


def f_second_derivative(variant: ObjectiveVariant, r, adv):
    if variant.family != "sapo":
        raise ValueError("second derivative only defined for the smooth SAPO family")
    r, adv = np.asarray(r, dtype=float), np.asarray(adv, dtype=float)
    tau = _sapo_tau(adv, variant)
    sig = _sigmoid(tau * (r - 1.0))
    return 4.0 * tau * sig * (1.0 - sig) * (1.0 - 2.0 * sig)


def gspo_sequence_ratio(new_logp, old_logp) -> np.ndarray:
    """Geometric-mean ratio s_i = exp(mean_t log r_{i,t}) per response.

    Under the stop-gradient token construction, the token-t gradient of the
    surrogate is s_i * grad log pi(y_t), i.e. s_i is held constant.
    """
    new_logp, old_logp = np.atleast_2d(new_logp), np.atleast_2d(old_logp)
    return np.exp(np.mean(new_logp - old_logp, axis=1))


def _coefficients(batch: Batch, coefficients: Optional[Mapping[str, float]]) -> dict[str, float]:
    tasks = batch.by_task()
    if coefficients is None:
        return {t: 1.0 for t in tasks}
    missing = set(tasks) - set(coefficients)
    if missing:
        raise ValueError(f"missing coefficient for tasks {sorted(missing)}")
    return {t: float(coefficients[t]) for t in tasks}


def _rescored(group: ResponseGroup, policy: Optional[PolicyModel]) -> np.ndarray:
    if policy is None:
        return group.new_logp
    return policy.token_log_probs(group.task, group.query, group.actions)


def _group_surrogate(group: ResponseGroup, variant: ObjectiveVariant, new_logp) -> float:
    adv = group.advantages
    if not np.any(adv):
        return 0.0
    log_r = new_logp - group.old_logp
    adv_tok = np.broadcast_to(adv[:, None], log_r.shape)
    if variant.family == "gspo":
        seq = np.exp(log_r.mean(axis=1))
        f = np.broadcast_to(f_value(variant, seq, adv, seq_ratio=seq)[:, None], log_r.shape)
    else:
        f = f_value(variant, np.exp(log_r), adv_tok)
    per_response = f.mean(axis=1)  # (1/|y_i|) sum_t
    return float(np.sum(per_response * adv)) / group.group_size


def _groups_in_order(batch: Batch):
    tasks = batch.by_task()
    for task in sorted(tasks):
        yield task, sorted(tasks[task], key=lambda g: g.query)


def objective_value(batch: Batch, variant: ObjectiveVariant,
                    coefficients: Optional[Mapping[str, float]] = None,
                    policy: Optional[PolicyModel] = None) -> float:
    """Surrogate J; with ``coefficients`` it is the per-task weighted (ARSPO) form.

    When ``policy`` is given, the new-policy log-probabilities are recomputed
    from its current parameters (used by finite-difference checks).
    """
    coef = _coefficients(batch, coefficients)
    total = 0.0
    for task, groups in _groups_in_order(batch):
        acc = sum(_group_surrogate(g, variant, _rescored(g, policy)) for g in groups)
        total += batch.task_weights[task] * coef[task] * acc / len(groups)
    if variant.kl_beta > 0:
        if policy is None:
            raise ValueError("KL regularization needs the policy")
        kls = [policy.kl_to_reference(g.task, g.query) for g in batch.groups]
        total -= variant.kl_beta * float(np.mean(kls))
    return total


def token_gradient_weights(group: ResponseGroup, variant: ObjectiveVariant, new_logp,
                           ratio_nudge: float = 0.0) -> np.ndarray:
    """(G, L) coefficients c with dJ_group = sum c_{i,t} grad log pi(y_{i,t}), before task scaling."""
    adv = group.advantages
    log_r = new_logp - group.old_logp
    if variant.family == "gspo":
        seq = np.exp(log_r.mean(axis=1)) + ratio_nudge
        slope = f_derivative(variant, seq, adv) * seq
        per_tok = np.broadcast_to(slope[:, None], log_r.shape)
    else:
        r = np.exp(log_r) + ratio_nudge
        per_tok = f_derivative(variant, r, np.broadcast_to(adv[:, None], r.shape)) * r
    return per_tok * adv[:, None] / log_r.shape[1] / group.group_size


def objective_gradient(batch: Batch, variant: ObjectiveVariant,
                       coefficients: Optional[Mapping[str, float]],
                       policy: PolicyModel, ratio_nudge: float = 0.0) -> np.ndarray:
    """Analytic gradient of :func:`objective_value` with respect to ``policy.theta``.

    Sums f'(r) r grad log pi(y_t) A_hat over tokens with the 1/G, 1/|y_i|, task
    weight and coefficient scalings. GSPO uses the stop-gradient rule: each token
    gets f'(s_i) s_i grad log pi(y_t).
    """
    coef = _coefficients(batch, coefficients)
    grad = np.zeros(policy.layout.size)
    for task, groups in _groups_in_order(batch):
        scale = batch.task_weights[task] * coef[task] / len(groups)
        for g in groups:
            if not np.any(g.advantages):
                continue
            w = token_gradient_weights(g, variant, _rescored(g, policy), ratio_nudge)
            policy.accumulate_token_grads(grad, task, g.query, g.actions, scale * w)
    if variant.kl_beta > 0:
        weight = -variant.kl_beta / len(batch.groups)
        for g in batch.groups:
            policy.kl_grad(grad, g.task, g.query, weight)
    return grad

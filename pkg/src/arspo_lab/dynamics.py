"""Gradient-dynamics instrumentation: sensitivity profiles, the two-term rate
decomposition of d/dtheta (W * A_hat), and self/cross advantage analysis."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .envs import TaskEnv, query_capability
from .group_norm import (SIGMA_FLOOR, DegenerateGroupError, NormalizedGroup, normalize_group,
                         self_and_cross_terms)
from .objectives import (ObjectiveVariant, ResponseGroup, f_derivative, f_second_derivative)
from .policy import PolicyModel
from .rewards import (Exponential, Identity, NormalizedExponential, RewardMapping, map_reward,
                      map_reward_derivative)


class NonSmoothConfiguration(ValueError):
    """The rate decomposition needs a twice-differentiable f and a smooth mapping."""


@dataclass(frozen=True)
class SensitivityProfile:
    values: np.ndarray  # g'(x_i) / sigma
    mapping: str
    mu: float
    sigma: float

    @property
    def max_to_mean(self) -> float:
        # shifted mean: exactly the common value when all entries coincide
        low = float(self.values.min())
        mean = low + math.fsum(self.values - low) / len(self.values)
        return float(self.values.max()) / mean

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "mapping": self.mapping,
                "mu": self.mu, "sigma": self.sigma, "max_to_mean": self.max_to_mean}


@dataclass(frozen=True)
class RateDecomposition:
    term_1: float
    term_2: float
    total: float
    w: float
    advantage: float
    c_map: float
    c_stat: float
    c_task: float

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))

    def to_dict(self) -> dict:
        return asdict(self)


def sensitivity_profile(metrics, mapping: RewardMapping, sigma_floor: float = SIGMA_FLOOR) -> SensitivityProfile:
    x = np.asarray([float(m) for m in metrics])
    if len(x) < 2:
        raise ValueError("a group needs at least two responses")
    rewards = np.atleast_1d(map_reward(mapping, x))
    group = normalize_group(rewards, sigma_floor)
    if group.degenerate:
        raise DegenerateGroupError("mapped rewards are all equal")
    slope = np.atleast_1d(map_reward_derivative(mapping, x))
    return SensitivityProfile(slope / group.sigma, repr(mapping), group.mu, group.sigma)


def stat_factor(advantage: float, group_size: int) -> float:
    if group_size < 2:
        raise ValueError("group size must be >= 2")
    return (group_size - 1) - advantage ** 2


def dominance_ratio(x_i: float, x_j: float, alpha: float) -> float:
    return math.exp(alpha * (x_i - x_j))


def reward_gradients(metrics, mapping: RewardMapping, capability_slope: float) -> np.ndarray:
    """Directional derivatives A'_j = g'(x_j) * H' for responses sharing one capability slope."""
    return np.atleast_1d(map_reward_derivative(mapping, np.asarray(metrics, dtype=float))) * capability_slope


def total_advantage_derivative_report(group: NormalizedGroup, reward_grads) -> dict:
    """Self/cross split of dA_hat/dtheta and how strongly the best response's self term dominates."""
    self_term, cross_term = self_and_cross_terms(group, reward_grads)
    grads = np.asarray(reward_grads, dtype=float)
    best = int(np.argmax(group.raw))
    G, adv = group.size, group.advantages
    contrib = np.abs((1.0 + adv[best] * adv) * grads) / (G * group.sigma)
    contrib[best] = 0.0
    peak = contrib.max()
    ratio = abs(self_term[best]) / peak if peak > 0 else math.inf
    return {"self_term": self_term, "cross_term": cross_term, "dominance_ratio": ratio,
            "best_index": best}


def _check_smooth(mapping: RewardMapping, variant: ObjectiveVariant):
    if not variant.smooth:
        raise NonSmoothConfiguration(f"{variant.family} has clipped branches; use the SAPO family")
    if not isinstance(mapping, (Identity, Exponential, NormalizedExponential)):
        raise NonSmoothConfiguration(f"mapping {mapping!r} is not smooth in the metric")


def focal_advantage(group: ResponseGroup, response_index: int, mapping: RewardMapping,
                    capability: float) -> NormalizedGroup:
    """Normalize the group with response i's reward tied to the capability and peers held fixed."""
    rewards = np.atleast_1d(map_reward(mapping, np.asarray(group.metrics, dtype=float))).copy()
    rewards[response_index] = map_reward(mapping, capability)
    return normalize_group(rewards)


def rate_decomposition(env: TaskEnv, policy: PolicyModel, direction, group: ResponseGroup,
                       response_index: int, token_index: int, mapping: RewardMapping,
                       variant: ObjectiveVariant) -> RateDecomposition:
    """Directional form of d/dtheta (W_{i,t} A_hat_i) = W' A_hat + W g'/(G sigma) ((G-1) - A_hat^2) H'.

    Along ``direction`` v, W is the directional derivative of f(r_{i,t}). The focal
    response's metric is the expected capability H_k(theta, q) while the other
    responses keep their sampled metrics, so the advantage moves only through the
    self path and the identity is exact.
    """
    _check_smooth(mapping, variant)
    v = np.asarray(direction, dtype=float)
    q, i, t = group.query, response_index, token_index
    H, grad_H = query_capability(policy, env, q)
    c_task = float(grad_H @ v)
    norm = focal_advantage(group, i, mapping, H)
    if norm.degenerate:
        raise DegenerateGroupError("analysis group has zero reward spread")
    G, adv = norm.size, float(norm.advantages[i])

    block = policy.layout[env.name]
    v_tok = v[block.slice].reshape(block.shape)[q, t]
    p = policy.probs(env.name)[q, t]
    a = int(group.actions[i, t])
    tau = policy.temperature
    mean_v = float(p @ v_tok)
    dlogp = (v_tok[a] - mean_v) / tau
    d2logp = -(float(p @ v_tok ** 2) - mean_v ** 2) / tau ** 2

    new_logp = float(np.log(p[a]))
    r = math.exp(new_logp - float(group.old_logp[i, t]))
    f1 = float(f_derivative(variant, r, adv))
    f2 = float(f_second_derivative(variant, r, adv))
    w = f1 * r * dlogp
    dr = r * dlogp
    w_prime = f2 * dr * r * dlogp + f1 * dr * dlogp + f1 * r * d2logp

    c_map = float(map_reward_derivative(mapping, H)) / (G * norm.sigma)
    c_stat = stat_factor(adv, G)
    term_1 = w_prime * adv
    term_2 = w * c_map * c_stat * c_task
    return RateDecomposition(term_1, term_2, term_1 + term_2, w, adv, c_map, c_stat, c_task)

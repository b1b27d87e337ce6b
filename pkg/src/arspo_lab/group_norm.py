"""Group-relative advantage normalization and its exact Jacobian.

Uses the population standard deviation (divide by G); the closed-form
derivatives below only hold in that form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-8


class DegenerateGroupError(ArithmeticError):
    """Group rewards have (near) zero spread, so derivatives are undefined."""


@dataclass(frozen=True)
class NormalizedGroup:
    raw: np.ndarray
    advantages: np.ndarray
    mu: float
    sigma: float
    degenerate: bool

    @property
    def size(self) -> int:
        return len(self.raw)


def normalize_group(rewards, sigma_floor: float = SIGMA_FLOOR) -> NormalizedGroup:
    raw = np.array(rewards, dtype=float)
    if raw.ndim != 1 or len(raw) < 2:
        raise ValueError("a group needs at least two rewards")
    mu = float(raw.mean())
    centered = raw - mu
    sigma = float(np.sqrt(np.mean(centered ** 2)))
    if sigma < sigma_floor:
        return NormalizedGroup(raw, np.zeros_like(raw), mu, sigma, True)
    return NormalizedGroup(raw, centered / sigma, mu, sigma, False)


def _require_informative(group: NormalizedGroup):
    if group.degenerate:
        raise DegenerateGroupError(f"sigma={group.sigma:.3g} below floor")


def advantage_jacobian(group: NormalizedGroup) -> np.ndarray:
    """J[i, j] = dA_hat_i / dA_j.

    Diagonal: ((G-1) - A_hat_i^2) / (G sigma); off-diagonal: -(1 + A_hat_i A_hat_j) / (G sigma).
    """
    _require_informative(group)
    G, adv = group.size, group.advantages
    jac = -(1.0 + np.outer(adv, adv))
    np.fill_diagonal(jac, (G - 1) - adv ** 2)
    return jac / (G * group.sigma)


def self_and_cross_terms(group: NormalizedGroup, reward_grads) -> tuple[np.ndarray, np.ndarray]:
    """Split J @ A' into the self part and the (signed) cross part, per response."""
    _require_informative(group)
    G, adv = group.size, group.advantages
    grads = np.asarray(reward_grads, dtype=float)
    scale = 1.0 / (G * group.sigma)
    self_term = scale * ((G - 1) - adv ** 2) * grads
    # sum_{j != i} (1 + a_i a_j) A'_j
    total = grads.sum()
    weighted = adv @ grads
    cross_sum = (total - grads) + adv * (weighted - adv * grads)
    return self_term, -scale * cross_sum


def directional_advantage_derivative(group: NormalizedGroup, reward_grads) -> np.ndarray:
    """dA_hat_i/dtheta along a direction, given the rewards' directional derivatives A'_j."""
    self_term, cross_term = self_and_cross_terms(group, reward_grads)
    return self_term + cross_term

"""Enumerable toy task environments, exact expected capability, and group sampling.

Every environment is a factored categorical bandit: a response is L tokens,
each drawn from its own softmax over ``vocab`` symbols for the query. The
metric of every joint response is tabulated up front, so expectations and
their gradients are exact sums rather than estimates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import metrics as M
from .group_norm import SIGMA_FLOOR, normalize_group
from .objectives import ResponseGroup
from .policy import PolicyModel
from .rewards import (Identity, Relaxed, RewardMapping, format_reward, map_reward,
                      repetition_penalty, total_reward)

MAX_JOINT_OUTCOMES = 10 ** 6

ENV_KINDS = ("classification-bandit", "interval-grid-localization",
             "box-grid-localization", "span-selection")

# environment kind -> task kind used for filter gates and tau_high defaults
TASK_KIND = {
    "classification-bandit": "classification",
    "box-grid-localization": "image",
    "span-selection": "text",
    "interval-grid-localization": "video",
}


class ActionSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class TaskEnv:
    name: str
    kind: str
    n_contexts: int
    positions: int
    vocab: int
    metric_kind: str
    targets: tuple
    metric_table: np.ndarray  # (contexts, vocab ** positions)

    def __post_init__(self):
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.vocab < 1 or self.positions < 1:
            raise ValueError("action space must be non-empty")
        expected = (self.n_contexts, self.vocab ** self.positions)
        if self.metric_table.shape != expected:
            raise ValueError(f"metric table shape {self.metric_table.shape}, expected {expected}")
        if np.any(self.metric_table < 0) or np.any(self.metric_table > 1):
            raise ValueError("metric values must lie in [0, 1]")

    @property
    def task_kind(self) -> str:
        return TASK_KIND[self.kind]

    @property
    def joint_shape(self) -> tuple[int, ...]:
        return (self.vocab,) * self.positions

    def joint_index(self, actions: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(actions).T), self.joint_shape)

    def metric(self, query: int, actions: np.ndarray) -> np.ndarray:
        return self.metric_table[query, self.joint_index(actions)]


def _check_size(vocab: int, positions: int):
    if vocab ** positions > MAX_JOINT_OUTCOMES:
        raise ActionSpaceTooLarge(
            f"{vocab}^{positions} joint outcomes exceeds the enumeration limit {MAX_JOINT_OUTCOMES}")


def _tabulate(vocab: int, positions: int, targets, score) -> np.ndarray:
    _check_size(vocab, positions)
    joint = list(itertools.product(range(vocab), repeat=positions))
    return np.array([[score(tokens, target) for tokens in joint] for target in targets])


def classification_bandit(name: str, classes: int = 2, n_contexts: int = 1, seed: int = 0,
                          labels=None) -> TaskEnv:
    rng = np.random.default_rng(seed)
    labels = tuple(int(x) for x in (labels if labels is not None
                                    else rng.integers(classes, size=n_contexts)))
    table = _tabulate(classes, 1, labels,
                      lambda tok, gt: M.accuracy_indicator(tok[0], gt).value)
    return TaskEnv(name, "classification-bandit", len(labels), 1, classes, "accuracy", labels, table)


def _cells_to_interval(a: int, b: int) -> M.Interval:
    return M.Interval(min(a, b), max(a, b) + 1)


def interval_grid(name: str, resolution: int = 64, n_contexts: int = 1, target_width: int = 2,
                  seed: int = 0, targets=None) -> TaskEnv:
    """Temporal localization on a grid of ``resolution`` cells.

    A response is two tokens (start cell, end cell); the predicted segment spans
    both cells inclusive. Finer grids leave a smaller share of responses with
    non-zero tIoU, which is the difficulty knob.
    """
    rng = np.random.default_rng(seed)
    if targets is None:
        starts = rng.integers(0, resolution - target_width + 1, size=n_contexts)
        targets = [M.Interval(int(s), int(s) + target_width) for s in starts]
    targets = tuple(targets)
    table = _tabulate(resolution, 2, targets,
                      lambda tok, gt: M.tiou_interval(_cells_to_interval(*tok), gt).value)
    return TaskEnv(name, "interval-grid-localization", len(targets), 2, resolution, "tiou", targets, table)


def interval_candidates(name: str, candidates, targets) -> TaskEnv:
    """Single-token temporal localization: pick one of a fixed list of candidate segments."""
    candidates, targets = tuple(candidates), tuple(targets)
    table = _tabulate(len(candidates), 1, targets,
                      lambda tok, gt: M.tiou_interval(candidates[tok[0]], gt).value)
    return TaskEnv(name, "interval-grid-localization", len(targets), 1, len(candidates), "tiou",
                   targets, table)


def box_grid(name: str, resolution: int = 8, n_contexts: int = 1, target_size: int = 2,
             seed: int = 0, targets=None) -> TaskEnv:
    """Image localization: four tokens (x_a, x_b, y_a, y_b) on a resolution x resolution grid."""
    rng = np.random.default_rng(seed)
    if targets is None:
        corners = rng.integers(0, resolution - target_size + 1, size=(n_contexts, 2))
        targets = [M.Box2D(int(x), int(y), int(x) + target_size, int(y) + target_size)
                   for x, y in corners]
    targets = tuple(targets)

    def score(tok, gt):
        xa, xb, ya, yb = tok
        box = M.Box2D(min(xa, xb), min(ya, yb), max(xa, xb) + 1, max(ya, yb) + 1)
        return M.iou_box(box, gt).value

    table = _tabulate(resolution, 4, targets, score)
    return TaskEnv(name, "box-grid-localization", len(targets), 4, resolution, "iou", targets, table)


def span_selection(name: str, vocab: int = 8, picks: int = 3, n_contexts: int = 1, gt_size: int = 3,
                   seed: int = 0, targets=None) -> TaskEnv:
    """Text localization: ``picks`` tokens name text positions; the predicted span is their set."""
    rng = np.random.default_rng(seed)
    if targets is None:
        targets = [frozenset(int(i) for i in rng.choice(vocab, size=gt_size, replace=False))
                   for _ in range(n_contexts)]
    targets = tuple(frozenset(t) for t in targets)
    table = _tabulate(vocab, picks, targets, lambda tok, gt: M.span_f1(tok, gt).value)
    return TaskEnv(name, "span-selection", len(targets), picks, vocab, "f1", targets, table)


_BUILDERS = {
    "classification-bandit": classification_bandit,
    "interval-grid-localization": interval_grid,
    "box-grid-localization": box_grid,
    "span-selection": span_selection,
}


def make_env(name: str, kind: str, **params) -> TaskEnv:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown environment kind {kind!r}")
    return _BUILDERS[kind](name, **params)


def _joint_probs(policy: PolicyModel, env: TaskEnv, theta=None) -> np.ndarray:
    """(contexts, vocab ** positions) joint response probabilities."""
    p = policy.probs(env.name, theta)
    joint = p[:, 0, :]
    for t in range(1, env.positions):
        joint = (joint[:, :, None] * p[:, t, None, :]).reshape(env.n_contexts, -1)
    return joint


def capability_per_context(policy: PolicyModel, env: TaskEnv, theta=None):
    """Exact H_k(theta, q) for every context and its gradient block (contexts, positions, vocab)."""
    _check_size(env.vocab, env.positions)
    p = policy.probs(env.name, theta)
    joint = _joint_probs(policy, env, theta)
    weighted = (joint * env.metric_table).reshape((env.n_contexts,) + env.joint_shape)
    H = weighted.reshape(env.n_contexts, -1).sum(axis=1)
    grad = np.empty((env.n_contexts, env.positions, env.vocab))
    axes = set(range(1, env.positions + 1))
    for t in range(env.positions):
        # sum over y with y_t = a of P(y) M(y)
        marginal = weighted.sum(axis=tuple(sorted(axes - {t + 1})))
        grad[:, t, :] = (marginal - p[:, t, :] * H[:, None]) / policy.temperature
    return H, grad


def expected_capability(policy: PolicyModel, env: TaskEnv, theta=None) -> tuple[float, np.ndarray]:
    """Context-averaged expected metric and its gradient over the full parameter vector."""
    H, grad_block = capability_per_context(policy, env, theta)
    grad = np.zeros(policy.layout.size)
    grad[policy.layout[env.name].slice] = grad_block.ravel() / env.n_contexts
    return float(H.mean()), grad


def query_capability(policy: PolicyModel, env: TaskEnv, query: int, theta=None) -> tuple[float, np.ndarray]:
    """H_k(theta, q) at a single context and its full-length gradient."""
    H, grad_block = capability_per_context(policy, env, theta)
    grad = np.zeros(policy.layout.size)
    block = policy.layout[env.name]
    grad[block.slice].reshape(block.shape)[query] = grad_block[query]
    return float(H[query]), grad


def uniform_capability(env: TaskEnv) -> float:
    """Expected metric under the uniform policy (the initial H at zero logits)."""
    return float(env.metric_table.mean())


def confidence_proxy(policy: PolicyModel, env: TaskEnv, query: int, theta=None) -> float:
    """Probability the policy assigns to the ground-truth label (classification only)."""
    if env.kind != "classification-bandit":
        raise ValueError("the confidence proxy is defined for classification environments")
    return float(policy.probs(env.name, theta)[query, 0, env.targets[query]])


def render_response(tokens) -> str:
    return "<think>" + " ".join(map(str, tokens)) + "</think><answer>" + str(list(tokens)) + "</answer>"


def sample_group(policy: PolicyModel, env: TaskEnv, query: int, group_size: int = 8, rng=0,
                 mapping: RewardMapping = Identity(), sigma_floor: float = SIGMA_FLOOR) -> ResponseGroup:
    """Draw G responses from the old-policy snapshot and score them.

    ``rng`` is an integer seed (or anything ``np.random.default_rng`` accepts).
    """
    if group_size < 2:
        raise ValueError("group size must be >= 2")
    gen = np.random.default_rng(rng)
    old = policy.old_snapshot if policy.old_snapshot is not None else policy.theta
    p_old = policy.probs(env.name, old)[query]
    cdf = np.cumsum(p_old, axis=-1)
    u = gen.random((group_size, env.positions))
    actions = np.empty((group_size, env.positions), dtype=np.int64)
    for t in range(env.positions):
        actions[:, t] = np.minimum(np.searchsorted(cdf[t], u[:, t] * cdf[t, -1], side="right"),
                                   env.vocab - 1)
    old_logp = policy.token_log_probs(env.name, query, actions, old)
    new_logp = policy.token_log_probs(env.name, query, actions)
    x = env.metric(query, actions)
    proxy = confidence_proxy(policy, env, query, old) if isinstance(mapping, Relaxed) else 0.0
    r_task = np.atleast_1d(map_reward(mapping, x, proxy))
    breakdowns = tuple(
        total_reward(r_task[i], format_reward(render_response(actions[i])),
                     repetition_penalty(actions[i].tolist()))
        for i in range(group_size))
    normalized = normalize_group([b.total for b in breakdowns], sigma_floor)
    return ResponseGroup(env.name, query, actions, old_logp, new_logp, x, breakdowns, normalized)

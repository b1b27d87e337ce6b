"""Toy softmax policy: independent categorical logits per (task, context, position)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Block:
    offset: int
    contexts: int
    positions: int
    vocab: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.contexts, self.positions, self.vocab)

    @property
    def size(self) -> int:
        return self.contexts * self.positions * self.vocab

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


class ParamLayout:
    """Maps each task name to its contiguous slice of the flat parameter vector."""

    def __init__(self, shapes: dict[str, tuple[int, int, int]]):
        self.blocks: dict[str, Block] = {}
        offset = 0
        for name, (c, l, v) in shapes.items():
            self.blocks[name] = Block(offset, c, l, v)
            offset += c * l * v
        self.size = offset

    def __getitem__(self, task: str) -> Block:
        return self.blocks[task]

    @property
    def tasks(self) -> list[str]:
        return list(self.blocks)

    @classmethod
    def for_envs(cls, envs) -> "ParamLayout":
        return cls({e.name: (e.n_contexts, e.positions, e.vocab) for e in envs})


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PolicyModel:
    layout: ParamLayout
    theta: np.ndarray
    temperature: float = 1.0
    old_snapshot: np.ndarray | None = None
    reference: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.layout.size,):
            raise ValueError(f"theta has shape {self.theta.shape}, layout needs ({self.layout.size},)")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("non-finite policy parameters")

    @classmethod
    def init(cls, layout: ParamLayout, scale: float = 0.0, seed: int = 0, temperature: float = 1.0):
        rng = np.random.default_rng(seed)
        theta = scale * rng.standard_normal(layout.size)
        policy = cls(layout, theta, temperature)
        policy.reference = _frozen(theta)
        policy.snapshot()
        return policy

    def snapshot(self):
        """Freeze the current parameters as the behaviour (old) policy."""
        self.old_snapshot = _frozen(self.theta)

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.layout, self.theta.copy(), self.temperature,
                           self.old_snapshot, self.reference)

    def with_theta(self, theta) -> "PolicyModel":
        return PolicyModel(self.layout, np.asarray(theta, dtype=float).copy(), self.temperature,
                           self.old_snapshot, self.reference)

    def logits(self, task: str, theta=None) -> np.ndarray:
        theta = self.theta if theta is None else theta
        block = self.layout[task]
        return theta[block.slice].reshape(block.shape) / self.temperature

    def log_probs(self, task: str, theta=None) -> np.ndarray:
        """(contexts, positions, vocab) log-probabilities."""
        return _log_softmax(self.logits(task, theta))

    def probs(self, task: str, theta=None) -> np.ndarray:
        return np.exp(self.log_probs(task, theta))

    def token_log_probs(self, task: str, query: int, actions: np.ndarray, theta=None) -> np.ndarray:
        """Per-token log pi(y_t | q) for a (G, L) action array."""
        lp = self.log_probs(task, theta)[query]
        positions = np.arange(lp.shape[0])
        return lp[positions[None, :], actions]

    def accumulate_token_grads(self, out: np.ndarray, task: str, query: int,
                               actions: np.ndarray, coef: np.ndarray):
        """out += sum_{i,t} coef[i, t] * grad log pi(y_{i,t} | q).

        For softmax logits scaled by 1/temperature, grad log pi(a) = (e_a - p) / temperature
        on the (query, position) block and zero elsewhere.
        """
        block = self.layout[task]
        p = self.probs(task)[query]
        view = out[block.slice].reshape(block.shape)[query]
        for t in range(block.positions):
            hits = np.bincount(actions[:, t], weights=coef[:, t], minlength=block.vocab)
            view[t] += (hits - p[t] * coef[:, t].sum()) / self.temperature

    def kl_to_reference(self, task: str, query: int, theta=None) -> float:
        """Exact KL(pi_theta || pi_ref) of the factored joint at one context."""
        if self.reference is None:
            raise ValueError("policy has no reference parameters")
        lp = self.log_probs(task, theta)[query]
        lr = self.log_probs(task, self.reference)[query]
        return float(np.sum(np.exp(lp) * (lp - lr)))

    def kl_grad(self, out: np.ndarray, task: str, query: int, weight: float):
        """out += weight * grad KL(pi_theta || pi_ref) at one context."""
        block = self.layout[task]
        lp = self.log_probs(task)[query]
        lr = self.log_probs(task, self.reference)[query]
        p = np.exp(lp)
        kl_t = np.sum(p * (lp - lr), axis=-1, keepdims=True)
        view = out[block.slice].reshape(block.shape)[query]
        view += weight * p * ((lp - lr) - kl_t) / self.temperature


def _frozen(theta: np.ndarray) -> np.ndarray:
    snap = np.array(theta, dtype=float, copy=True)
    snap.flags.writeable = False
    return snap

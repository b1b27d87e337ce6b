"""Reward mappings g(x) and the composite reward R = R_task + R_fmt + R_rep."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .metrics import MetricValue

FORMAT_BONUS = 0.2
NGRAM_N = 3
LAMBDA_PEN = -1.0
DEFAULT_ALPHA = 3.0

_FORMAT_RE = re.compile(r"<think>.*</think><answer>.*</answer>", re.DOTALL)


class DomainError(ValueError):
    """Metric outside the domain of a reward mapping."""


class SingularityError(ArithmeticError):
    """Derivative requested where the mapping is not differentiable."""


@dataclass(frozen=True)
class Identity:
    pass


@dataclass(frozen=True)
class Exponential:
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("Exponential mapping needs a > 0")


@dataclass(frozen=True)
class NormalizedExponential:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("NormalizedExponential mapping needs alpha > 0")


@dataclass(frozen=True)
class Step:
    tau: float

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("Step threshold must lie in [0, 1]")


@dataclass(frozen=True)
class Relaxed:
    lam: float
    inner: "RewardMapping"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("relaxation weight must be non-negative")
        if isinstance(self.inner, Relaxed):
            raise ValueError("Relaxed mappings cannot nest")


RewardMapping = Union[Identity, Exponential, NormalizedExponential, Step, Relaxed]

Number = Union[float, MetricValue, np.ndarray]


def _as_array(x):
    if isinstance(x, MetricValue):
        x = x.value
    return np.asarray(x, dtype=float)


def _out(y, scalar):
    return float(y) if scalar else y


def _check_ratio(x: np.ndarray):
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(np.isnan(x)):
        raise DomainError(f"metric outside [0, 1]: {x}")


def relax_metric(x, x_proxy, lam: float):
    """x + lam * x_proxy: densifies a discrete metric with a continuous proxy."""
    return x + lam * x_proxy


def _apply(g, x: np.ndarray) -> np.ndarray:
    if isinstance(g, Identity):
        return x.copy()
    if isinstance(g, Exponential):
        return np.exp(g.a * x)
    if isinstance(g, NormalizedExponential):
        return np.expm1(g.alpha * x) / math.expm1(g.alpha)
    if isinstance(g, Step):
        return (x >= g.tau).astype(float)
    raise TypeError(f"not a reward mapping: {g!r}")


def _slope(g, x: np.ndarray) -> np.ndarray:
    if isinstance(g, Identity):
        return np.ones_like(x)
    if isinstance(g, Exponential):
        return g.a * np.exp(g.a * x)
    if isinstance(g, NormalizedExponential):
        return g.alpha * np.exp(g.alpha * x) / math.expm1(g.alpha)
    if isinstance(g, Step):
        if np.any(x == g.tau):
            raise SingularityError(f"step mapping is not differentiable at tau={g.tau}")
        return np.zeros_like(x)
    raise TypeError(f"not a reward mapping: {g!r}")


def map_reward(g: RewardMapping, x: Number, proxy: Number = 0.0):
    """Raw reward A = g(x).

    ``proxy`` is only read by :class:`Relaxed`, which feeds ``x + lam * proxy``
    to its inner mapping. Ratio mappings reject metrics outside [0, 1].
    """
    scalar = np.ndim(x) == 0 and np.ndim(proxy) == 0
    x = _as_array(x)
    if isinstance(g, Relaxed):
        _check_ratio(x)
        return _out(_apply(g.inner, relax_metric(x, _as_array(proxy), g.lam)), scalar)
    if not isinstance(g, Identity):
        _check_ratio(x)
    return _out(_apply(g, x), scalar)


def map_reward_derivative(g: RewardMapping, x: Number, proxy: Number = 0.0):
    """dA/dx for the mapping (for Relaxed, the slope of the inner mapping at the relaxed metric)."""
    scalar = np.ndim(x) == 0 and np.ndim(proxy) == 0
    x = _as_array(x)
    if isinstance(g, Relaxed):
        return _out(_slope(g.inner, relax_metric(x, _as_array(proxy), g.lam)), scalar)
    return _out(_slope(g, x), scalar)


def is_smooth(g: RewardMapping) -> bool:
    if isinstance(g, Relaxed):
        return is_smooth(g.inner)
    return not isinstance(g, Step)


def format_reward(text: str, bonus: float = FORMAT_BONUS) -> float:
    """``bonus`` iff the whole text is ``<think>...</think><answer>...</answer>``."""
    return bonus if _FORMAT_RE.fullmatch(text) else 0.0


def repetition_penalty(tokens: Sequence, n: int = NGRAM_N, lambda_pen: float = LAMBDA_PEN) -> float:
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    tokens = list(tokens)
    total = len(tokens) - n + 1
    if total <= 0:
        return 0.0
    unique = len({tuple(tokens[i:i + n]) for i in range(total)})
    return lambda_pen * (1.0 - unique / total)


@dataclass(frozen=True)
class RewardBreakdown:
    r_task: float
    r_fmt: float
    r_rep: float
    total: float


def total_reward(r_task: float, r_fmt: float, r_rep: float) -> RewardBreakdown:
    if r_rep > 0:
        raise ValueError("repetition penalty must be <= 0")
    return RewardBreakdown(float(r_task), float(r_fmt), float(r_rep), r_task + r_fmt + r_rep)


def mapping_from_dict(fields: dict) -> RewardMapping:
    """Build a mapping from a config dict like ``{"kind": "normalized_exponential", "alpha": 3}``."""
    fields = dict(fields)
    kind = fields.pop("kind")
    if kind == "identity":
        return Identity(**fields)
    if kind == "exponential":
        return Exponential(**fields)
    if kind == "normalized_exponential":
        return NormalizedExponential(**fields)
    if kind == "step":
        return Step(**fields)
    if kind == "relaxed":
        return Relaxed(lam=fields["lam"], inner=mapping_from_dict(fields["inner"]))
    raise ValueError(f"unknown mapping kind {kind!r}")

"""Task metrics (accuracy, box IoU, temporal IoU, span F1) and data-filter gates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

METRIC_KINDS = ("accuracy", "iou", "f1", "tiou")

# task kind -> metric kind it is scored with
TASK_METRIC = {
    "classification": "accuracy",
    "image": "iou",
    "text": "f1",
    "video": "tiou",
}

DEFAULT_FILTER_THRESHOLDS = {
    "classification": 1.0,
    "image": 0.75,
    "text": 0.75,
    "video": 0.75,
}


@dataclass(frozen=True)
class Box2D:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"malformed box {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Interval:
    start: float
    end: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"malformed interval {self}")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class MetricValue:
    value: float
    kind: str

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value {self.value} outside [0, 1]")

    def __float__(self) -> float:
        return float(self.value)


def iou_box(a: Box2D, b: Box2D) -> MetricValue:
    iw = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    ih = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return MetricValue(0.0, "iou")
    return MetricValue(min(1.0, inter / union), "iou")


def tiou_interval(a: Interval, b: Interval) -> MetricValue:
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.length + b.length - inter
    if union <= 0.0:
        return MetricValue(0.0, "tiou")
    return MetricValue(min(1.0, inter / union), "tiou")


def span_f1(pred: Iterable[int], gt: Iterable[int]) -> MetricValue:
    """F1 between predicted and ground-truth token index sets.

    Indices are opaque integers; duplicates collapse (set semantics).
    """
    pred, gt = set(pred), set(gt)
    if any(i < 0 for i in pred | gt):
        raise ValueError("token indices must be non-negative")
    hit = len(pred & gt)
    if not pred or not gt or hit == 0:
        return MetricValue(0.0, "f1")
    precision = hit / len(pred)
    recall = hit / len(gt)
    return MetricValue(2 * precision * recall / (precision + recall), "f1")


def accuracy_indicator(pred, gt) -> MetricValue:
    return MetricValue(1.0 if pred == gt else 0.0, "accuracy")


def filter_gate(metric: MetricValue, task: str, thresholds: dict | None = None) -> bool:
    """Retain/reject decision for a generated sample.

    Classification requires an exact hit; localization tasks use ``>=`` against
    the task threshold (0.75 by default).
    """
    if task not in TASK_METRIC:
        raise ValueError(f"unknown task kind {task!r}")
    if TASK_METRIC[task] != metric.kind:
        raise ValueError(f"metric kind {metric.kind!r} does not match task {task!r}")
    thresholds = {**DEFAULT_FILTER_THRESHOLDS, **(thresholds or {})}
    return metric.value >= thresholds[task]

import math

import pytest
from hypothesis import given, strategies as st

from arspo_lab.metrics import (Box2D, Interval, MetricValue, accuracy_indicator, filter_gate,
                               iou_box, span_f1, tiou_interval)

from oracles import box_iou_cells, interval_iou_exact, span_f1_count


def test_box_iou_examples():
    assert iou_box(Box2D(0, 0, 2, 2), Box2D(0, 0, 2, 2)).value == 1.0
    assert iou_box(Box2D(0, 0, 1, 1), Box2D(2, 2, 3, 3)).value == 0.0
    assert iou_box(Box2D(0, 0, 2, 2), Box2D(1, 1, 3, 3)).value == pytest.approx(1 / 7, abs=1e-15)


def test_interval_examples():
    assert tiou_interval(Interval(0, 10), Interval(0, 10)).value == 1.0
    assert tiou_interval(Interval(0, 10), Interval(5, 15)).value == pytest.approx(1 / 3, abs=1e-15)
    assert tiou_interval(Interval(0, 1), Interval(2, 3)).value == 0.0


def test_span_f1_examples():
    assert span_f1({1, 2}, {1, 2}).value == 1.0
    assert span_f1({1, 2, 3}, {2, 3, 4}).value == pytest.approx(2 / 3, abs=1e-15)
    assert span_f1(set(), {1}).value == 0.0


def test_accuracy_examples():
    assert accuracy_indicator(0, 0).value == 1
    assert accuracy_indicator(1, 0).value == 0
    assert accuracy_indicator(7, 7).value == 1


def test_filter_gate_examples():
    assert filter_gate(MetricValue(0.80, "iou"), "image")
    assert not filter_gate(MetricValue(0.74, "iou"), "image")
    assert filter_gate(MetricValue(1.0, "accuracy"), "classification")
    assert filter_gate(MetricValue(0.75, "tiou"), "video")
    assert not filter_gate(MetricValue(0.0, "accuracy"), "classification")


def test_filter_gate_rejects_mismatched_kind():
    with pytest.raises(ValueError):
        filter_gate(MetricValue(0.9, "f1"), "image")
    with pytest.raises(ValueError):
        filter_gate(MetricValue(0.9, "f1"), "audio")


def test_filter_gate_threshold_override():
    assert filter_gate(MetricValue(0.6, "f1"), "text", {"text": 0.5})


def test_degenerate_geometry_scores_zero():
    assert iou_box(Box2D(1, 1, 1, 1), Box2D(1, 1, 1, 1)).value == 0.0
    assert iou_box(Box2D(0, 0, 0, 5), Box2D(0, 0, 0, 5)).value == 0.0
    assert tiou_interval(Interval(3, 3), Interval(3, 3)).value == 0.0


def test_invalid_operands():
    with pytest.raises(ValueError):
        Box2D(2, 0, 1, 1)
    with pytest.raises(ValueError):
        Interval(5, 4)
    with pytest.raises(ValueError):
        MetricValue(1.2, "iou")
    with pytest.raises(ValueError):
        MetricValue(0.5, "bleu")
    with pytest.raises(ValueError):
        span_f1({-1}, {1})


int_boxes = st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8), st.integers(0, 8)).map(
    lambda t: (min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3])))
intervals = st.tuples(st.floats(-50, 50), st.floats(-50, 50)).map(lambda t: (min(t), max(t)))


@given(int_boxes, int_boxes)
def test_box_iou_matches_cell_count(a, b):
    got = iou_box(Box2D(*a), Box2D(*b)).value
    assert got == pytest.approx(float(box_iou_cells(a, b)), abs=1e-12)


@given(int_boxes, int_boxes)
def test_box_iou_symmetric(a, b):
    assert iou_box(Box2D(*a), Box2D(*b)).value == iou_box(Box2D(*b), Box2D(*a)).value


@given(intervals, intervals)
def test_interval_iou_symmetric_and_in_range(a, b):
    ab = tiou_interval(Interval(*a), Interval(*b)).value
    assert ab == tiou_interval(Interval(*b), Interval(*a)).value
    assert 0.0 <= ab <= 1.0


@given(intervals, intervals)
def test_interval_iou_matches_exact_rationals(a, b):
    got = tiou_interval(Interval(*a), Interval(*b)).value
    assert got == pytest.approx(float(interval_iou_exact(a, b)), abs=1e-9)


@given(st.sets(st.integers(0, 40), max_size=20), st.sets(st.integers(0, 40), max_size=20))
def test_span_f1_matches_brute_force(pred, gt):
    got = span_f1(pred, gt).value
    assert got == pytest.approx(float(span_f1_count(sorted(pred), sorted(gt))), abs=1e-15)
    assert 0.0 <= got <= 1.0


@given(st.sampled_from([("image", "iou"), ("text", "f1"), ("video", "tiou"),
                        ("classification", "accuracy")]),
       st.floats(0, 1), st.floats(0, 1))
def test_filter_gate_monotone(task_kind, lo, hi):
    task, kind = task_kind
    lo, hi = min(lo, hi), max(lo, hi)
    if filter_gate(MetricValue(lo, kind), task):
        assert filter_gate(MetricValue(hi, kind), task)

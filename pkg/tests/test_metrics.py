import numpy as np
import pytest

from mlink.metrics import (
    average_precision_11pt,
    counting_accuracy,
    evaluate_performance,
    mean_average_precision,
    mean_wer,
    word_error_rate,
)
from mlink.registry import TaskMetric
from test_kernels import edit_distance_oracle


def rect_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def test_wer_example():
    # "a b c" -> "a x c"
    assert word_error_rate([4, 5, 6], [4, 7, 6]) == pytest.approx(1 / 3)
    assert edit_distance_oracle((4, 5, 6), (4, 7, 6)) == 1


def test_wer_empty_reference():
    with pytest.raises(ValueError):
        word_error_rate([], [4])
    assert mean_wer([[4], []], [[4], []]) == (0.0, 1)


def test_iou_identical_and_disjoint():
    m = TaskMetric("IoU")
    box = [[0.1, 0.2, 0.5, 0.9]]
    assert evaluate_performance(np.array(box), np.array(box), m).p == 1.0
    assert evaluate_performance(np.array([[0, 0, 1, 1.0]]), np.array([[2, 2, 3, 3.0]]), m).p == 0.0


def test_counting_boundary():
    assert counting_accuracy([3.4], [3.0]) == 1.0
    assert counting_accuracy([3.6], [3.0]) == 0.0
    assert counting_accuracy([3.5], [3.0]) == 0.0  # a tie counts as wrong


def test_ap_perfect_ranking():
    assert average_precision_11pt([0.9, 0.8, 0.1], [True, True, False]) == pytest.approx(1.0)


def test_ap_worst_ranking_by_hand():
    # one positive ranked last of three: precision at recall 1 is 1/3
    assert average_precision_11pt([0.9, 0.8, 0.1], [False, False, True]) == pytest.approx(1 / 3)


def test_map_skips_classes_without_positives():
    pred = np.array([[0.9, 0.2], [0.1, 0.3]])
    target = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert mean_average_precision(pred, target) == pytest.approx(1.0)


def test_mae_normalized_by_range():
    r = evaluate_performance(np.array([[1.0], [3.0]]), np.array([[2.0], [3.0]]), TaskMetric("MAE", range=4.0))
    assert r.raw_metric == 0.5 and r.p == pytest.approx(1 - 0.5 / 4)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        evaluate_performance(np.zeros((2, 2)), np.zeros((2, 3)), TaskMetric("accuracy"))

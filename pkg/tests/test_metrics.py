from fractions import Fraction

import numpy as np
import pytest

from emoanchor.metrics import compute_metrics, confusion_matrix, report_from_confusion


def fraction_oracle(matrix):
    """Direct precision/recall/F1 arithmetic in exact rationals."""
    matrix = [[Fraction(int(v)) for v in row] for row in matrix]
    n = len(matrix)
    support = [sum(row) for row in matrix]
    predicted = [sum(matrix[r][c] for r in range(n)) for c in range(n)]
    total = sum(support)
    acc = sum(matrix[i][i] for i in range(n)) / total
    f1s, recalls = [], []
    for c in range(n):
        recall = matrix[c][c] / support[c] if support[c] else Fraction(0)
        precision = matrix[c][c] / predicted[c] if predicted[c] else Fraction(0)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
        recalls.append(recall)
        f1s.append(f1)
    wf1 = sum(f1s[c] * support[c] for c in range(n)) / total
    return [float(r) for r in recalls], [float(f) for f in f1s], float(acc), float(wf1)


# Expected values frozen from fraction_oracle:
#   [[2,1],[0,3]]            -> recalls (2/3, 1), F1 (0.8, 6/7), ACC 5/6, wF1 0.8285714285714286
#   [[5,2,0],[1,3,1],[0,2,6]]-> F1 (10/13, 1/2, 4/5), ACC 0.7, wF1 0.7142307692307692
#   [[0,2],[0,3]]            -> F1 (0, 0.75), ACC 0.6, wF1 0.45
FIXED_CASES = [
    (
        [[2, 1], [0, 3]],
        [2 / 3, 1.0],
        [0.8, 6 / 7],
        5 / 6,
        0.8285714285714286,
    ),
    (
        [[5, 2, 0], [1, 3, 1], [0, 2, 6]],
        [5 / 7, 3 / 5, 6 / 8],
        [10 / 13, 0.5, 0.8],
        0.7,
        0.7142307692307692,
    ),
    (
        [[0, 2], [0, 3]],
        [0.0, 1.0],
        [0.0, 0.75],
        0.6,
        0.45,
    ),
]


@pytest.mark.parametrize("matrix,acc_c,f1_c,acc,wf1", FIXED_CASES)
def test_fixed_confusion_matrices(matrix, acc_c, f1_c, acc, wf1):
    classes = [f"c{i}" for i in range(len(matrix))]
    report = report_from_confusion(np.array(matrix), classes)
    o_recalls, o_f1s, o_acc, o_wf1 = fraction_oracle(matrix)
    np.testing.assert_allclose(report.class_acc, o_recalls, atol=1e-9)
    np.testing.assert_allclose(report.class_f1, o_f1s, atol=1e-9)
    assert report.accuracy == pytest.approx(o_acc, abs=1e-9)
    assert report.weighted_f1 == pytest.approx(o_wf1, abs=1e-9)
    # frozen literals
    np.testing.assert_allclose(report.class_acc, acc_c, atol=1e-6)
    np.testing.assert_allclose(report.class_f1, f1_c, atol=1e-6)
    assert report.accuracy == pytest.approx(acc, abs=1e-6)
    assert report.weighted_f1 == pytest.approx(wf1, abs=1e-6)


def test_all_correct_gives_ones():
    y = np.array([0, 1, 2, 2, 1, 0])
    report = compute_metrics(y, y, ["a", "b", "c"])
    assert report.accuracy == 1.0
    assert (report.class_f1 == 1.0).all()
    assert report.weighted_f1 == 1.0


def test_confusion_row_sums_are_supports():
    rng = np.random.default_rng(0)
    y_true = rng.integers(0, 4, size=50)
    y_pred = rng.integers(0, 4, size=50)
    matrix = confusion_matrix(y_true, y_pred, 4)
    np.testing.assert_array_equal(matrix.sum(axis=1), np.bincount(y_true, minlength=4))
    report = report_from_confusion(matrix, list("abcd"))
    assert report.accuracy == pytest.approx(np.trace(matrix) / 50)


def test_weighted_f1_equals_macro_on_equal_supports():
    matrix = np.array([[3, 1, 1], [2, 3, 0], [1, 1, 3]])
    report = report_from_confusion(matrix, list("abc"))
    assert matrix.sum(axis=1).tolist() == [5, 5, 5]
    assert report.weighted_f1 == pytest.approx(report.class_f1.mean(), abs=1e-9)
    assert 0.0 <= report.weighted_f1 <= 1.0


def test_evaluating_twice_identical():
    rng = np.random.default_rng(1)
    y_true = rng.integers(0, 3, size=30)
    y_pred = rng.integers(0, 3, size=30)
    a = compute_metrics(y_true, y_pred, list("xyz"))
    b = compute_metrics(y_true, y_pred, list("xyz"))
    assert a.to_dict() == b.to_dict()

import json

import numpy as np
import pytest

from foca.metrics import EvalReport, confusion_matrix, metrics


def test_perfect_classifier():
    assert metrics(np.diag([3, 7, 1])) == (1.0, 1.0)


def test_two_class_hand_computation():
    acc, f1 = metrics([[5, 5], [0, 10]])
    assert acc == pytest.approx(0.75, abs=1e-12)
    # F1_0 = 2*(1.0*0.5)/1.5, F1_1 = 2*(2/3*1.0)/(5/3)
    assert f1 == pytest.approx((2 / 3 + 0.8) / 2, abs=1e-12)
    assert round(f1, 4) == 0.7333


def test_absent_class_skipped():
    cm = np.array([[4, 1, 0], [2, 3, 0], [0, 0, 0]])
    _, with_empty = metrics(cm)
    _, without = metrics(cm[:2, :2])
    assert with_empty == without


def test_predicted_but_unsupported_class_scores_zero():
    _, f1 = metrics([[3, 1], [0, 0]])
    assert f1 == pytest.approx((6 / 7 + 0.0) / 2)


def test_errors():
    with pytest.raises(ValueError):
        metrics(np.zeros((3, 3), dtype=int))
    with pytest.raises(ValueError):
        metrics([[1, -1], [0, 2]])
    with pytest.raises(ValueError):
        metrics([[1, 2, 3]])


@pytest.mark.parametrize("seed", range(5))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cm = rng.integers(0, 20, (6, 6))
    perm = rng.permutation(6)
    a = metrics(cm)
    b = metrics(cm[np.ix_(perm, perm)])
    assert a[0] == pytest.approx(b[0], abs=1e-15)
    assert a[1] == pytest.approx(b[1], abs=1e-12)


def test_uniform_random_predictions():
    rng = np.random.default_rng(0)
    c, n = 10, 100_000
    acc, f1 = metrics(confusion_matrix(rng.integers(0, c, n), rng.integers(0, c, n), c))
    sigma = np.sqrt((1 / c) * (1 - 1 / c) / n)
    assert abs(acc - 1 / c) < 3 * sigma
    assert 0 <= f1 <= 1


def test_confusion_orientation():
    cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert cm.tolist() == [[0, 2], [0, 1]]


def test_report_round_trip():
    rep = EvalReport("concat", ["a", "b"])
    rep.add_fold(0, [0, 0, 1, 1], [0, 0, 1, 1], best_epoch=3)
    rep.add_fold(1, [0, 1, 1, 1], [0, 0, 1, 1])
    d = json.loads(rep.to_json())
    assert d["folds"][0]["n_test"] == sum(map(sum, d["folds"][0]["confusion"])) == 4
    assert d["mean"]["accuracy"] == pytest.approx(0.875)
    assert d["std"]["accuracy"] == pytest.approx(0.125)
    again = EvalReport.from_dict(d)
    assert again.to_json() == rep.to_json()

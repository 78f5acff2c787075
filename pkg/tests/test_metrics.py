import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from partial_screen import metrics as M
from partial_screen import oracles as O

binary = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60)


@given(binary)
def test_macro_f_and_qwk_match_confusion_oracles(pairs):
    preds, labels = map(np.array, zip(*pairs))
    assert abs(M.macro_f(preds, labels) - O.macro_f_loop(preds, labels)) <= 1e-12
    assert abs(M.qwk(preds, labels) - O.qwk_loop(preds, labels)) <= 1e-12


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40))
def test_multilevel_qwk_matches_oracle(pairs):
    preds, labels = map(np.array, zip(*pairs))
    assert abs(M.qwk(preds, labels, 4) - O.qwk_loop(preds, labels, 4)) <= 1e-12


def test_thousand_random_instances(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        p, y = rng.integers(0, 2, n), rng.integers(0, 2, n)
        assert abs(M.macro_f(p, y) - O.macro_f_loop(p, y)) <= 1e-12
        assert abs(M.qwk(p, y) - O.qwk_loop(p, y)) <= 1e-12


def test_perfect_and_inverted_predictions():
    y = np.array([0, 1, 1, 0, 1])
    assert M.macro_f(y, y) == 1.0
    assert M.qwk(y, y) == 1.0
    # all five off-diagonal; expected disagreement (2*2 + 3*3) / 5
    assert M.qwk(1 - y, y) == pytest.approx(-12 / 13)


def test_degenerate_kappa_is_zero():
    assert M.qwk(np.ones(4), np.ones(4)) == 0.0
    assert M.qwk(np.zeros(0), np.zeros(0)) == 0.0


def test_averaging_within_task_then_across_tasks():
    # two glaucoma sources at 75.7 and 89.5 average to 82.6
    assert M.aggregate({("A", "glaucoma"): 75.7, ("B", "glaucoma"): 89.5}) == pytest.approx(82.6, abs=1e-12)
    scores = [("A", "t0", 1.0), ("B", "t0", 0.0), ("A", "t1", 1.0)]
    assert M.aggregate(scores) == pytest.approx(0.75)


def test_report_skips_unknown_labels_and_uses_percent():
    probs = np.array([[0.9, 0.2], [0.1, 0.8], [0.7, 0.6]])
    labels = np.array([[1, -1], [0, 1], [1, -1]])
    per = M.evaluate_dataset(probs, labels)
    assert per["0"] == {"F": 1.0, "QWK": 1.0}
    report = M.build_report({"d": per})
    assert report["mF"] == pytest.approx(100 * (1.0 + per["1"]["F"]) / 2)


def test_confusion_matrix_rejects_out_of_range():
    with pytest.raises(ValueError):
        M.confusion_matrix([0, 2], [0, 1], 2)


def test_evaluate_dataset_rejects_mismatched_task_counts():
    with pytest.raises(ValueError, match="do not match"):
        M.evaluate_dataset(np.full((3, 4), 0.5), np.zeros((3, 3), dtype=np.int64))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats as sps

from qclmixnet.metrics import classification_metrics, confusion_matrix, macro_metrics, mean_per_class_f1
from qclmixnet.stats import (
    chi2_sf,
    compare_models,
    f_critical,
    friedman_from_mean_ranks,
    friedman_test,
    global_friedman,
    iman_davenport_decision,
    rank_models,
    rank_row,
)


def test_confusion_examples():
    assert confusion_matrix([0, 0, 1], [0, 1, 1], 2).tolist() == [[1, 1], [0, 1]]
    cm = confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert np.array_equal(cm, np.diag([1, 1, 2]))
    assert cm.sum(axis=1).tolist() == [1, 1, 2]
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 0], 3)


def test_macro_metrics_hand_example():
    m = macro_metrics(np.array([[1, 1], [0, 1]]))
    assert m.accuracy == pytest.approx(2 / 3)
    assert m.maP == 0.75 and m.maR == 0.75 and m.maF1 == 0.75


def test_perfect_and_majority():
    assert classification_metrics([0, 1, 1], [0, 1, 1], 2).as_dict() == {"accuracy": 1, "maP": 1, "maR": 1, "maF1": 1}
    y = np.array([0] * 907 + [1] * 93)
    m = classification_metrics(y, np.zeros_like(y), 2)
    assert round(m.accuracy, 2) == 0.91 and round(m.maP, 2) == 0.45 and m.maR == 0.5 and round(m.maF1, 2) == 0.48
    assert m.zero_division == ["precision:1"]


def test_maf1_is_harmonic_mean_not_mean_per_class_f1():
    cm = np.array([[8, 2, 0], [3, 1, 1], [0, 4, 6]])
    m = macro_metrics(cm)
    assert m.maF1 == pytest.approx(2 * m.maP * m.maR / (m.maP + m.maR))
    assert abs(m.maF1 - mean_per_class_f1(cm)) > 1e-3


def test_rank_examples():
    r, t = rank_row([3, 1, 2])
    assert r.tolist() == [1, 3, 2] and t == 0
    r, t = rank_row([2, 2, 1])
    assert r.tolist() == [1.5, 1.5, 3] and t == 6
    r, _ = rank_row([0.1, 0.3], higher_is_better=False)
    assert r.tolist() == [1, 2]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=9))
def test_rank_rows_sum_to_triangle(scores):
    r, _ = rank_row(scores)
    k = len(scores)
    assert r.sum() == k * (k + 1) / 2


def test_friedman_hand_computation():
    ranks = rank_models(np.tile([3.0, 2.0, 1.0], (5, 1)))
    res = friedman_test(ranks)
    assert res.chi2 == pytest.approx(10.0, abs=1e-12)
    assert res.c == 1.0 and res.chi2_corrected == res.chi2
    assert (res.df1, res.df2) == (2, 8)


def test_friedman_all_tied():
    res = friedman_test(rank_models(np.ones((4, 3))))
    assert res.chi2 == 0.0 and res.chi2_corrected == 0.0
    assert iman_davenport_decision(res)[0] == "Fail to reject"


def test_friedman_identical_model_columns():
    rng = np.random.default_rng(0)
    col = rng.normal(size=(6, 1))
    res = friedman_test(rank_models(np.hstack([col, col])))
    assert res.chi2 == 0.0 and iman_davenport_decision(res)[0] == "Fail to reject"


def test_friedman_tie_correction_inflates():
    scores = np.array([[1, 1, 3, 4], [2, 1, 1, 5], [4, 3, 3, 1], [5, 4, 3, 3]], dtype=float)
    res = friedman_test(rank_models(scores))
    assert 0 < res.c < 1 and res.chi2_corrected > res.chi2


def test_friedman_synthetic_dominance_by_hand():
    scores = np.array([[0.9, 0.8, 0.7], [0.95, 0.7, 0.75], [0.85, 0.6, 0.5], [0.9, 0.85, 0.8]])
    res = friedman_test(rank_models(scores))
    # mean ranks 1, 2.25, 2.75 over N=4, k=3
    want = 12 * 4 / (3 * 4) * (1 + 2.25**2 + 2.75**2) - 3 * 4 * 4
    assert res.chi2 == pytest.approx(want, abs=1e-12)
    assert res.F_F == pytest.approx(3 * want / (4 * 2 - want), abs=1e-12)


def test_friedman_invariances():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(7, 5))
    base = friedman_test(rank_models(scores)).chi2
    assert friedman_test(rank_models(np.exp(3 * scores))).chi2 == pytest.approx(base, abs=1e-12)
    perm = rng.permutation(5)
    assert friedman_test(rank_models(scores[:, perm])).chi2 == pytest.approx(base, abs=1e-12)


def test_friedman_undefined_ff_flag():
    res = friedman_from_mean_ranks([1.0, 2.0, 3.0], n=5)
    assert res.F_undefined and math.isinf(res.F_F)


def test_friedman_argument_checks():
    with pytest.raises(ValueError):
        friedman_from_mean_ranks([1.0, 2.0], n=1)


def test_chi2_sf_examples():
    assert chi2_sf(0, 5) == 1.0
    assert chi2_sf(2 * math.log(2), 2) == pytest.approx(0.5, abs=1e-15)
    assert 1.5e-12 < chi2_sf(99.42, 20) < 1.7e-12


def test_chi2_sf_against_scipy():
    rng = np.random.default_rng(2)
    for _ in range(300):
        df = int(rng.integers(1, 60))
        x = float(rng.uniform(0, 4 * df + 20))
        assert abs(chi2_sf(x, df) - special.gammaincc(df / 2, x / 2)) < 1e-10


def test_f_critical_value():
    assert f_critical(0.05, 20, 60) == pytest.approx(1.748, abs=5e-4)
    assert f_critical(0.05, 20, 60) == pytest.approx(sps.f.ppf(0.95, 20, 60))


def test_global_friedman_textbook_variant_reranks():
    rows = np.array([[1.2, 2.9, 1.9], [1.0, 2.5, 2.5], [1.5, 2.0, 2.5]])
    direct = global_friedman(rows)
    assert direct.chi2 == pytest.approx(friedman_from_mean_ranks(rows.mean(axis=0), 3).chi2)
    textbook = global_friedman(rows, textbook=True)
    assert textbook.mean_ranks.tolist() == pytest.approx([1.0, 2.5, 2.5])
    assert textbook.c < 1


def test_compare_models_averages_seeds_and_needs_data():
    rows = []
    for d, vals in (("a", (0.9, 0.5)), ("b", (0.8, 0.6)), ("c", (0.7, 0.65))):
        for model, v in zip(("x", "y"), vals):
            rows.append({"dataset": d, "model": model, "metric": "maF1", "value": v})
            rows.append({"dataset": d, "model": model, "metric": "maF1", "value": v})
    (cmp_,) = compare_models(rows)
    assert cmp_.models == ["x", "y"] and cmp_.result.mean_ranks.tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        compare_models(rows[:4])

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_distill.pipeline.metrics import evaluate, r2_score

labels_st = arrays(np.float64, st.integers(2, 60), elements=st.floats(0, 90))


def test_perfect_predictor_is_exact():
    y = np.array([0.0, 1.5, 7.0, 42.0])
    r = evaluate(y, y)
    assert (r.mae, r.rmse, r.r2) == (0.0, 0.0, 1.0)


def test_mean_predictor_has_zero_r2():
    y = np.random.default_rng(0).lognormal(size=500)
    assert abs(evaluate(np.full_like(y, y.mean()), y).r2) <= 1e-12


def test_hand_values():
    r = evaluate([1.0, 1.0], [0.0, 2.0])
    assert (r.mae, r.rmse, r.r2) == (1.0, 1.0, 0.0)


def test_strata_breakdown_counts():
    y = np.array([0.0, 0.0, 1.0, 5.0, 20.0])
    r = evaluate(y + 1.0, y)
    assert {k: v[0] for k, v in r.strata.items()} == {0: 2, 1: 1, 2: 1, 3: 1}
    assert all(v[1] == 1.0 for v in r.strata.values())


def test_constant_labels_rejected():
    with pytest.raises(ValueError):
        r2_score([1.0, 2.0], [3.0, 3.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        evaluate([1.0], [1.0, 2.0])


@settings(max_examples=200, deadline=None)
@given(labels_st, st.integers(0, 2**32 - 1))
def test_rmse_never_below_mae(y, seed):
    assume(np.std(y) > 1e-6)
    p = y + np.random.default_rng(seed).normal(scale=3.0, size=len(y))
    r = evaluate(p, y)
    assert r.rmse >= r.mae


@settings(max_examples=100, deadline=None)
@given(labels_st)
def test_rmse_equals_mae_for_constant_error(y):
    assume(np.std(y) > 1e-6)
    r = evaluate(y + 0.5, y)
    assert r.rmse >= r.mae
    assert r.rmse == pytest.approx(r.mae, rel=1e-12)

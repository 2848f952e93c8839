import numpy as np
import pytest
from hypothesis import given, strategies as st

from valrecon import baseforecast as bf
from valrecon.errors import NonConvergenceError


def ar1(a, n, seed=0):
    rng = np.random.default_rng(seed)
    y = np.zeros(n)
    e = rng.normal(size=n)
    for t in range(1, n):
        y[t] = a * y[t - 1] + e[t]
    return y


def test_ar1_coefficient_recovered():
    m = bf.fit_mean(ar1(0.7, 10_000), bf.RegressionSpec(lags=(1,)))
    assert m.coef[0] == pytest.approx(0.7, abs=0.05)


def test_white_noise_weight_near_zero():
    y = np.random.default_rng(1).normal(size=10_000)
    m = bf.fit_mean(y, bf.RegressionSpec(lags=(1,)))
    assert abs(m.coef[0]) < 0.05


def test_constant_series():
    y = np.full(200, 2.0)
    m = bf.fit_mean(y, bf.RegressionSpec(lags=(1, 2)))
    assert bf.predict(m, [2.0, 2.0]) == pytest.approx(2.0)
    q = bf.fit_quantile(y, bf.RegressionSpec(lags=(1,)), 0.75)
    assert bf.predict(q, [2.0]) == pytest.approx(2.0, abs=1e-3)


def test_mean_fit_beats_constant():
    y = ar1(0.9, 3000, 3)
    X, t = bf.lagged_design(y, (1, 2, 24))
    m = bf.fit_mean(y, bf.RegressionSpec(lags=(1, 2, 24)))
    mse = np.mean((X @ m.coef + m.intercept - t) ** 2)
    assert mse <= np.var(t)


def test_uniform_quantile_intercept():
    y = np.random.default_rng(2).uniform(size=20_000)
    coef, b, _ = bf.fit_pinball(np.zeros((len(y), 0)), y, 0.75)
    assert b == pytest.approx(0.75, abs=0.02)


def test_median_matches_mean_on_symmetric_noise():
    y = 3.0 + np.random.default_rng(4).normal(size=20_000)
    spec = bf.RegressionSpec(lags=(1,))
    q = bf.fit_quantile(y, spec, 0.5)
    m = bf.fit_mean(y, spec)
    assert q.intercept == pytest.approx(m.intercept, abs=0.02)


def test_quantile_coverage_held_out():
    y = ar1(0.8, 12_000, 5) + 5
    spec = bf.RegressionSpec(lags=(1, 2))
    q = bf.fit_quantile(y[:10_000], spec, 0.75)
    pred = bf.predict_series(q, y[10_000:])[2:]
    cover = np.mean(y[10_002:] <= pred)
    assert cover == pytest.approx(0.75, abs=0.05)


def test_gd_trace_monotone():
    y = ar1(0.6, 2000, 6)
    m = bf.fit_mean(y, bf.RegressionSpec(lags=(1, 2), step=0.1, epochs=200), method="gd")
    tr = np.array(m.loss_trace)
    assert np.all(np.diff(tr) <= 1e-12)
    ls = bf.fit_mean(y, bf.RegressionSpec(lags=(1, 2)))
    assert np.allclose(m.coef, ls.coef, atol=1e-3)


def test_rank_deficient_design_uses_ridge():
    x = np.random.default_rng(0).normal(size=500)
    X = np.column_stack([x, x])
    coef, b = bf.fit_least_squares(X, 2 * x + 1)
    assert np.all(np.isfinite(coef))
    assert coef.sum() == pytest.approx(2.0, abs=1e-3)


def test_predict_examples():
    m = bf.FittedForecaster(np.array([0.5]), 0.0, bf.RegressionSpec(lags=(1,)), capacity=10.0)
    assert bf.predict(m, [2.0]) == 1.0
    m0 = bf.FittedForecaster(np.array([0.0]), -0.3, bf.RegressionSpec(lags=(1,)), capacity=2.0)
    assert bf.predict(m0, [0.0]) == 0.0
    big = bf.FittedForecaster(np.array([0.0]), 7.0, bf.RegressionSpec(lags=(1,)), capacity=2.0)
    assert bf.predict(big, [0.0]) == 2.0
    with pytest.raises(ValueError):
        bf.predict(m, [1.0, 2.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        bf.RegressionSpec(lags=())
    with pytest.raises(ValueError):
        bf.RegressionSpec(lags=(0,))
    with pytest.raises(ValueError):
        bf.RegressionSpec(objective="pinball", level=1.0)


def test_non_convergence_reports_trace():
    # a step this large overshoots on every iteration
    y = np.random.default_rng(0).uniform(size=200)
    with pytest.raises(NonConvergenceError) as ei:
        bf.fit_pinball(np.zeros((200, 0)), y, 0.75, step=1e6, epochs=50)
    assert len(ei.value.loss_trace) > 1


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=20), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_pinball_convex(vals, level, seed):
    y = np.array(vals)
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=len(y)), rng.normal(size=len(y))
    mid = bf.pinball_loss((a + b) / 2, y, level)
    assert mid <= (bf.pinball_loss(a, y, level) + bf.pinball_loss(b, y, level)) / 2 + 1e-9

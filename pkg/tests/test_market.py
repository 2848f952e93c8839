import numpy as np
import pytest
from hypothesis import given, strategies as st

from valrecon.errors import ConfigurationError, DegenerateHourError
from valrecon.market import (MarketHour, Penalties, imbalance_cost, imbalance_cost_grad, is_degenerate,
                             nominal_level, penalties_from_hour, profit, profit_decomposed)

HOUR = MarketHour(0, 25.0, 29.0, 13.0)
PEN = Penalties(12.0, 4.0)
qty = st.floats(0, 10, allow_nan=False)


def test_profit_examples():
    assert profit(1.0, 1.5, HOUR) == pytest.approx(25 * 1.0 + 13 * 0.5)
    assert profit(2.0, 2.0, HOUR) == 50.0
    assert profit(0.0, 0.0, HOUR) == 0.0


def test_profit_rejects_negative_quantities():
    with pytest.raises(ValueError):
        profit(-0.1, 1.0, HOUR)


def test_imbalance_cost_examples():
    assert imbalance_cost(1.0, 1.5, PEN) == pytest.approx(6.0)
    assert imbalance_cost(1.5, 1.0, PEN) == pytest.approx(2.0)
    assert imbalance_cost(0.7, 0.7, PEN) == 0.0


def test_penalties_from_hour():
    p = penalties_from_hour(HOUR)
    assert (p.psi_plus, p.psi_minus) == (12.0, 4.0)
    p = penalties_from_hour(MarketHour(0, 30.0, 30.0, 30.0))
    assert (p.psi_plus, p.psi_minus) == (0.0, 0.0)
    p = penalties_from_hour(MarketHour(0, 25.0, 25.0, 20.0))
    assert (p.psi_plus, p.psi_minus) == (5.0, 0.0)


def test_nominal_level():
    assert nominal_level(PEN) == 0.75
    assert nominal_level(Penalties(1.0, 1.0)) == 0.5
    assert nominal_level(Penalties(0.0, 5.0)) == 0.0
    with pytest.raises(DegenerateHourError):
        nominal_level(Penalties(0.0, 0.0))
    assert is_degenerate(Penalties(0.0, 0.0))


@pytest.mark.parametrize("prices", [(25, 24, 13), (25, 29, 26), (np.nan, 29, 13)])
def test_market_hour_ordering(prices):
    with pytest.raises(ConfigurationError):
        MarketHour(0, *prices)


def test_one_sided_rule_is_opt_in():
    MarketHour(0, 25.0, 29.0, 13.0)
    MarketHour(0, 25.0, 29.0, 25.0, one_sided=True)
    with pytest.raises(ConfigurationError):
        MarketHour(0, 25.0, 29.0, 13.0, one_sided=True)


def test_negative_penalty_rejected():
    with pytest.raises(ConfigurationError):
        Penalties(-1.0, 2.0)


@given(qty, qty, st.floats(1, 60), st.floats(0, 30), st.floats(0, 1))
def test_settlement_identity(o, y, pi_f, up, frac):
    hour = MarketHour(0, pi_f, pi_f + up, pi_f * (1 - frac))
    a, b = profit(o, y, hour), profit_decomposed(o, y, hour)
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@given(qty, qty, st.floats(0, 20), st.floats(0, 20))
def test_cost_nonnegative_and_one_sided(o, y, pp, pm):
    pen = Penalties(pp, pm)
    c = imbalance_cost(o, y, pen)
    assert c >= 0
    if o != y:
        terms = [pp * max(y - o, 0), pm * max(o - y, 0)]
        assert min(terms) == 0


@given(st.floats(0, 20), st.floats(1e-3, 20), st.floats(1e-3, 1e3))
def test_nominal_level_scale_invariant(pp, pm, c):
    a = nominal_level(Penalties(pp, pm))
    assert 0 <= a <= 1
    assert nominal_level(Penalties(pp, pm).scaled(c)) == pytest.approx(a, abs=1e-12)


def test_cost_grad_against_differences():
    rng = np.random.default_rng(0)
    o, y = rng.uniform(0, 3, 200), rng.uniform(0, 3, 200)
    h = 1e-7
    num = (imbalance_cost(o + h, y, PEN) - imbalance_cost(o - h, y, PEN)) / (2 * h)
    assert np.allclose(imbalance_cost_grad(o, y, PEN), num, atol=1e-5)
    assert imbalance_cost_grad(1.0, 1.0, PEN) == 0.0

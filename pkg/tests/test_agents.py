import math

import numpy as np
import pytest
from scipy import integrate, stats

from abm_exchange.agents import (ChartistState, FixedParams, IntentKind, ParameterError,
                                 ThetaParams, chartist_decide, ema_weight,
                                 fundamentalist_decide, gamma_shape, liquidity_provider_decide,
                                 power_law_continuous, provider_rate, sample_power_law,
                                 sample_trunc_exp, trunc_exp_mean)
from abm_exchange.events import Side
from abm_exchange.mirror import MirrorBook
from abm_exchange.feed import decode_event

FIXED = FixedParams()


def test_power_law_closed_form():
    assert sample_power_law(10, 1, 0.5) == 20
    assert power_law_continuous(10, 1, 0.5) == 20.0


def test_power_law_never_below_floor():
    assert sample_power_law(10, 5.0, 1.0) == 10
    assert sample_power_law(10, 1e6, 0.3) == 10


def test_power_law_rejects_bad_alpha():
    with pytest.raises(ParameterError):
        sample_power_law(10, 0.0, 0.5)


def test_power_law_mean():
    u = 1.0 - np.random.default_rng(11).random(10**6)
    x = 10 * u ** (-1 / 2)
    assert abs(x.mean() / 20 - 1) < 0.01


def test_power_law_ks():
    rng = np.random.default_rng(5)
    draws = [power_law_continuous(10, 2.5, 1.0 - u) for u in rng.random(10**5)]
    d = stats.kstest(draws, stats.pareto(2.5, scale=10).cdf).statistic
    assert d < 0.01


def test_trunc_exp_endpoints():
    assert sample_trunc_exp(15, 1, 60, 0.0) == 1
    assert sample_trunc_exp(15, 1, 60, 1.0) == pytest.approx(60)
    assert sample_trunc_exp(15, 1, 1 + 1e-9, 0.7) == pytest.approx(1)
    with pytest.raises(ParameterError):
        sample_trunc_exp(15, 5, 5, 0.5)


@pytest.mark.parametrize("mean, lo, hi", [(15, 1, 60), (2.5, 0.3, 10)])
def test_trunc_exp_mean_matches_quadrature(mean, lo, hi):
    z = integrate.quad(lambda x: math.exp(-x / mean), lo, hi)[0]
    m = integrate.quad(lambda x: x * math.exp(-x / mean), lo, hi)[0] / z
    assert trunc_exp_mean(mean, lo, hi) == pytest.approx(m, rel=1e-9)
    rng = np.random.default_rng(2)
    draws = np.array([sample_trunc_exp(mean, lo, hi, u) for u in rng.random(10**5)])
    assert abs(draws.mean() / m - 1) < 0.01


def test_gamma_placement_mean():
    rng = np.random.default_rng(4)
    for rho, kappa, spread in ((0.0, 2.0, 100), (0.4, 1.0, 7), (-0.6, 3.0, 30)):
        rate = provider_rate(Side.SELL, rho, kappa)
        draws = rng.gamma(gamma_shape(spread), 1 / rate, size=10**5)
        assert abs(draws.mean() / (spread / rate) - 1) < 0.02


def test_gamma_shape_floor():
    assert gamma_shape(0) == 1.0 and gamma_shape(None) == 1.0 and gamma_shape(-3) == 1.0


def book_with(frames=()):
    book = MirrorBook()
    for f in frames:
        book.apply_event(decode_event(f))
    return book


TWO_SIDED = (b"1,New,Buy,LP|1,9990,100", b"2,New,Sell,LP|2,10010,100")


def test_fundamentalist_side():
    book = book_with(TWO_SIDED)
    theta = ThetaParams()
    assert fundamentalist_decide(10100, book, theta, FIXED, 0.5).side is Side.BUY
    assert fundamentalist_decide(9900, book, theta, FIXED, 0.5).side is Side.SELL
    assert fundamentalist_decide(10000, book, theta, FIXED, 0.5) is None


def test_fundamentalist_volume_floor_threshold():
    book = book_with(TWO_SIDED)
    theta = ThetaParams(delta=0.01)
    # u = 1 returns the floor itself
    assert fundamentalist_decide(10200, book, theta, FIXED, 1.0).volume == 50
    assert fundamentalist_decide(10050, book, theta, FIXED, 1.0).volume == 20


def test_fundamentalist_needs_contra_liquidity():
    book = book_with((b"1,New,Buy,LP|1,9990,100",))
    assert fundamentalist_decide(10100, book, ThetaParams(), FIXED, 0.5) is None
    intent = fundamentalist_decide(9900, book, ThetaParams(), FIXED, 0.5)
    assert intent.kind is IntentKind.MARKET


def test_ema_weight():
    assert ema_weight(5.0, 5.0) == pytest.approx(1 - math.exp(-1))
    assert ema_weight(1e6, 5.0) == 1.0


def test_chartist_rules():
    book = book_with(TWO_SIDED)
    theta = ThetaParams()
    _, intent = chartist_decide(ChartistState(10010, 5.0), book, theta, FIXED, 0.0, 0.5)
    assert intent.side is Side.SELL
    _, intent = chartist_decide(ChartistState(9990, 5.0), book, theta, FIXED, 0.0, 0.5)
    assert intent.side is Side.BUY
    state, intent = chartist_decide(ChartistState(9000, 5.0), book, theta, FIXED, 1e6, 0.5)
    assert intent is None and state.ema == 10000


def test_provider_side_probability():
    ask_only = book_with((b"1,New,Buy,LP|1,9990,100",))
    assert ask_only.imbalance == 1.0
    for u in (0.0, 0.5, 0.999):
        intent = liquidity_provider_decide(ask_only, ThetaParams(), FIXED, u, 3.0, 0.5)
        assert intent.side is Side.SELL and intent.price == 9990 + 1 + 3


def test_provider_bid_placement_and_expiry():
    book = book_with(TWO_SIDED)
    intent = liquidity_provider_decide(book, ThetaParams(), FIXED, 0.9, 2.7, 1.0, now=12.0)
    assert intent.side is Side.BUY and intent.price == 10010 - 1 - 2
    assert intent.volume == FIXED.xm_lp and intent.expiry == 12.0 + FIXED.gamma


def test_provider_rate_direction():
    assert provider_rate(Side.SELL, 0.5, 1.0) < 1 < provider_rate(Side.BUY, 0.5, 1.0)
    assert provider_rate(Side.SELL, 0.0, 1.0) == 1.0


def test_bad_fixed_params():
    with pytest.raises(ParameterError):
        FixedParams(lt_min=5, lt_max=1)

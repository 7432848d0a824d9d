import itertools
import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abm_exchange.agents import ThetaParams
from abm_exchange.analysis.facts import (IMPACT_BINS, AnalysisError, depth_profile,
                                         lee_ready_sign, normalised_volumes, order_flow_acf,
                                         power_law_mle, prevailing_mids, price_impact,
                                         price_series, return_acf, tail_fit)
from abm_exchange.analysis.replay import replay_level1, replay_taq
from abm_exchange.analysis.report import analyse
from abm_exchange.analysis.sensitivity import (Cell, SensitivityGrid, default_grid,
                                               run_sensitivity, write_grid)
from abm_exchange.driver import SessionConfig, run_session
from abm_exchange.mirror import BookState
from abm_exchange.moments import MOMENT_NAMES
from abm_exchange.taq import loads

from test_moments import pareto, simulate_garch
from test_taq import SAMPLE


def snap(bid, ask, bid_depth=(0,), ask_depth=(0,), ts=0):
    return BookState(ts, bid, ask, ask - bid, (bid + ask) / 2, (bid + ask) / 2, 0.0,
                     tuple(bid_depth), tuple(ask_depth))


# -- signing -------------------------------------------------------------------

def test_quote_rule():
    assert list(lee_ready_sign([10050], [10000]).signs) == [1]
    assert list(lee_ready_sign([9950], [10000]).signs) == [-1]


def test_tick_rule_at_mid():
    signed = lee_ready_sign([100, 101, 100.5, 100.5, 100, 100.5], [None, 100, 100.5, 100.5, 100.5, 100.5])
    # no quote for the first trade; the first 100.5 follows a downtick and the repeat
    # carries it forward; the last 100.5 follows an uptick
    assert list(signed.signs) == [0, 1, -1, -1, -1, 1]
    assert signed.skipped == 1


def test_trade_at_mid_without_prior_tick_is_skipped():
    signed = lee_ready_sign([100.0], [100.0])
    assert signed.signs[0] == 0 and signed.skipped == 1


def test_prevailing_mids_use_strictly_earlier_quotes():
    assert prevailing_mids([5, 10, 11], [1, 10], [100.0, 101.0]) == [100.0, 100.0, 101.0]
    assert prevailing_mids([0], [1], [100.0]) == [None]


@pytest.fixture(scope="module")
def session():
    return run_session(SessionConfig(seed=2))


@pytest.fixture(scope="module")
def replayed(session):
    return replay_taq(session.records)


def test_replay_matches_live_trades(session, replayed):
    assert len(replayed.trades) == len(session.trades)
    for live, rec in zip(session.trades, replayed.trades):
        assert live.sign == rec.sign and live.volume == rec.volume
        assert float(live.mid_before) == rec.mid_before and float(live.mid_after) == rec.mid_after


def test_lee_ready_agrees_with_true_signs(replayed):
    trades = replayed.trades
    inferred = lee_ready_sign([t.price for t in trades], [t.mid_before for t in trades])
    agreement = np.mean(inferred.signs == np.array([t.sign for t in trades]))
    assert agreement >= 0.85


# -- autocorrelation -----------------------------------------------------------

def test_alternating_signs():
    acf = order_flow_acf([1, -1] * 600, max_lag=500)
    assert acf.size == 500
    assert acf[0] == pytest.approx(-1.0)
    assert acf[1] == pytest.approx(1.0)


def test_iid_signs_inside_band():
    n = 20000
    signs = np.random.default_rng(0).choice([-1, 1], size=n)
    acf = order_flow_acf(signs, max_lag=500)
    assert np.mean(np.abs(acf) < 3 / math.sqrt(n)) >= 0.99


def test_short_sign_series_reduces_lag(caplog):
    acf = order_flow_acf(np.random.default_rng(1).choice([-1, 1], size=50), max_lag=500)
    assert acf.size == 48 and "reduced" in caplog.text
    with pytest.raises(AnalysisError):
        order_flow_acf([1, 0, 0])


def test_simulated_order_flow_persistent(replayed):
    acf = order_flow_acf([t.sign for t in replayed.trades])
    assert acf[0] > 0


def test_absolute_returns_cluster_under_garch():
    r = simulate_garch(1e-6, 0.1, 0.85, 10000, seed=3)
    acf = return_acf(r, max_lag=20)
    assert acf.absolute[0] > acf.band
    assert np.mean(np.abs(acf.returns) < acf.band) > 0.9


# -- tails ---------------------------------------------------------------------

def test_pareto_tail_exponent():
    # survival exponent 2 is density exponent 3
    x = pareto(2.0, 10**5, seed=4)
    fit = power_law_mle(x, 1.0)
    assert abs(fit.alpha - 3) < 0.1
    assert fit.empirical.size == fit.theoretical.size == fit.n


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_tail_scale_invariance(c):
    r = np.random.default_rng(5).standard_t(3, size=4000)
    a, b = tail_fit(r), tail_fit(c * r)
    assert b.upper.alpha == pytest.approx(a.upper.alpha, rel=1e-9)
    assert b.lower.alpha == pytest.approx(a.lower.alpha, rel=1e-9)


def test_exponential_tail_steepens_with_cutoff():
    x = np.random.default_rng(6).exponential(size=10**5)
    alphas = [power_law_mle(x, np.percentile(x, q)).alpha for q in (80, 90, 95, 99)]
    assert alphas == sorted(alphas)


def test_small_tail_rejected():
    with pytest.raises(AnalysisError):
        tail_fit(np.random.default_rng(7).standard_normal(200))


# -- depth ---------------------------------------------------------------------

def test_depth_profile_average():
    snaps = [snap(99, 101, (30, 10, 0), (20, 20, 5)), snap(99, 101, (10, 10, 10), (40, 0, 0))]
    prof = depth_profile(snaps, levels=3)
    assert np.allclose(prof.bid, [20, 10, 5]) and np.allclose(prof.ask, [30, 10, 2.5])
    assert prof.decays()
    flat = depth_profile([snap(99, 101, (5, 9), (9, 1))], levels=2)
    assert not flat.decays()


def test_simulated_depth_decays(replayed):
    assert depth_profile(replayed.snapshots).decays()


def test_price_series_samples_changes():
    snaps = [snap(99, 101), snap(99, 101), snap(100, 102), snap(99, 101)]
    assert list(price_series(snaps, "mid")) == [100, 101, 100]


# -- impact --------------------------------------------------------------------

def test_equal_volumes_normalise_to_one():
    assert np.allclose(normalised_volumes([7] * 40), 1.0)
    days = [0] * 10 + [1] * 30
    assert np.allclose(normalised_volumes([3] * 10 + [9] * 30, days)[:10], 2.0)


def test_zero_volume_day_excluded(caplog):
    out = normalised_volumes([0, 0, 5, 5], [0, 0, 1, 1])
    assert np.all(np.isnan(out[:2])) and np.allclose(out[2:], 1.0)
    assert "zero volume" in caplog.text


def test_impact_bins_and_signs():
    signs = [1, 1, -1, -1]
    buyer, seller = price_impact(signs, [1, 3, 1, 3], [100, 100, 100, 100],
                                 [101, 102, 99, 98])
    assert buyer.count.sum() == 2 and seller.count.sum() == 2
    assert buyer.edges.size == IMPACT_BINS + 1
    assert np.allclose(np.diff(np.log(buyer.edges)), np.log(100) / IMPACT_BINS)
    assert np.all(seller.impact[~seller.empty] > 0)
    assert buyer.empty.sum() == IMPACT_BINS - 2
    assert np.isnan(buyer.impact[buyer.empty]).all()
    assert buyer.slope() > 0 and seller.slope() > 0


# -- replay --------------------------------------------------------------------

def test_level1_replay_of_sample():
    rep = replay_level1(loads(SAMPLE))
    # one-sided until the second bid update; asks never arrive so no mid exists
    assert rep.snapshots == [] and rep.trades == []


def test_level1_replay_pairs_trade_with_next_quote():
    text = ('"DateTime","TraderMnemonic","ClientOrderId","Price","Volume","Side","Type"\n'
            '"2021-05-19 09:00:00.000","1","1","9990","100","Buy","New"\n'
            '"2021-05-19 09:00:00.001","1","2","10010","100","Sell","New"\n'
            '"2021-05-19 09:00:01.000","1","3","0","100","Buy","Trade"\n'
            '"2021-05-19 09:00:01.000","1","2","10010","100","Buy","Trade"\n'
            '"2021-05-19 09:00:01.005","1","4","10020","50","Sell","New"\n')
    rep = replay_level1(loads(text))
    assert len(rep.snapshots) == 2
    (t,) = rep.trades
    assert t.sign == 1 and t.price == 10010 and t.mid_before == 10000 and t.mid_after == 10005


# -- report ----------------------------------------------------------------------

def test_report_is_reproducible(tmp_path, session):
    a, b = tmp_path / "a", tmp_path / "b"
    facts = analyse(session.records, a)
    analyse(session.records, b)
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    (s,) = facts
    assert s.kurtosis > 3 and s.order_flow_acf1 > 0 and s.depth_decays
    assert (a / "stylised_facts.csv").exists() and (a / "depth_profile_simulated.svg").exists()


def test_report_with_empirical(tmp_path, session):
    other = run_session(SessionConfig(seed=3, horizon=1800))
    facts = analyse(session.records, tmp_path, other.records, empirical_level1=False)
    assert [f.dataset for f in facts] == ["simulated", "empirical"]
    rows = (tmp_path / "moments.csv").read_text().splitlines()
    assert len(rows) == 5


# -- sensitivity -----------------------------------------------------------------

def synthetic_grid(points=5):
    values = {k: list(v) for k, v in default_grid(points=points).items()}
    cells = []
    for index in itertools.product(range(points), repeat=5):
        theta = ThetaParams(*(values[n][i] for n, i in zip(values, index)))
        m = np.arange(len(MOMENT_NAMES), dtype=float) + sum(index)
        cells.append(Cell(index, theta, m, m + 1))
    return SensitivityGrid(values, cells)


def test_grid_bookkeeping():
    grid = synthetic_grid()
    assert len(grid) == 3125
    for name in grid.values:
        blocks = grid.marginal(name)
        assert len(blocks) == 5 and all(b.shape == (625, 9) for b in blocks.values())
    counts = grid.surface_counts("delta", "kappa")
    assert counts.shape == (5, 5) and np.all(counts == 125)
    surf = grid.surface("delta", "kappa", "mean", price="mid")
    # the other three indices average 2 each; the two fixed ones add directly
    assert surf[0, 0] == pytest.approx(6.0) and surf[4, 4] == pytest.approx(14.0)
    assert np.allclose(grid.surface("delta", "kappa", "mean"), surf + 1)


def test_constant_moments_give_zero_correlation():
    grid = synthetic_grid(points=2)
    for c in grid.cells:
        c.micro[:] = 1.0
    point, lo, hi = grid.correlations(n_boot=20)
    assert np.all(point == 0) and np.all(lo == 0) and np.all(hi == 0)


def test_small_real_grid(tmp_path):
    values = {k: v[:2] for k, v in default_grid().items()}
    values["N"] = [1.0]
    grid = run_sensitivity(SessionConfig(horizon=30), values, seed=1)
    assert len(grid) == 16
    assert all(c.micro.shape == (9,) for c in grid.cells)
    write_grid(grid, tmp_path, n_boot=10)
    lines = (tmp_path / "cells.csv").read_text().splitlines()
    assert len(lines) == 17
    assert {p.name for p in tmp_path.iterdir()} >= {"cells.csv", "marginals.csv",
                                                    "surfaces.csv", "correlations.csv"}


def test_failed_cell_is_recorded(monkeypatch):
    from abm_exchange.analysis import sensitivity

    def explode(config):
        raise RuntimeError("no market today")

    monkeypatch.setattr(sensitivity, "run_session", explode)
    cell = sensitivity.run_cell(SessionConfig(horizon=5), (0,) * 5, ThetaParams(),
                                np.array([0.0, 1.0]))
    assert "no market today" in cell.error and np.isnan(cell.micro).all()

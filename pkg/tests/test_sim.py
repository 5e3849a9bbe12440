import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentbook import sim
from latentbook.bvp import solve_stationary
from latentbook.exceptions import DegenerateBookError, DomainOverflow, LiquidityCrisis, ParameterError
from latentbook.model import ModelParams


def _cfg(**kw):
    p = ModelParams.from_dimensionless(0.35, 0.112, L_latent=kw.pop("L_latent", 200.0))
    return sim.SimConfig.from_params(p, n_bins=kw.pop("n_bins", 200), half_width=kw.pop("half_width", 10.0), **kw)


def _empty_state(n, seed=0):
    z = lambda: np.zeros(n, dtype=np.int64)
    return sim.SimState(z(), z(), z(), z(), np.random.default_rng(seed))


def test_config_consistency():
    cfg = _cfg(p_diff_latent=0.3)
    p = cfg.params
    assert cfg.p_diff_latent * cfg.price_step**2 / (2 * cfg.tau) == pytest.approx(p.D_latent, rel=1e-12)
    assert cfg.p_diff_revealed * cfg.price_step**2 / (2 * cfg.tau) == pytest.approx(p.D_revealed, rel=1e-12)
    assert cfg.injection_per_step == pytest.approx(p.D_latent * p.L_latent * cfg.tau, rel=1e-12)


@pytest.mark.parametrize(
    "kw",
    [dict(n_bins=11), dict(n_bins=8), dict(tau=2.0), dict(p_diff_latent=1.5), dict(price_step=0.0)],
)
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        sim.SimConfig(**kw)


def test_config_dict_round_trip():
    cfg = _cfg(seed=5, wrong_side_mode="to_best_quote")
    assert sim.SimConfig.from_dict(cfg.to_dict()) == cfg


def test_trade_price_mid_of_best_quotes():
    cfg = sim.SimConfig(n_bins=40, price_step=1.0)
    s = _empty_state(40)
    s.revealed_bid[10] = 1
    s.revealed_ask[20] = 1
    centers = cfg.centers
    assert sim.trade_price(s, cfg) == pytest.approx(0.5 * (centers[10] + centers[20]))
    assert sim.trade_price(s, cfg) == pytest.approx(centers[15])


def test_trade_price_needs_both_sides():
    cfg = sim.SimConfig(n_bins=40)
    s = _empty_state(40)
    s.revealed_bid[3] = 2
    with pytest.raises(LiquidityCrisis):
        sim.trade_price(s, cfg)


def test_identity_dynamics_only_matches():
    cfg = sim.SimConfig(n_bins=20, p_diff_latent=0.0, p_diff_revealed=0.0, omega=1e-300, L_latent=1e-300, tau=1.0)
    s = _empty_state(20)
    s.latent_bid[:5] = 7
    s.latent_ask[15:] = 7
    s.revealed_bid[[4, 9]] = [3, 2]
    s.revealed_ask[[9, 12]] = [5, 1]
    s.mid_index2 = 21
    before = [b.copy() for b in s.books]
    sim.step(s, cfg)
    np.testing.assert_array_equal(s.latent_bid, before[0])
    np.testing.assert_array_equal(s.latent_ask, before[1])
    assert s.matched == 2
    assert s.revealed_bid[9] == 0 and s.revealed_ask[9] == 3
    assert s.mid_index2 == 4 + 9


def test_matching_uncrosses_books():
    s = _empty_state(10)
    s.revealed_bid[[2, 6]] = [4, 3]
    s.revealed_ask[[4, 8]] = [2, 5]
    removed = sim._match(s)
    assert removed == 2
    bids, asks = np.flatnonzero(s.revealed_bid), np.flatnonzero(s.revealed_ask)
    assert bids[-1] < asks[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["in_place", "to_best_quote"]))
def test_per_step_balance(seed, mode):
    cfg = _cfg(seed=seed, wrong_side_mode=mode)
    s = sim.initial_state(cfg)
    for _ in range(50):
        before = s.total()
        sim.step(s, cfg)
        assert s.total() - before == s.injected - 2 * s.matched - s.executed
        for b in s.books:
            assert b.min() >= 0
        bids, asks = np.flatnonzero(s.revealed_bid), np.flatnonzero(s.revealed_ask)
        assert s.crisis or bids[-1] < asks[0]


def test_balance_with_execution():
    cfg = _cfg(seed=3)
    s = sim.initial_state(cfg)
    for _ in range(20):
        before = s.total()
        sim.step(s, cfg)
        filled = sim.execute_market_buy(s, 5)
        assert filled == 5
        assert s.total() - before == s.injected - 2 * s.matched - s.executed


def test_injection_flux_unbiased():
    cfg = _cfg(seed=1)
    s = sim.initial_state(cfg)
    total = 0
    n = 400
    for _ in range(n):
        sim.step(s, cfg)
        total += s.injected
    expected = 2 * n * cfg.injection_per_step
    assert abs(total - expected) < 2.0


def test_determinism():
    cfg = _cfg(seed=11, n_steps=300, burn_in=50)
    a = sim.run(cfg)
    b = sim.run(cfg)
    np.testing.assert_array_equal(a.series.trade_price, b.series.trade_price)
    np.testing.assert_array_equal(a.series.fair_price, b.series.fair_price)
    np.testing.assert_array_equal(a.profile.phi_revealed, b.profile.phi_revealed)
    c = sim.run(cfg.replace(seed=12))
    assert not np.array_equal(a.series.fair_price, c.series.fair_price)


def test_state_copy_continues_identically():
    cfg = _cfg(seed=4)
    s = sim.initial_state(cfg)
    t = s.copy()
    for _ in range(30):
        sim.step(s, cfg)
        sim.step(t, cfg)
    for a, b in zip(s.books, t.books):
        np.testing.assert_array_equal(a, b)


def test_market_buy_moves_trade_price_up_monotonically():
    cfg = sim.SimConfig(n_bins=40, price_step=1.0)
    s = _empty_state(40)
    s.revealed_bid[15:19] = 3
    s.revealed_ask[21:30] = 3
    sim._update_price(s, cfg)
    prices = [sim.trade_price(s, cfg)]
    for _ in range(8):
        sim.execute_market_buy(s, 2)
        sim._update_price(s, cfg)
        prices.append(sim.trade_price(s, cfg))
    assert np.all(np.diff(prices) >= 0)
    assert prices[-1] > prices[0]


def test_market_orders_fill_from_the_best_quote():
    s = _empty_state(10)
    s.revealed_ask[[5, 7]] = [2, 4]
    assert sim.execute_market_buy(s, 3) == 3
    assert s.revealed_ask[5] == 0 and s.revealed_ask[7] == 3
    assert s.last_fill_bin == 7
    assert sim.execute_market_buy(s, 10) == 3
    s.revealed_bid[[1, 3]] = [2, 2]
    assert sim.execute_market_sell(s, 3) == 3
    assert s.revealed_bid[3] == 0 and s.revealed_bid[1] == 1
    assert s.last_fill_bin == 1


def test_fair_price_symmetric_book_at_centre():
    cfg = sim.SimConfig(n_bins=20, price_step=1.0)
    s = _empty_state(20)
    s.latent_bid[:10] = 5
    s.latent_ask[10:] = 5
    s.revealed_bid[9] = 2
    s.revealed_ask[10] = 2
    assert sim.fair_price(s, cfg) == pytest.approx(0.0, abs=1e-12)
    assert sim.trade_price(s, cfg) == pytest.approx(0.0, abs=1e-12)


def _direct_fair_price(s):
    # edges at -10..10 for 20 unit bins; root of ask-below minus bid-above
    ask = s.latent_ask + s.revealed_ask
    bid = s.latent_bid + s.revealed_bid
    edges = np.arange(21) - 10.0
    F = np.array([ask[:i].sum() - bid[i:].sum() for i in range(21)], dtype=float)
    i = np.flatnonzero(F >= 0)[0]
    return edges[i - 1] + (-F[i - 1]) / (F[i] - F[i - 1])


def _symmetric_state():
    s = _empty_state(20)
    s.latent_bid[:10] = 5
    s.latent_ask[10:] = 5
    s.revealed_bid[9] = 2
    s.revealed_ask[10] = 2
    return s


@pytest.mark.parametrize(
    "book, bin_, volume, direction",
    [("latent_bid", 1, 12, 0), ("latent_ask", 2, 12, -1), ("latent_bid", 17, 12, 1)],
)
def test_fair_price_against_direct_cumulative_sums(book, bin_, volume, direction):
    cfg = sim.SimConfig(n_bins=20, price_step=1.0)
    s = _symmetric_state()
    p_trade = sim.trade_price(s, cfg)
    p_fair = sim.fair_price(s, cfg)
    getattr(s, book)[bin_] += volume
    moved = sim.fair_price(s, cfg)
    assert moved == pytest.approx(_direct_fair_price(s), abs=1e-12)
    assert np.sign(round(moved - p_fair, 12)) == direction
    assert sim.trade_price(s, cfg) == p_trade


def test_fair_price_degenerate():
    cfg = sim.SimConfig(n_bins=10)
    s = _empty_state(10)
    s.latent_bid[2] = 1
    with pytest.raises(DegenerateBookError):
        sim.fair_price(s, cfg)


def test_volatility_examples():
    bars = np.array([[0.0, 2.0, 0.0, 2.0]])
    v = sim.volatility(bars)
    assert v.rogers_satchell == 0.0
    assert v.parkinson == pytest.approx(1.0 / math.log(2.0), rel=1e-15)
    flat = sim.PriceSeries(np.arange(501.0), np.full(501, 3.0), np.full(501, 3.0))
    v = sim.volatility(flat, window=100)
    assert v.rogers_satchell == 0.0 and v.parkinson == 0.0


@settings(max_examples=40)
@given(st.lists(st.floats(-5, 5), min_size=21, max_size=200))
def test_ohlc_bounds(prices):
    x = np.array(prices)
    series = sim.PriceSeries(np.arange(x.size, dtype=float), x, x)
    bars = series.ohlc(10)
    o, h, l, c = bars.T
    assert np.all(l <= o) and np.all(o <= h) and np.all(l <= c) and np.all(c <= h)
    v = sim.volatility(bars)
    assert v.parkinson >= 0 and v.rogers_satchell >= 0


def test_series_csv(tmp_path):
    cfg = _cfg(seed=2, n_steps=20, burn_in=0)
    r = sim.run(cfg, record_profile=False)
    r.series.to_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t,trade_price,fair_price"
    assert len(lines) == 21


def test_run_counts_balance_violations():
    cfg = _cfg(seed=9, n_steps=200, burn_in=0)
    r = sim.run(cfg, check_balance=True)
    assert r.balance_violations == 0
    meta = r.metadata(cfg)
    assert meta["n_steps"] == 200
    assert meta["injected_total"] > 0


def test_domain_overflow_aborts_run():
    cfg = _cfg(seed=1, n_steps=10, burn_in=0, edge_margin=0.5)
    r = sim.run(cfg)
    assert r.aborted
    with pytest.raises(DomainOverflow):
        sim.step(sim.initial_state(cfg), cfg)


def test_initial_state_follows_profile():
    cfg = _cfg(seed=0, L_latent=5000.0)
    s = sim.initial_state(cfg)
    p = cfg.params
    centers = cfg.centers
    # latent ask grows linearly with slope L far from the price
    far = centers > 5.0
    slope = np.polyfit(centers[far], s.latent_ask[far] / cfg.price_step, 1)[0]
    assert slope == pytest.approx(p.L_latent, rel=0.05)
    assert s.revealed_bid[: cfg.n_bins // 2].sum() > 0 and s.revealed_ask[cfg.n_bins // 2 :].sum() > 0


def test_profile_accumulator_folds_symmetrically():
    cfg = _cfg(seed=0, n_steps=50, burn_in=0, sample_every=1, L_latent=2000.0)
    r = sim.run(cfg)
    prof = r.profile
    assert prof.grid[0] >= 0
    assert "density_quantum" in prof.diagnostics
    assert np.all(prof.phi_revealed[prof.grid > 1.0] <= 0)


def test_compare_profiles_flags_mismatch():
    cfg = _cfg(seed=0, n_steps=200, burn_in=0, L_latent=2000.0)
    members = [sim.run(cfg.replace(seed=s)).profile for s in sim.ensemble_seeds(0, 4)]
    good = solve_stationary(cfg.params)
    bad = good.scaled(1.5)
    ok = sim.compare_profiles(members, good, xi_max=6.0, bin_width=0.5)
    wrong = sim.compare_profiles(members, bad, xi_max=6.0, bin_width=0.5)
    assert wrong.max_abs_z > ok.max_abs_z
    assert not wrong.passed()


def test_ensemble_seeds_distinct_and_stable():
    a = sim.ensemble_seeds(7, 5)
    assert a == sim.ensemble_seeds(7, 5)
    assert len(set(a)) == 5

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from lobmm import features as F
from lobmm.errors import InsufficientData, ZeroMidpoint

pos = st.floats(1e-3, 1e6, allow_nan=False)
nonneg = st.floats(0.0, 1e9, allow_nan=False)
qty_arrays = hnp.arrays(np.float64, 15, elements=st.floats(0.0, 1e4, allow_nan=False))
# flow notionals: either nothing traded or a realistic magnitude (cumsum-based windows
# cannot resolve values ~1e-170 next to values ~1)
flow = st.one_of(st.just(0.0), st.floats(1e-3, 1e6))


# -- price distance -----------------------------------------------------------------------
def test_price_distance_examples():
    assert F.price_distance([[100.0]], [100.0])[0, 0] == 0.0
    assert F.price_distance([[101.0]], [100.0])[0, 0] == pytest.approx(0.01, abs=1e-15)
    got = F.price_distance([[9400.5]], [9400.55])[0, 0]
    exact = Fraction(9400.5) / Fraction(9400.55) - 1
    assert got == pytest.approx(float(exact), rel=1e-9)
    assert got == pytest.approx(-5.319e-6, rel=1e-3)


def test_price_distance_rejects_non_positive_midpoint():
    with pytest.raises(ZeroMidpoint):
        F.price_distance([[1.0]], [0.0])


@given(mid=st.floats(1.0, 1e5), offsets=hnp.arrays(np.float64, 15, elements=st.floats(0.0, 1e3)))
def test_price_distance_sign_and_symmetry(mid, offsets):
    offsets = np.sort(offsets)
    bids = F.price_distance((mid - offsets)[None], np.array([mid]))[0]
    asks = F.price_distance((mid + offsets)[None], np.array([mid]))[0]
    assert np.all(bids <= 0.0) and np.all(asks >= 0.0)
    np.testing.assert_allclose(bids, -asks, rtol=1e-12, atol=1e-15)


# -- cumulative notional ------------------------------------------------------------------
def test_cumulative_notional_examples():
    assert F.cumulative_notional([100.0], [2.0])[0] == 200.0
    np.testing.assert_array_equal(F.cumulative_notional([100.0, 99.0], [1.0, 2.0]), [100.0, 298.0])


@given(prices=hnp.arrays(np.float64, 15, elements=st.floats(0.01, 1e5)), qty=qty_arrays)
def test_cumulative_notional_matches_double_loop_and_is_monotone(prices, qty):
    chi = F.cumulative_notional(prices, qty)
    naive = [sum(prices[j] * qty[j] for j in range(i + 1)) for i in range(15)]
    np.testing.assert_allclose(chi, naive, rtol=1e-12, atol=1e-9)
    assert np.all(np.diff(chi) >= 0.0)


# -- notional imbalance -------------------------------------------------------------------
def test_notional_imbalance_examples():
    assert F.notional_imbalance([5.0], [5.0])[0] == 0.0
    assert F.notional_imbalance([0.0], [3.0])[0] == 1.0
    assert F.notional_imbalance([100.0], [300.0])[0] == 0.5
    assert F.notional_imbalance([0.0], [0.0])[0] == 0.0


@given(hnp.arrays(np.float64, 15, elements=nonneg), hnp.arrays(np.float64, 15, elements=nonneg))
def test_notional_imbalance_bounded_and_antisymmetric(b, a):
    iota = F.notional_imbalance(b, a)
    assert np.all(np.abs(iota) <= 1.0)
    np.testing.assert_array_equal(F.notional_imbalance(a, b), -iota)


# -- order flow imbalance -----------------------------------------------------------------
def test_order_flow_imbalance_examples():
    acc = F.FlowAccumulators()
    np.testing.assert_array_equal(F.order_flow_imbalance(acc), np.zeros(30))
    acc.limit[0, 0] += 100.0 * 1.0
    assert F.order_flow_imbalance(acc)[0] == 100.0
    acc.reset()
    acc.limit[1, 3] = 500.0
    acc.cancel[1, 3] = 200.0
    acc.market[1, 3] = 400.0
    ofi = F.order_flow_imbalance(acc)
    assert ofi[15 + 3] == -100.0
    assert np.count_nonzero(ofi) == 1


# -- trade flow imbalance -----------------------------------------------------------------
def test_trade_flow_imbalance_examples():
    assert F.trade_flow_imbalance([5.0, 2.0], [0.0, 0.0], 2) == 1.0
    assert F.trade_flow_imbalance([2.0], [2.0], 1) == 0.0
    assert F.trade_flow_imbalance([100.0, 200.0], [50.0, 50.0], 2) == 0.5
    assert F.trade_flow_imbalance([], [], 3) == 0.0
    # only the last window counts
    assert F.trade_flow_imbalance([0.0, 9.0, 1.0], [9.0, 0.0, 0.0], 2) == 1.0
    with pytest.raises(ValueError):
        F.trade_flow_imbalance([1.0], [1.0], 0)


@given(hnp.arrays(np.float64, st.integers(1, 60), elements=flow), st.integers(1, 80), st.data())
def test_rolling_tfi_matches_pointwise_and_is_bounded(bi, window, data):
    si = data.draw(hnp.arrays(np.float64, len(bi), elements=flow))
    rolled = F.rolling_flow_imbalance(bi, si, window)
    assert np.all(np.abs(rolled) <= 1.0)
    for t in range(len(bi)):
        assert rolled[t] == pytest.approx(F.trade_flow_imbalance(bi[:t + 1], si[:t + 1], window), abs=1e-9)


# -- spread ---------------------------------------------------------------------------------
def test_spread_column_is_ask_minus_bid(small_dataset):
    col = small_dataset.columns.index("spread")
    expected = small_dataset.best_ask - small_dataset.best_bid
    np.testing.assert_allclose(small_dataset.features[:, col], expected, atol=1e-12)
    assert np.all(small_dataset.features[:, col] >= 0.0)


# -- custom RSI -----------------------------------------------------------------------------
def test_custom_rsi_examples():
    assert F.custom_rsi([1.0, 2.0, 3.0, 4.0], 10) == 1.0
    assert F.custom_rsi([5.0, 5.0, 5.0], 10) == 0.0
    m = [100.0, 101.0, 100.0]
    up = Fraction(101, 100) - 1
    down = 1 - Fraction(100, 101)
    exact = (up - down) / (up + down)
    assert F.custom_rsi(m, 2) == pytest.approx(float(exact), rel=1e-12)
    assert abs(F.custom_rsi(m, 2)) < 0.01
    with pytest.raises(InsufficientData):
        F.custom_rsi([1.0], 5)


@given(hnp.arrays(np.float64, st.integers(2, 60), elements=st.floats(1.0, 1e4)), st.integers(1, 80))
def test_rolling_rsi_matches_pointwise_and_is_bounded(m, window):
    rolled = F.rolling_rsi(m, window)
    assert np.all(np.abs(rolled) <= 1.0)
    for t in range(1, len(m)):
        assert rolled[t] == pytest.approx(F.custom_rsi(m[:t + 1], window), abs=1e-9)


# -- normalization --------------------------------------------------------------------------
def test_fit_normalizer_examples():
    stats = F.fit_normalizer(np.array([[0.0, 3.0], [2.0, 3.0]]))
    np.testing.assert_array_equal(stats.mean, [1.0, 3.0])
    np.testing.assert_array_equal(stats.std, [1.0, 1.0])   # population std; constant column clamped
    z = F.normalize(np.array([[0.0, 3.0], [2.0, 3.0]]), stats)
    np.testing.assert_array_equal(z, [[-1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(InsufficientData):
        F.fit_normalizer(np.zeros((1, 3)))


def test_normalize_identity_unit_and_clip():
    stats = F.NormalizerStats(np.array([5.0]), np.array([2.0]))
    assert F.normalize(np.array([5.0]), stats)[0] == 0.0
    assert F.normalize(np.array([7.0]), stats)[0] == 1.0
    assert F.normalize(np.array([5.0 + 100 * 2.0]), stats)[0] == 10.0
    assert F.normalize(np.array([5.0 - 100 * 2.0]), stats)[0] == -10.0


def test_self_normalized_day_has_zero_mean(small_dataset):
    stats = F.fit_normalizer(small_dataset.features)
    z = (small_dataset.features - stats.mean) / stats.std
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    varying = small_dataset.features.std(axis=0) > 0
    np.testing.assert_allclose(z.std(axis=0)[varying], 1.0, atol=1e-9)


def test_normalizer_stats_round_trip():
    stats = F.NormalizerStats(np.array([1.5, -2.0]), np.array([0.5, 3.0]), ("a", "b"))
    back = F.NormalizerStats.from_dict(stats.to_dict())
    np.testing.assert_array_equal(back.mean, stats.mean)
    assert back.columns == ("a", "b")


# -- observation frame ----------------------------------------------------------------------
def test_build_observation():
    rows = np.tile(np.arange(4.0), (100, 1))
    frame = F.build_observation(rows, 100)
    assert frame.shape == (100, 4) and np.all(frame == frame[0])
    short = F.build_observation(np.ones((30, 4)), 100)
    assert np.all(short[:70] == 0.0) and np.all(short[70:] == 1.0)
    hist = np.arange(150 * 2, dtype=float).reshape(150, 2)
    frame = F.build_observation(hist, 100)
    for k in range(100):
        np.testing.assert_array_equal(frame[-1 - k], hist[-1 - k])


# -- whole-day features -----------------------------------------------------------------------
def test_market_feature_layout():
    names = F.market_feature_names()
    assert len(names) == 115
    assert len(set(names)) == 115


def test_day_features_bounded_and_monotone(small_dataset):
    cols = small_dataset.columns
    X = small_dataset.features
    bounded = [i for i, c in enumerate(cols) if c.startswith(("iota", "tfi", "crsi"))]
    assert len(bounded) == 15 + 6 + 3
    assert np.all(np.abs(X[:, bounded]) <= 1.0)
    for side in ("bid", "ask"):
        idx = [cols.index(f"chi_{side}_{i}") for i in range(15)]
        assert np.all(np.diff(X[:, idx], axis=1) >= 0.0)
        xi = X[:, [cols.index(f"xi_{side}_{i}") for i in range(15)]]
        assert np.all(xi <= 0.0) if side == "bid" else np.all(xi >= 0.0)


def test_day_features_match_pointwise_functions(small_dataset):
    ds = small_dataset
    cols = ds.columns
    mid = ds.midpoint
    t = len(ds) // 2
    bid_p = ds.bid_px[t] * ds.tick_size
    ask_p = ds.ask_px[t] * ds.tick_size
    row = ds.features[t]
    np.testing.assert_allclose(row[:15], F.price_distance(bid_p[None], mid[t:t + 1])[0], rtol=1e-12)
    chi_b = F.cumulative_notional(bid_p, ds.bid_qty[t])
    chi_a = F.cumulative_notional(ask_p, ds.ask_qty[t])
    np.testing.assert_allclose(row[30:45], chi_b, rtol=1e-12)
    np.testing.assert_allclose(row[60:75], F.notional_imbalance(chi_b, chi_a), atol=1e-12)
    w = ds.windows[0]
    assert row[cols.index(f"tfi_notional_{w}")] == pytest.approx(
        F.trade_flow_imbalance(ds.bi_notional[:t + 1], ds.si_notional[:t + 1], w), abs=1e-9)
    assert row[cols.index(f"tfi_count_{w}")] == pytest.approx(
        F.trade_flow_imbalance(ds.bi_count[:t + 1], ds.si_count[:t + 1], w), abs=1e-9)
    assert row[cols.index(f"crsi_{w}")] == pytest.approx(F.custom_rsi(mid[:t + 1], w), abs=1e-9)

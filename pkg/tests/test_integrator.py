import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagalpha.integrator import cs_zscore, mega_factor, write_weights
from dagalpha.metrics import daily_cs_corr


def fixture(T=60, N=8, seed=0):
    rng = np.random.default_rng(seed)
    ret = rng.standard_normal((T, N))
    good = ret + 0.5 * rng.standard_normal((T, N))
    bad = -ret + 2.0 * rng.standard_normal((T, N))
    noise = rng.standard_normal((T, N))
    return {0: good, 1: bad, 2: noise}, ret


def test_cs_zscore_population_std_and_flat_rows():
    x = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0], [1.0, np.nan, 3.0]])
    z = cs_zscore(x)
    assert z[0] == pytest.approx([-np.sqrt(1.5), 0.0, np.sqrt(1.5)])
    assert np.isnan(z[1]).all()
    assert z[2, 0] == pytest.approx(-1.0) and np.isnan(z[2, 1])


def test_weights_follow_signed_trailing_ic():
    factors, ret = fixture()
    mega, hist = mega_factor(factors, ret, window=10, threshold=0.0, rebalance_every=5)
    entry = next(h for h in hist if h.rebalance_index == 20)
    for i, ic in zip(entry.ids, entry.trailing_ic):
        assert ic == pytest.approx(np.nanmean(daily_cs_corr(factors[i], ret)[10:20]))
    w = dict(zip(entry.ids, entry.weights))
    assert w[0] > 0 > w[1]
    assert sum(abs(v) for v in entry.weights) == pytest.approx(1.0)


def test_warmup_rows_are_nan_and_first_rebalance():
    factors, ret = fixture()
    mega, hist = mega_factor(factors, ret, window=10, rebalance_every=5, embargo=3)
    # first rebalance with a full window ending 3 rows back is t0 = 15
    assert np.isnan(mega[:15]).all()
    assert not np.isnan(mega[15]).any()
    assert hist[0].ids == [] and hist[3].rebalance_index == 15 and hist[3].ids


def test_threshold_filters_factors():
    factors, ret = fixture()
    _, hist = mega_factor(factors, ret, window=20, threshold=0.3, rebalance_every=10)
    for h in hist:
        assert 2 not in h.ids
        assert all(abs(c) >= 0.3 for c in h.trailing_ic)


def test_no_lookahead_with_embargo():
    factors, ret = fixture()
    mega, _ = mega_factor(factors, ret, window=10, rebalance_every=5, embargo=5)
    ret2 = ret.copy()
    ret2[25:] = np.random.default_rng(9).standard_normal(ret2[25:].shape)
    mega2, _ = mega_factor(factors, ret2, window=10, rebalance_every=5, embargo=5)
    # weights used on rows 25..34 only see returns before row 25
    np.testing.assert_array_equal(mega[:35], mega2[:35])


def test_single_factor_is_its_zscore():
    factors, ret = fixture()
    mega, _ = mega_factor({0: factors[0]}, ret, window=10, rebalance_every=5)
    np.testing.assert_allclose(mega[10:], cs_zscore(factors[0])[10:], atol=1e-12)


def test_empty_pool_and_argument_checks():
    _, ret = fixture()
    mega, hist = mega_factor({}, ret)
    assert np.isnan(mega).all() and hist == []
    with pytest.raises(ValueError):
        mega_factor({0: ret}, ret, window=2)
    with pytest.raises(ValueError):
        mega_factor({0: ret}, ret, rebalance_every=0)


def test_write_weights(tmp_path):
    factors, ret = fixture()
    _, hist = mega_factor(factors, ret, window=10, rebalance_every=10)
    dates = [f"d{i}" for i in range(len(ret))]
    write_weights(hist, dates, tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "rebalance_date,factor_id,trailing_ic,weight"
    assert lines[1].startswith("d10,0,")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(5, 15), st.integers(1, 7))
def test_mega_rows_are_standardised(seed, window, every):
    factors, ret = fixture(T=50, N=6, seed=seed)
    factors[0][np.random.default_rng(seed).random(factors[0].shape) < 0.1] = np.nan
    mega, _ = mega_factor(factors, ret, window=window, rebalance_every=every)
    for row in mega:
        v = row[~np.isnan(row)]
        if len(v) > 1:
            assert abs(v.mean()) < 1e-9
            assert v.std() == pytest.approx(1.0, abs=1e-9)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dagalpha.engine import EPS, cs_rank, evaluate, guard
from dagalpha.expr import parse
from dagalpha.panel import Panel
from dagalpha.synthetic import business_dates

from oracle import oracle_eval
from strategies import exprs


def make_panel(close, **other):
    close = np.asarray(close, dtype=float)
    if close.ndim == 1:
        close = close[:, None]
    feats = {k: close.copy() for k in ("open", "high", "low", "close", "vwap", "volume")}
    for k, v in other.items():
        v = np.asarray(v, dtype=float)
        feats[k] = v[:, None] if v.ndim == 1 else v
    T, N = close.shape
    return Panel(business_dates(T), tuple(f"A{i}" for i in range(N)), feats)


def col(text, panel):
    return evaluate(parse(text), panel)[:, 0]


def test_guard_sign_and_floor():
    y = np.array([0.0, 1e-12, -1e-12, 2.0, -3.0, np.nan])
    g = guard(y)
    assert g[:5].tolist() == [EPS, EPS, -EPS, 2.0, -3.0]
    assert np.isnan(g[5])


def test_div_by_zero_is_bounded():
    p = make_panel([1.0, 2.0], volume=[0.0, 0.0])
    assert col("Div($close, $volume)", p).tolist() == [1.0 / EPS, 2.0 / EPS]


def test_log_of_nonpositive_is_nan():
    p = make_panel([1.0, 0.0, -1.0])
    out = col("Log($close)", p)
    assert out[0] == pytest.approx(np.log(1 + EPS))
    assert out[1] == pytest.approx(np.log(EPS))
    assert np.isnan(out[2])


def test_rolling_warmup_is_nan():
    p = make_panel(np.arange(1.0, 8.0))
    out = col("TsMean($close, 3)", p)
    assert np.isnan(out[:2]).all()
    assert out[2:].tolist() == [2.0, 3.0, 4.0, 5.0, 6.0]


def test_nan_inside_window_propagates():
    p = make_panel([1.0, 2.0, np.nan, 4.0, 5.0, 6.0, 7.0])
    out = col("TsSum($close, 2)", p)
    assert np.isnan(out[[0, 2, 3]]).all()
    assert out[[1, 4, 5, 6]].tolist() == [3.0, 9.0, 11.0, 13.0]


def test_ref_and_delta():
    p = make_panel([1.0, 4.0, 9.0, 16.0])
    assert np.isnan(col("Ref($close, 2)", p)[:2]).all()
    assert col("Ref($close, 2)", p)[2:].tolist() == [1.0, 4.0]
    assert col("TsDelta($close, 1)", p)[1:].tolist() == [3.0, 5.0, 7.0]
    assert col("TsPctChange($close, 1)", p)[1:].tolist() == pytest.approx([3.0, 1.25, 7 / 9])


def test_std_is_sample_std():
    x = np.array([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0])
    p = make_panel(x)
    assert col("TsStd($close, 8)", p)[-1] == pytest.approx(np.std(x, ddof=1), rel=1e-14)
    assert col("TsVar($close, 8)", p)[-1] == pytest.approx(np.var(x, ddof=1), rel=1e-14)


def test_skew_kurt_match_unbiased_estimators():
    x = np.array([1.0, 3.0, 2.0, 8.0, 4.0, 6.0, 5.0])
    p = make_panel(x)
    assert col("TsSkew($close, 7)", p)[-1] == pytest.approx(stats.skew(x, bias=False), rel=1e-12)
    assert col("TsKurt($close, 7)", p)[-1] == pytest.approx(stats.kurtosis(x, bias=False), rel=1e-12)


def test_constant_window_statistics():
    p = make_panel([3.0] * 6)
    for text in ("TsSkew($close, 4)", "TsKurt($close, 4)", "TsIr($close, 4)"):
        assert np.isnan(col(text, p)).all(), text
    assert col("TsStd($close, 4)", p)[-1] == 0.0
    assert np.isnan(col("TsCorr($close, $open, 3)", p)).all()


def test_ts_rank_ties_and_bounds():
    p = make_panel([1.0, 3.0, 2.0, 3.0, 0.5])
    out = col("TsRank($close, 3)", p)
    # windows [1,3,2] -> 2 is middle; [3,2,3] -> tie at top; [2,3,0.5] -> lowest
    assert out[2:].tolist() == [0.5, 0.75, 0.0]


def test_wma_and_ema():
    p = make_panel([1.0, 2.0, 3.0, 4.0])
    assert col("TsWMA($close, 3)", p)[-1] == pytest.approx((2 + 2 * 3 + 3 * 4) / 6)
    ema = col("TsEMA($close, 3)", p)
    # alpha = 0.5, seeded with the first value
    assert ema.tolist() == [1.0, 1.5, 2.25, 3.125]


def test_median_and_mad():
    x = [1.0, 9.0, 2.0, 8.0]
    p = make_panel(x)
    assert col("TsMed($close, 4)", p)[-1] == 5.0
    assert col("TsMad($close, 4)", p)[-1] == 3.5


def test_ts_corr_matches_numpy():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(10), rng.standard_normal(10)
    p = make_panel(x, volume=y)
    got = col("TsCorr($close, $volume, 10)", p)[-1]
    assert got == pytest.approx(np.corrcoef(x, y)[0, 1], rel=1e-12)
    cov = col("TsCov($close, $volume, 10)", p)[-1]
    assert cov == pytest.approx(np.cov(x, y)[0, 1], rel=1e-12)


def test_cs_rank_average_ties():
    x = np.array([[3.0, 1.0, 3.0, np.nan, 2.0], [np.nan, 5.0, np.nan, np.nan, np.nan]])
    r = cs_rank(x)
    assert r[0].tolist()[:3] == [5 / 6, 0.0, 5 / 6]
    assert r[0, 4] == pytest.approx(1 / 3)
    assert np.isnan(r[0, 3])
    assert r[1, 1] == 0.5


def test_comparisons_propagate_nan():
    p = make_panel([1.0, 2.0, np.nan], open=[2.0, 2.0, 1.0])
    assert col("Greater($close, $open)", p)[:2].tolist() == [0.0, 0.0]
    assert col("Less($close, $open)", p)[:2].tolist() == [1.0, 0.0]
    assert np.isnan(col("Greater($close, $open)", p)[2])


def test_overflow_becomes_nan():
    p = make_panel([1e200, 1e300])
    assert np.isnan(col("Mul($close, $close)", p)).all()


def test_result_is_writable_copy_and_cache_reused():
    p = make_panel(np.arange(1.0, 6.0))
    cache = {}
    a = evaluate(parse("TsMean(Abs($close), 2)"), p, cache)
    assert "Abs($close)" in cache
    a[:] = 0
    b = evaluate(parse("TsMean(Abs($close), 2)"), p, cache)
    assert b[-1] == 4.5


@st.composite
def panels(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    T, N = draw(st.integers(3, 25)), draw(st.integers(1, 5))
    feats = {}
    for k in ("open", "high", "low", "close", "vwap", "volume"):
        m = rng.lognormal(0, 0.3, (T, N)) * (1000 if k == "volume" else 10)
        if draw(st.booleans()):
            m = np.round(m, 1)  # ties for rank-type operators
        m[rng.random((T, N)) < 0.05] = np.nan
        feats[k] = m
    return Panel(business_dates(T), tuple(f"A{i}" for i in range(N)), feats)


@settings(max_examples=200, deadline=None)
@given(exprs, panels())
def test_engine_matches_oracle(e, p):
    got = evaluate(e, p)
    want = np.array(oracle_eval(e, {k: p[k].tolist() for k in p.features}), dtype=float)
    assert (np.isnan(got) == np.isnan(want)).all()
    ok = ~np.isnan(want)
    np.testing.assert_allclose(got[ok], want[ok], rtol=1e-9, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(exprs, panels())
def test_no_infinities_escape(e, p):
    assert not np.isinf(evaluate(e, p)).any()

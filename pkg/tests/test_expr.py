import random

import pytest
from hypothesis import given, settings, strategies as st

from dagalpha.expr import (DEFAULT_FLOAT_WHITELIST, Binary, ExprError, ExprParseError, Feature,
                           FloatConst, IntConst, Rolling2, Unary, canonical, depth, lint,
                           levenshtein, node_count, parse, random_expr, render, replace_features,
                           replace_windows, syntactic_distance, tokens, walk)

from strategies import exprs


def test_parse_nested_call():
    e = parse("Div(Sub($open, $close), $open)")
    assert e == Binary("Div", Binary("Sub", Feature("open"), Feature("close")), Feature("open"))


def test_rolling_window_is_int_node():
    e = parse("TsCorr($close, $volume, 10)")
    assert isinstance(e, Rolling2)
    assert e.window == IntConst(10)


def test_render_canonical_spacing():
    assert canonical("Add(  $close ,1.0)") == "Add($close, 1.0)"
    assert canonical("TsMean($close,5)") == "TsMean($close, 5)"


def test_float_render_keeps_decimal_point():
    assert render(FloatConst(2.0)) == "2.0"
    assert render(FloatConst(0.0001)) == "0.0001"
    assert render(FloatConst(-0.5)) == "-0.5"


def test_aliases_resolve():
    assert parse("Slog1p($close)") == Unary("SLog1p", Feature("close"))
    assert parse("TsDiv($close, 5)").op == "TsRatio"


@pytest.mark.parametrize("text, fragment", [
    ("TsMean($close)", "takes 2 arguments"),
    ("Add($close)", "takes 2 arguments"),
    ("Rank($close, $open)", "takes 1 arguments"),
    ("Foo($close)", "unknown operator"),
    ("$price", "unknown feature"),
    ("TsMean($close, 2.5)", "window must be an integer"),
    ("TsMean($close, $open)", "window must be an integer"),
    ("TsMean($close, 0)", ">= 1"),
    ("Pow($close, $open)", "exponent must be a constant"),
    ("Add($close, $open", "expected rparen"),
    ("Add($close, $open))", "trailing input"),
    ("Add($close; $open)", "unexpected character"),
    ("", "end of input"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ExprParseError, match=fragment):
        parse(text)


def test_parse_error_reports_offset():
    with pytest.raises(ExprParseError) as info:
        parse("Add($close, Foo($open))")
    assert info.value.offset == 12


def test_typo_form_is_rejected():
    # upper-cased operator names are not silently accepted
    with pytest.raises(ExprError):
        parse("TSMAD($close, 5)")


def test_node_count_and_tokens():
    e = parse("TsCorr(TsDelta($close, 5), $low, 5)")
    assert tokens(e) == ("TsCorr", "TsDelta", "$close", "5", "$low", "5")
    assert node_count(e) == 6
    assert depth(e) == 3


def test_walk_includes_windows():
    e = parse("TsMean(Abs($close), 3)")
    paths = [p for p, _ in walk(e)]
    assert paths == [(), (0,), (0, 0), (1,)]


def test_replace_helpers():
    e = parse("TsMean(Sub($open, Ref($close, 1)), 5)")
    assert render(replace_features(e, {"open": "vwap"})) == "TsMean(Sub($vwap, Ref($close, 1)), 5)"
    assert render(replace_windows(e, 10)) == "TsMean(Sub($open, Ref($close, 1)), 10)"


def test_int_const_must_be_positive():
    with pytest.raises(ExprError):
        IntConst(0)


# ---------------------------------------------------------------- lint

def test_lint_length_limit():
    e = parse("Add($close, $open)")
    assert lint(e, max_len=3).ok
    report = lint(e, max_len=2)
    assert [v.code for v in report.errors] == ["length"]


def test_lint_float_whitelist_and_int_arith():
    report = lint(parse("Add(Mul($close, 0.5), 3)"))
    codes = sorted(v.code for v in report.errors)
    assert codes == ["float-whitelist", "int-arith"]
    assert lint(parse("Add(Mul($close, 0.5), 3)"), float_whitelist=None).ok


def test_lint_accepts_whitelisted_floats():
    for f in DEFAULT_FLOAT_WHITELIST:
        assert lint(Binary("Add", Feature("close"), FloatConst(f))).ok


def test_dimension_warnings_do_not_block():
    report = lint(parse("Add($close, $volume)"))
    assert report.ok
    assert "dim-mismatch" in [v.code for v in report.warnings]
    assert lint(parse("Div($vwap, $close)")).violations == []


# ---------------------------------------------------------------- distance

def test_levenshtein_basics():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein((), ("a",)) == 1
    assert levenshtein(("a", "b"), ("a", "b")) == 0


def test_syntactic_distance_hand_example():
    a = parse("TsMean($close, 5)")
    b = parse("TsMean($open, 5)")
    # one substitution over 3 + 3 tokens
    assert syntactic_distance(a, b) == pytest.approx(1 / 6)
    assert syntactic_distance(a, a) == 0.0


@settings(max_examples=300, deadline=None)
@given(exprs)
def test_round_trip(e):
    assert parse(render(e)) == e
    assert len(tokens(e)) == node_count(e)


@settings(max_examples=150, deadline=None)
@given(exprs, exprs)
def test_distance_is_bounded_and_symmetric(a, b):
    d = syntactic_distance(a, b)
    assert 0.0 <= d <= 1.0
    assert d == syntactic_distance(b, a)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_random_expr_respects_depth(seed):
    e = random_expr(random.Random(seed), max_depth=4)
    assert depth(e) <= 4
    assert parse(render(e)) == e

"""Vectorised evaluation of expressions over a panel.

Every operator maps date x asset matrices to a date x asset matrix.  Rolling
statistics require a full window of valid observations; numerical
pathologies (division blow-ups, logs of non-positive values, overflow) come
out as NaN rather than raising.

Window reductions are accumulated oldest-to-newest over window offsets, so
the arithmetic matches a straightforward per-cell loop operation for
operation.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .expr import (Binary, Expr, Feature, FloatConst, IntConst, Rolling1, Rolling2,
                   Unary, render)
from .panel import Panel

EPS = 1e-8
DDOF = 1


def guard(y: np.ndarray) -> np.ndarray:
    """Sign-preserving denominator: sign(y) * max(|y|, EPS), sign(0) = +1."""
    return np.where(y >= 0, 1.0, -1.0) * np.maximum(np.abs(y), EPS)


def _finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not x.flags.writeable:
        x = x.copy()
    x[np.isinf(x)] = np.nan
    return x


def _lag(x: np.ndarray, d: int) -> np.ndarray:
    out = np.full_like(x, np.nan)
    if d < len(x):
        out[d:] = x[:-d]
    return out


def _views(x: np.ndarray, d: int) -> list:
    """Shifted copies of ``x``; element j holds lag d-1-j (oldest first)."""
    return [_lag(x, d - 1 - j) if d - 1 - j else x for j in range(d)]


def _sum(vs: list) -> np.ndarray:
    s = vs[0].copy()
    for v in vs[1:]:
        s += v
    return s


def _anynan(vs: list) -> np.ndarray:
    m = np.isnan(vs[0])
    for v in vs[1:]:
        m |= np.isnan(v)
    return m


def _minmax(vs: list, fn) -> np.ndarray:
    out = vs[0].copy()
    for v in vs[1:]:
        out = fn(out, v)
    return out


def _flat(vs: list) -> np.ndarray:
    return _minmax(vs, np.maximum) == _minmax(vs, np.minimum)


def _central(vs: list, power: int) -> tuple:
    m = _sum(vs) / len(vs)
    acc = None
    for v in vs:
        dev = v - m
        term = dev * dev
        if power == 3:
            term = term * dev
        elif power == 4:
            term = term * term
        acc = term if acc is None else acc + term
    return m, acc


def _var(vs: list) -> np.ndarray:
    _, ss = _central(vs, 2)
    return ss / (len(vs) - DDOF)


def _median(vs: list) -> np.ndarray:
    return np.median(np.stack(vs), axis=0)


def _skew(vs: list) -> np.ndarray:
    n = len(vs)
    if n < 3:
        return np.full_like(vs[0], np.nan)
    _, s2 = _central(vs, 2)
    _, s3 = _central(vs, 3)
    m2, m3 = s2 / n, s3 / n
    g1 = m3 / (m2 * np.sqrt(m2))
    out = g1 * (np.sqrt(n * (n - 1.0)) / (n - 2.0))
    out[_flat(vs)] = np.nan
    return out


def _kurt(vs: list) -> np.ndarray:
    n = len(vs)
    if n < 4:
        return np.full_like(vs[0], np.nan)
    _, s2 = _central(vs, 2)
    _, s4 = _central(vs, 4)
    m2, m4 = s2 / n, s4 / n
    g2 = m4 / (m2 * m2) - 3.0
    out = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))
    out[_flat(vs)] = np.nan
    return out


def _ts_rank(vs: list) -> np.ndarray:
    d = len(vs)
    cur = vs[-1]
    less = np.zeros_like(cur)
    eq = np.zeros_like(cur)
    for v in vs:
        less += v < cur
        eq += v == cur
    if d == 1:
        out = np.full_like(cur, 0.5)
    else:
        out = (less + (eq + 1.0) / 2.0 - 1.0) / (d - 1.0)
    out[_anynan(vs)] = np.nan
    return out


def _wma(vs: list) -> np.ndarray:
    d = len(vs)
    acc = vs[0] * 1.0
    for j, v in enumerate(vs[1:], 2):
        acc = acc + v * float(j)
    return acc / (d * (d + 1) / 2.0)


def _ema(x: np.ndarray, d: int) -> np.ndarray:
    alpha = 2.0 / (d + 1.0)
    out = np.full_like(x, np.nan)
    prev = np.full(x.shape[1], np.nan)
    for t in range(len(x)):
        cur = x[t]
        seeded = ~np.isnan(prev)
        nxt = np.where(seeded, alpha * cur + (1.0 - alpha) * prev, cur)
        nxt = np.where(np.isnan(cur), prev, nxt)
        out[t] = nxt
        prev = nxt
    return out


def _rolling1(op: str, x: np.ndarray, d: int) -> np.ndarray:
    if op == "Ref":
        return _lag(x, d)
    if op == "TsDelta":
        return x - _lag(x, d)
    if op == "TsRatio":
        return x / guard(_lag(x, d))
    if op == "TsPctChange":
        return x / guard(_lag(x, d)) - 1.0
    if op == "TsEMA":
        return _ema(x, d)
    vs = _views(x, d)
    if op == "TsMean":
        return _sum(vs) / d
    if op == "TsSum":
        return _sum(vs)
    if op == "TsVar":
        return _var(vs)
    if op == "TsStd":
        return np.sqrt(_var(vs))
    if op == "TsIr":
        out = (_sum(vs) / d) / np.sqrt(_var(vs))
        out[_flat(vs)] = np.nan
        return out
    if op == "TsMin":
        return _minmax(vs, np.minimum)
    if op == "TsMax":
        return _minmax(vs, np.maximum)
    if op == "TsMinMaxDiff":
        return _minmax(vs, np.maximum) - _minmax(vs, np.minimum)
    if op == "TsMaxDiff":
        return x - _minmax(vs, np.maximum)
    if op == "TsMinDiff":
        return x - _minmax(vs, np.minimum)
    if op == "TsMed":
        return _median(vs)
    if op == "TsMad":
        med = _median(vs)
        return _median([np.abs(v - med) for v in vs])
    if op == "TsSkew":
        return _skew(vs)
    if op == "TsKurt":
        return _kurt(vs)
    if op == "TsRank":
        return _ts_rank(vs)
    if op == "TsWMA":
        return _wma(vs)
    raise ValueError(f"unknown rolling operator {op}")


def _rolling2(op: str, x: np.ndarray, y: np.ndarray, d: int) -> np.ndarray:
    xs, ys = _views(x, d), _views(y, d)
    bad = _anynan(xs) | _anynan(ys)
    mx, my = _sum(xs) / d, _sum(ys) / d
    sxy = None
    for a, b in zip(xs, ys):
        term = (a - mx) * (b - my)
        sxy = term if sxy is None else sxy + term
    if op == "TsCov":
        out = sxy / (d - DDOF)
    elif op == "TsCorr":
        _, sxx = _central(xs, 2)
        _, syy = _central(ys, 2)
        out = sxy / np.sqrt(sxx * syy)
        out[_flat(xs) | _flat(ys)] = np.nan
    else:
        raise ValueError(f"unknown rolling operator {op}")
    out[bad] = np.nan
    return out


def cs_rank(x: np.ndarray) -> np.ndarray:
    """Per-date average rank of valid entries mapped to [0, 1]."""
    r = rankdata(x, axis=1, nan_policy="omit")
    n = np.sum(~np.isnan(x), axis=1, keepdims=True).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(n > 1, (r - 1.0) / (n - 1.0), 0.5)
    out[np.isnan(x)] = np.nan
    return out


def _unary(op: str, x: np.ndarray) -> np.ndarray:
    if op == "Abs":
        return np.abs(x)
    if op == "Sign":
        return np.sign(x)
    if op == "Log":
        z = x + EPS
        return np.where(z > 0, np.log(np.where(z > 0, z, 1.0)), np.nan)
    if op == "SLog1p":
        return np.sign(x) * np.log1p(np.abs(x))
    if op == "Inv":
        return 1.0 / guard(x)
    if op == "Rank":
        return cs_rank(x)
    raise ValueError(f"unknown unary operator {op}")


def _binary(op: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if op == "Add":
        return x + y
    if op == "Sub":
        return x - y
    if op == "Mul":
        return x * y
    if op == "Div":
        return x / guard(y)
    if op == "Pow":
        # IEEE gives NaN ** 0 == 1; a missing base stays missing
        return np.where(np.isnan(x) | np.isnan(y), np.nan, np.power(x, y))
    if op in ("Greater", "Less"):
        cmp = (x > y) if op == "Greater" else (x < y)
        return np.where(np.isnan(x) | np.isnan(y), np.nan, cmp.astype(float))
    if op == "GetGreater":
        return np.maximum(x, y)
    if op == "GetLess":
        return np.minimum(x, y)
    raise ValueError(f"unknown binary operator {op}")


def evaluate(expr: Expr, panel: Panel, cache: Optional[dict] = None) -> np.ndarray:
    """Evaluate ``expr`` to a date x asset matrix.

    ``cache`` maps rendered subexpressions to results and may be shared
    across calls on the same panel.
    """
    if cache is None:
        cache = {}
    shape = panel.shape

    def ev(e: Expr) -> np.ndarray:
        if isinstance(e, Feature):
            return panel[e.name]
        if isinstance(e, (IntConst, FloatConst)):
            return np.full(shape, float(e.value))
        key = render(e)
        hit = cache.get(key)
        if hit is not None:
            return hit
        with np.errstate(all="ignore"):
            if isinstance(e, Unary):
                out = _unary(e.op, ev(e.child))
            elif isinstance(e, Binary):
                out = _binary(e.op, ev(e.left), ev(e.right))
            elif isinstance(e, Rolling1):
                out = _rolling1(e.op, ev(e.child), e.window.value)
            elif isinstance(e, Rolling2):
                out = _rolling2(e.op, ev(e.left), ev(e.right), e.window.value)
            else:
                raise TypeError(f"not an expression: {e!r}")
        out = _finite(out)
        out.setflags(write=False)
        cache[key] = out
        return out

    result = ev(expr)
    return np.array(result, dtype=float)

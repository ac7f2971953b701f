"""Long-only top-fraction backtest with overlapping holding tranches."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .panel import Panel

log = logging.getLogger(__name__)

STD_FLOOR = 1e-12


@dataclass
class BacktestResult:
    daily_returns: np.ndarray
    wealth: np.ndarray
    ar: float
    mdd: float
    sr: float
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        nan_none = lambda v: None if isinstance(v, float) and math.isnan(v) else v
        return {"ar": nan_none(self.ar), "mdd": nan_none(self.mdd), "sr": nan_none(self.sr), **self.config}

    def write_curve(self, dates, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "daily_return", "wealth"])
            for d, r, wv in zip(dates, self.daily_returns, self.wealth):
                w.writerow([getattr(d, "isoformat", lambda: d)(), repr(float(r)), repr(float(wv))])

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def max_drawdown(wealth) -> float:
    w = np.asarray(wealth, dtype=float)
    if len(w) == 0:
        return 0.0
    peak = np.maximum.accumulate(w)
    # (peak - w) is exact when w >= peak / 2, leaving one rounding step
    return float(np.max((peak - w) / peak))


def performance(daily_returns, periods: int = 252, risk_free: float = 0.0) -> dict:
    r = np.asarray(daily_returns, dtype=float)
    ar = periods * float(np.mean(r)) if len(r) else math.nan
    mdd = max_drawdown(np.cumprod(1.0 + r))
    ex = r - risk_free
    sr = math.nan
    if len(ex) >= 2:
        sd = float(np.std(ex, ddof=1))
        if sd > STD_FLOOR:
            sr = math.sqrt(periods) * float(np.mean(ex)) / sd
    return {"ar": ar, "mdd": mdd, "sr": sr}


def _select(row: np.ndarray, top_frac: float) -> np.ndarray:
    valid = np.flatnonzero(~np.isnan(row))
    n_pick = math.ceil(top_frac * len(valid))
    # stable sort on negated signal: ties keep asset order
    order = valid[np.argsort(-row[valid], kind="stable")]
    return order[:n_pick]


def simulate(signal: np.ndarray, panel: Panel, top_frac: float = 0.2, hold: int = 20,
             cost_rt: float = 0.001, periods: int = 252, risk_free: float = 0.0) -> BacktestResult:
    """Daily-cohort long-only backtest.

    Capital is split into ``hold`` tranches.  On day t the tranche opened at
    t - hold is liquidated and reinvested equal-weight in the top
    ``ceil(top_frac * n_valid)`` assets by signal at t, paying ``cost_rt``
    on that day.  Tranches are marked to market close-to-close, and the
    portfolio return is the average tranche return.
    """
    if hold < 1:
        raise ValueError("hold must be >= 1")
    if not 0 < top_frac <= 1:
        raise ValueError("top_frac must lie in (0, 1]")
    signal = np.asarray(signal, dtype=float)
    close = panel["close"]
    if signal.shape != close.shape:
        raise ValueError(f"signal shape {signal.shape} does not match panel {close.shape}")
    T, N = close.shape
    with np.errstate(invalid="ignore", divide="ignore"):
        asset_ret = np.zeros_like(close)
        asset_ret[1:] = close[1:] / close[:-1] - 1.0
    asset_ret[~np.isfinite(asset_ret)] = 0.0
    min_assets = math.ceil(1.0 / top_frac)

    # per-tranche position values (fractions of tranche capital), zeros = cash
    positions = np.zeros((hold, N))
    daily = np.zeros(T)
    for t in range(T):
        # mark every tranche from t-1 close to t close
        tranche_ret = np.zeros(hold)
        if t > 0:
            gross = positions.sum(axis=1)
            moved = positions * (1.0 + asset_ret[t])
            held = gross > 0
            tranche_ret[held] = moved[held].sum(axis=1) / gross[held] - 1.0
            positions = moved
        j = t % hold
        row = signal[t]
        n_valid = int(np.sum(~np.isnan(row)))
        if n_valid == 0:
            pass  # keep prior holdings
        elif n_valid < min_assets:
            log.warning("day %d: %d valid signals, need %d; tranche %d held in cash",
                        t, n_valid, min_assets, j)
            positions[j] = 0.0
        else:
            picks = _select(row, top_frac)
            positions[j] = 0.0
            positions[j, picks] = 1.0 / len(picks)
            tranche_ret[j] -= cost_rt
        daily[t] = tranche_ret.sum() / hold
    wealth = np.cumprod(1.0 + daily)
    perf = performance(daily, periods, risk_free)
    return BacktestResult(daily, wealth, perf["ar"], perf["mdd"], perf["sr"], {
        "hold": hold, "top_frac": top_frac, "cost_rt": cost_rt,
        "periods_per_year": periods, "risk_free": risk_free,
    })

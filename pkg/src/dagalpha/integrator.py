"""Dynamic composite ("Mega") factor from recently effective pool members.

Every ``rebalance_every`` days each factor's trailing IC is measured over
the previous ``window`` days of daily cross-sectional Pearson correlations
(ending ``embargo`` rows before the rebalance date).  Factors with
|IC| >= ``threshold`` are kept with weights proportional to their signed IC,
normalised to unit gross weight, and the composite is the weighted sum of
per-date cross-sectional z-scores until the next rebalance, itself
z-scored per date so assets dropped by NaN propagation do not bias it.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .metrics import daily_cs_corr

DEFAULT_WINDOW = 60
DEFAULT_THRESHOLD = 0.0
DEFAULT_REBALANCE = 5


@dataclass
class MegaWeights:
    rebalance_index: int
    window: int
    ids: list = field(default_factory=list)
    trailing_ic: list = field(default_factory=list)
    weights: list = field(default_factory=list)


def cs_zscore(x: np.ndarray) -> np.ndarray:
    """Per-date z-score over valid entries (population std); flat rows -> NaN."""
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mu = np.nanmean(x, axis=1, keepdims=True)
        sd = np.nanstd(x, axis=1, keepdims=True)
        z = (x - mu) / sd
    z[~np.isfinite(z)] = np.nan
    flat = ~(sd > 1e-15)
    z[np.broadcast_to(flat, z.shape)] = np.nan
    return z


def mega_factor(factors: dict, returns, window: int = DEFAULT_WINDOW,
                threshold: float = DEFAULT_THRESHOLD, rebalance_every: int = DEFAULT_REBALANCE,
                embargo: int = 0) -> tuple:
    """Combine ``factors`` (id -> matrix) into one signal.

    Returns ``(mega, history)`` where ``history`` lists a ``MegaWeights``
    per rebalance.
    """
    if window < 5:
        raise ValueError("window must be >= 5")
    if threshold < 0 or rebalance_every < 1 or embargo < 0:
        raise ValueError("threshold >= 0, rebalance_every >= 1 and embargo >= 0 required")
    ret = np.asarray(getattr(returns, "values", returns), dtype=float)
    shape = ret.shape
    mega = np.full(shape, np.nan)
    history = []
    if not factors:
        return mega, history
    ids = list(factors)
    rho = {i: daily_cs_corr(factors[i], ret, "pearson") for i in ids}
    z = {i: cs_zscore(np.asarray(factors[i], dtype=float)) for i in ids}
    T = shape[0]
    with np.errstate(invalid="ignore"):
        for t0 in range(0, T, rebalance_every):
            t1 = min(T, t0 + rebalance_every)
            end = t0 - embargo
            start = end - window
            entry = MegaWeights(t0, window)
            history.append(entry)
            if start < 0:
                continue
            for i in ids:
                r = rho[i][start:end]
                if np.all(np.isnan(r)):
                    continue
                ic = float(np.nanmean(r))
                if abs(ic) >= threshold and ic != 0.0:
                    entry.ids.append(i)
                    entry.trailing_ic.append(ic)
            if not entry.ids:
                continue
            gross = sum(abs(c) for c in entry.trailing_ic)
            entry.weights = [c / gross for c in entry.trailing_ic]
            acc = np.zeros((t1 - t0, shape[1]))
            for i, w in zip(entry.ids, entry.weights):
                acc = acc + w * z[i][t0:t1]
            mega[t0:t1] = acc
    return cs_zscore(mega), history


def write_weights(history: list, dates, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rebalance_date", "factor_id", "trailing_ic", "weight"])
        for h in history:
            d = dates[h.rebalance_index]
            for fid, ic, wt in zip(h.ids, h.trailing_ic, h.weights):
                w.writerow([getattr(d, "isoformat", lambda: d)(), fid, repr(ic), repr(wt)])

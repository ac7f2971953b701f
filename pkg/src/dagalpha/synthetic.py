"""Synthetic panels with a planted predictive signal, for tests and demos."""
from __future__ import annotations

from datetime import date

import numpy as np

from .config import MiningConfig, SeedFactor
from .panel import Panel

HIDDEN_EXPR = "Div($vwap, $close)"

# Expressions a mutation-based generator can reach from the seeds that also
# carry the planted signal in some form.
NEIGHBORHOOD = (
    "Div($vwap, $close)",
    "TsMean(Div($vwap, $close), 5)",
    "Rank(Div($vwap, $close))",
    "Sub(Div($vwap, $close), 1.0)",
    "Div(Sub($vwap, $close), $close)",
    "TsEMA(Div($vwap, $close), 3)",
)

SEEDS = (
    SeedFactor("Div($open, $close)", "overnight gap",
               "Opening price relative to the close captures the overnight move."),
    SeedFactor("Div(Sub($high, $low), $close)", "intraday range",
               "Normalised daily range measures intraday volatility."),
    SeedFactor("TsPctChange($volume, 5)", "volume momentum",
               "Five-day change in traded volume."),
)


def business_dates(n: int, start: date = date(2020, 1, 1)) -> tuple:
    days = np.busday_offset(np.datetime64(start), np.arange(n), roll="forward")
    return tuple(d.item() for d in days)


def planted_panel(n_dates: int = 400, n_assets: int = 40, seed: int = 0, phi: float = 0.95,
                  beta: float = 0.004, noise: float = 0.02, kappa: float = 0.01) -> Panel:
    """Panel whose next-day return is ``beta * u + noise`` for a latent AR(1) ``u``.

    ``u`` is exposed only through ``vwap / close - 1 = kappa * u``, so the
    hidden expression ranks assets by their expected return.
    """
    rng = np.random.default_rng(seed)
    T, N = n_dates, n_assets
    u = np.empty((T, N))
    u[0] = rng.standard_normal(N)
    shock = rng.standard_normal((T, N)) * np.sqrt(1 - phi * phi)
    for t in range(1, T):
        u[t] = phi * u[t - 1] + shock[t]
    r = np.zeros((T, N))
    r[1:] = beta * u[:-1] + noise * rng.standard_normal((T - 1, N))
    close = 20.0 * np.exp(rng.normal(0, 0.3, N)) * np.cumprod(1 + r, axis=0)
    prev = np.vstack([close[:1], close[:-1]])
    open_ = prev * (1 + 0.005 * rng.standard_normal((T, N)))
    vwap = close * (1 + kappa * u)
    top = np.maximum.reduce([open_, close, vwap])
    bottom = np.minimum.reduce([open_, close, vwap])
    high = top * (1 + np.abs(0.01 * rng.standard_normal((T, N))))
    low = bottom * (1 - np.abs(0.01 * rng.standard_normal((T, N))))
    volume = np.exp(rng.normal(13, 0.5, (T, N)))
    assets = tuple(f"A{i:03d}" for i in range(N))
    feats = {"open": open_, "high": high, "low": low, "close": close, "vwap": vwap,
             "volume": volume}
    return Panel(business_dates(T), assets, feats)


def default_splits(panel: Panel, train_frac: float = 0.6, valid_frac: float = 0.2) -> dict:
    T = len(panel.dates)
    a, b = int(T * train_frac), int(T * (train_frac + valid_frac))
    d = panel.dates
    return {"train": [d[0].isoformat(), d[a - 1].isoformat()],
            "valid": [d[a].isoformat(), d[b - 1].isoformat()],
            "test": [d[b].isoformat(), d[-1].isoformat()]}


def demo_config(panel: Panel, iterations: int = 30, seed: int = 0, **overrides) -> MiningConfig:
    cfg = dict(iterations=iterations, horizon=5, capacity=50, m=5, k=3,
               stagnation_limit=iterations, splits=default_splits(panel), seeds=list(SEEDS),
               seed=seed)
    cfg.update(overrides)
    c = MiningConfig(**cfg)
    c.provider.seed = seed
    c.provider.mock_neighborhood = list(NEIGHBORHOOD)
    c.integrator.window = 40
    return c

"""IC-family factor metrics, factor quality and factor-to-factor correlation."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

MIN_ASSETS = 2
IR_DDOF = 1
# Standard deviations at or below this are treated as zero (float noise).
STD_FLOOR = 1e-12


class EmptyReportError(ValueError):
    pass


def _row_pearson(x: np.ndarray, y: np.ndarray, min_assets: int) -> np.ndarray:
    """Pearson correlation per row over jointly valid columns."""
    valid = ~(np.isnan(x) | np.isnan(y))
    n = valid.sum(axis=1)
    xv = np.where(valid, x, 0.0)
    yv = np.where(valid, y, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = xv.sum(axis=1) / n
        my = yv.sum(axis=1) / n
        dx = np.where(valid, x - mx[:, None], 0.0)
        dy = np.where(valid, y - my[:, None], 0.0)
        sxx = (dx * dx).sum(axis=1)
        syy = (dy * dy).sum(axis=1)
        sxy = (dx * dy).sum(axis=1)
        rho = sxy / np.sqrt(sxx * syy)
    # zero variance: a row whose valid values are all equal
    flat_x = np.nanmax(np.where(valid, x, -np.inf), axis=1) == np.nanmin(np.where(valid, x, np.inf), axis=1)
    flat_y = np.nanmax(np.where(valid, y, -np.inf), axis=1) == np.nanmin(np.where(valid, y, np.inf), axis=1)
    rho[(n < min_assets) | flat_x | flat_y] = np.nan
    return np.clip(rho, -1.0, 1.0)


def _row_rank(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    masked = np.where(valid, x, np.nan)
    return rankdata(masked, axis=1, nan_policy="omit")


def daily_cs_corr(factor: np.ndarray, returns: np.ndarray, method: str = "pearson",
                  min_assets: int = MIN_ASSETS) -> np.ndarray:
    """Per-date cross-sectional correlation; NaN marks an invalid date."""
    factor = np.asarray(factor, dtype=float)
    returns = np.asarray(getattr(returns, "values", returns), dtype=float)
    if factor.shape != returns.shape:
        raise ValueError(f"shape mismatch: {factor.shape} vs {returns.shape}")
    if method == "pearson":
        return _row_pearson(factor, returns, min_assets)
    if method == "spearman":
        valid = ~(np.isnan(factor) | np.isnan(returns))
        return _row_pearson(_row_rank(factor, valid), _row_rank(returns, valid), min_assets)
    raise ValueError(f"unknown method {method!r}")


def _ir(series: np.ndarray) -> float:
    s = series[~np.isnan(series)]
    if len(s) < 2:
        return math.nan
    sd = float(np.std(s, ddof=IR_DDOF))
    if sd <= STD_FLOOR:
        return math.nan
    return float(np.mean(s)) / sd


@dataclass
class MetricReport:
    ic: float
    icir: float
    ric: float
    ricir: float
    valid_days: int
    pearson: np.ndarray = field(repr=False)
    spearman: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("pearson")
        d.pop("spearman")
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    def write_daily(self, path, dates) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "pearson", "spearman"])
            for d, p, s in zip(dates, self.pearson, self.spearman):
                w.writerow([getattr(d, "isoformat", lambda: d)(),
                            "" if np.isnan(p) else repr(float(p)),
                            "" if np.isnan(s) else repr(float(s))])


def report_from_series(pearson: np.ndarray, spearman: np.ndarray) -> MetricReport:
    valid = int(np.sum(~np.isnan(pearson)))
    if valid == 0:
        raise EmptyReportError("no valid days")
    return MetricReport(
        ic=abs(float(np.nanmean(pearson))),
        icir=_ir(pearson),
        ric=abs(float(np.nanmean(spearman))) if np.any(~np.isnan(spearman)) else math.nan,
        ricir=_ir(spearman),
        valid_days=valid,
        pearson=pearson,
        spearman=spearman,
    )


def ic_suite(factor: np.ndarray, returns, min_assets: int = MIN_ASSETS) -> MetricReport:
    return report_from_series(daily_cs_corr(factor, returns, "pearson", min_assets),
                              daily_cs_corr(factor, returns, "spearman", min_assets))


def quality(factor: np.ndarray, returns, min_assets: int = MIN_ASSETS) -> float:
    """|ICIR| of the factor against ``returns``; degenerate factors score 0."""
    rho = daily_cs_corr(factor, returns, "pearson", min_assets)
    q = _ir(rho)
    return 0.0 if math.isnan(q) else abs(q)


def factor_corr(a: np.ndarray, b: np.ndarray, min_assets: int = MIN_ASSETS) -> float:
    """Mean over valid dates of the daily cross-sectional Pearson correlation."""
    rho = daily_cs_corr(a, b, "pearson", min_assets)
    if np.all(np.isnan(rho)):
        return math.nan
    return float(np.nanmean(rho))

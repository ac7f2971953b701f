"""Market panel loading, validation and forward returns."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

import numpy as np

FEATURE_FIELDS = ("open", "high", "low", "close", "vwap", "volume")
CSV_HEADER = ("date", "asset") + FEATURE_FIELDS


class PanelError(ValueError):
    pass


class PanelParseError(PanelError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class DuplicateKeyError(PanelError):
    def __init__(self, row: int, key: tuple):
        super().__init__(f"row {row}: duplicate (date, asset) pair {key}")
        self.row = row
        self.key = key


class PanelValidationError(PanelError):
    def __init__(self, cells: list):
        shown = ", ".join(f"({d}, {a}): {why}" for d, a, why in cells[:10])
        more = f" and {len(cells) - 10} more" if len(cells) > 10 else ""
        super().__init__(f"{len(cells)} invalid cells: {shown}{more}")
        self.cells = cells


@dataclass(frozen=True, eq=False)
class Panel:
    """Date x asset matrices of the six base market features.

    Immutable after construction; the feature arrays are made read-only.
    """
    dates: tuple
    assets: tuple
    features: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise PanelError("dates must be strictly increasing")
        shape = (len(self.dates), len(self.assets))
        missing = set(FEATURE_FIELDS) - set(self.features)
        if missing:
            raise PanelError(f"missing features: {sorted(missing)}")
        for name in FEATURE_FIELDS:
            arr = self.features[name]
            if arr.shape != shape:
                raise PanelError(f"feature {name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.features[name]

    @property
    def shape(self) -> tuple:
        return (len(self.dates), len(self.assets))

    def date_slice(self, start=None, end=None) -> slice:
        """Row slice covering ``start <= date <= end`` (ISO strings or dates)."""
        start = _as_date(start) if start is not None else None
        end = _as_date(end) if end is not None else None
        lo = 0 if start is None else int(np.searchsorted(self._ordinals, start.toordinal(), "left"))
        hi = len(self.dates) if end is None else int(np.searchsorted(self._ordinals, end.toordinal(), "right"))
        return slice(lo, hi)

    @property
    def _ordinals(self) -> np.ndarray:
        return np.array([d.toordinal() for d in self.dates])

    def rows(self, sl: slice) -> "Panel":
        return Panel(self.dates[sl], self.assets,
                     {k: v[sl].copy() for k, v in self.features.items()})

    def between(self, start=None, end=None) -> "Panel":
        return self.rows(self.date_slice(start, end))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("|".join(d.isoformat() for d in self.dates).encode())
        h.update(b"\0")
        h.update("|".join(self.assets).encode())
        for name in FEATURE_FIELDS:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.features[name], dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ReturnMatrix:
    values: np.ndarray
    horizon: int


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


def _parse_float(text: str, row: int, name: str) -> float:
    text = text.strip()
    if text == "":
        return np.nan
    try:
        return float(text)
    except ValueError:
        raise PanelParseError(row, f"field {name!r} is not a number: {text!r}") from None


def check_cells(panel: Panel) -> list:
    """List (date, asset, reason) for cells breaking OHLC/volume consistency."""
    o, h, l, c, v = (panel[k] for k in ("open", "high", "low", "close", "volume"))
    bad = []
    with np.errstate(invalid="ignore"):
        full = ~(np.isnan(o) | np.isnan(h) | np.isnan(l) | np.isnan(c))
        low_bad = full & (l > np.minimum(o, c))
        high_bad = full & (h < np.maximum(o, c))
        vol_bad = ~np.isnan(v) & (v < 0)
    for mask, why in ((low_bad, "low above min(open, close)"),
                      (high_bad, "high below max(open, close)"),
                      (vol_bad, "negative volume")):
        for t, a in zip(*np.nonzero(mask)):
            bad.append((panel.dates[t].isoformat(), panel.assets[a], why))
    return bad


def from_records(records: Iterable[Mapping], on_invalid: str = "reject") -> Panel:
    """Build a panel from mappings carrying the CSV fields.

    ``on_invalid`` is ``"reject"`` (raise) or ``"mask"`` (set the offending
    cells' features to NaN).
    """
    if on_invalid not in ("reject", "mask"):
        raise ValueError("on_invalid must be 'reject' or 'mask'")
    cells: dict = {}
    for i, rec in enumerate(records):
        try:
            d = _as_date(str(rec["date"]).strip())
            asset = str(rec["asset"]).strip()
        except (KeyError, ValueError) as exc:
            raise PanelParseError(i, f"bad date/asset: {exc}") from None
        if not asset:
            raise PanelParseError(i, "empty asset identifier")
        key = (d, asset)
        if key in cells:
            raise DuplicateKeyError(i, (d.isoformat(), asset))
        vals = []
        for name in FEATURE_FIELDS:
            raw = rec.get(name)
            if raw is None:
                raise PanelParseError(i, f"missing field {name!r}")
            vals.append(raw if isinstance(raw, float) else _parse_float(str(raw), i, name))
        cells[key] = vals

    dates = tuple(sorted({d for d, _ in cells}))
    assets = tuple(sorted({a for _, a in cells}))
    di = {d: i for i, d in enumerate(dates)}
    ai = {a: i for i, a in enumerate(assets)}
    data = np.full((len(FEATURE_FIELDS), len(dates), len(assets)), np.nan)
    for (d, a), vals in cells.items():
        data[:, di[d], ai[a]] = vals
    panel = Panel(dates, assets, {k: data[j] for j, k in enumerate(FEATURE_FIELDS)})

    bad = check_cells(panel)
    if bad:
        if on_invalid == "reject":
            raise PanelValidationError(bad)
        feats = {k: v.copy() for k, v in panel.features.items()}
        for dstr, a, _ in bad:
            t, j = di[date.fromisoformat(dstr)], ai[a]
            for arr in feats.values():
                arr[t, j] = np.nan
        panel = Panel(dates, assets, feats)
    return panel


def load_panel(source: Union[str, Path, io.TextIOBase, Iterable[Mapping]],
               on_invalid: str = "reject") -> Panel:
    """Load a long-form CSV (path or open text stream) or a record iterable."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_panel(fh, on_invalid)
    if isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        reader = csv.reader(source)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise PanelParseError(0, f"header must be {','.join(CSV_HEADER)}")

        def rows():
            for i, row in enumerate(reader):
                if len(row) != len(CSV_HEADER):
                    raise PanelParseError(i, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
                yield dict(zip(CSV_HEADER, row))

        return from_records(rows(), on_invalid)
    return from_records(source, on_invalid)


def write_panel(panel: Panel, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, d in enumerate(panel.dates):
            for a, asset in enumerate(panel.assets):
                vals = [panel[k][t, a] for k in FEATURE_FIELDS]
                if all(np.isnan(vals)):
                    continue
                w.writerow([d.isoformat(), asset] + ["" if np.isnan(x) else repr(float(x)) for x in vals])


def forward_returns(panel: Panel, horizon: int) -> ReturnMatrix:
    """close(t + horizon) / close(t) - 1, NaN where undefined."""
    n = len(panel.dates)
    if horizon < 1 or horizon >= n:
        raise ValueError(f"horizon must be in [1, {n - 1}], got {horizon}")
    close = panel["close"]
    out = np.full(close.shape, np.nan)
    base = close[:-horizon]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = close[horizon:] / base - 1.0
    r[base == 0] = np.nan
    out[:-horizon] = r
    return ReturnMatrix(out, horizon)


def write_matrix(values: np.ndarray, panel: Panel, path, column: str = "value") -> None:
    """Long-form ``date,asset,<column>`` export of a date x asset matrix."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "asset", column])
        for t, d in enumerate(panel.dates):
            for a, asset in enumerate(panel.assets):
                x = values[t, a]
                w.writerow([d.isoformat(), asset, "" if np.isnan(x) else repr(float(x))])

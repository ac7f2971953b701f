"""Mining configuration (JSON-serialisable dataclasses)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Optional

from .expr import DEFAULT_FLOAT_WHITELIST
from .providers import ProviderSettings


@dataclass
class SeedFactor:
    expr: str
    topic: str = ""
    explanation: str = ""


@dataclass
class IntegratorConfig:
    window: int = 60
    threshold: float = 0.0
    rebalance_every: int = 5
    # rows between the end of the trailing-IC window and the rebalance date;
    # None means the forward-return horizon (no realised-return lookahead)
    embargo: Optional[int] = None


@dataclass
class BacktestConfig:
    top_frac: float = 0.2
    hold: int = 20
    cost_rt: float = 0.001
    periods: int = 252
    risk_free: float = 0.0


@dataclass
class MiningConfig:
    gamma: float = 0.05
    omega: float = 0.10
    capacity: int = 50
    max_len: int = 40
    m: int = 5
    k: int = 3
    tau_q: float = 0.10
    tau_d: float = 0.70
    iterations: int = 20
    horizon: int = 20
    stagnation_limit: int = 10
    float_whitelist: list = field(default_factory=lambda: sorted(DEFAULT_FLOAT_WHITELIST))
    # name -> [start, end] ISO dates, inclusive; null ends are open
    splits: dict = field(default_factory=lambda: {"train": [None, None]})
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    seeds: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0 <= self.gamma < 1 and 0 <= self.omega < 1):
            raise ValueError("gamma and omega must lie in [0, 1)")
        if self.capacity < 1 or self.m < 1 or self.k < 1 or self.max_len < 1:
            raise ValueError("capacity, m, k and max_len must be positive")
        if not (self.tau_q > 0 and 0 < self.tau_d <= 1):
            raise ValueError("tau_q must be > 0 and tau_d in (0, 1]")
        if "train" not in self.splits:
            raise ValueError("splits must include 'train'")
        spans = []
        for name, (start, end) in self.splits.items():
            lo = date.fromisoformat(start) if start else date.min
            hi = date.fromisoformat(end) if end else date.max
            if lo > hi:
                raise ValueError(f"split {name} ends before it starts")
            spans.append((lo, hi, name))
        spans.sort()
        for (_, hi, a), (lo, _, b) in zip(spans, spans[1:]):
            if lo <= hi:
                raise ValueError(f"splits {a} and {b} overlap")

    @property
    def whitelist(self) -> frozenset:
        return frozenset(float(x) for x in self.float_whitelist)

    @property
    def embargo(self) -> int:
        e = self.integrator.embargo
        return self.horizon if e is None else e

    def to_dict(self) -> dict:
        d = asdict(self)
        d["provider"].pop("api_key", None)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "MiningConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        nested = {"integrator": IntegratorConfig, "backtest": BacktestConfig,
                  "provider": ProviderSettings}
        for key, typ in nested.items():
            if key in doc:
                doc[key] = typ(**doc[key])
        if "seeds" in doc:
            doc["seeds"] = [s if isinstance(s, SeedFactor) else
                            SeedFactor(**s) if isinstance(s, dict) else SeedFactor(str(s))
                            for s in doc["seeds"]]
        if "splits" in doc:
            doc["splits"] = {k: list(v) for k, v in doc["splits"].items()}
        cfg = cls(**doc)
        cfg.provider = ProviderSettings.from_env(cfg.provider)
        return cfg

    @classmethod
    def load(cls, path) -> "MiningConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

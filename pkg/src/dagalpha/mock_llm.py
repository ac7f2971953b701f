"""Deterministic offline stand-in for the generation LLM.

Replies are a pure function of ``(seed, request)``: the strategy stage
returns tagged mutation recipes, the execution stage applies them to the
parent expression found in the prompt.  An optional neighbourhood table
lets a test plant specific expressions among the reachable mutations.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from typing import Sequence

from .expr import (FEATURES, Binary, ExprError, Feature, FloatConst, Rolling1, Unary, children,
                   parse, render, replace_features, replace_windows)
from .expr import IntConst
from .providers import ChatProvider, ChatRequest

_TAG_RE = re.compile(r"\[(\w+)(?::([^\]]*))?\]")
_WRAP_OPS = ("TsMean", "TsRank", "TsEMA", "TsWMA", "TsDelta", "TsStd", "TsIr")
_PRICES = ("open", "high", "low", "close", "vwap")


def _field(text: str, label: str) -> str:
    m = re.search(rf"^{label}:[ \t]*(.*)$", text, re.MULTILINE)
    return m.group(1).strip() if m else ""


def _num(text: str, default: int = 5) -> int:
    m = re.search(r"\b(?:Propose|length) (\d+)\b", text)
    return int(m.group(1)) if m else default


class MutationChatProvider(ChatProvider):
    def __init__(self, seed: int = 0, neighborhood: Sequence[str] = (), windows=(3, 5, 10, 20),
                 neighbor_prob: float = 0.3, fence_prob: float = 0.1, typo_prob: float = 0.1,
                 garbage_prob: float = 0.0, **kw):
        super().__init__(**kw)
        self.seed = seed
        self.neighborhood = [render(parse(t)) for t in neighborhood]
        self.windows = tuple(windows)
        self.neighbor_prob = neighbor_prob
        self.fence_prob = fence_prob
        self.typo_prob = typo_prob
        self.garbage_prob = garbage_prob

    def _rng(self, request: ChatRequest) -> random.Random:
        h = hashlib.sha256(f"{self.seed}:{request.digest()}".encode()).digest()
        return random.Random(int.from_bytes(h[:8], "little"))

    def _complete(self, request: ChatRequest) -> str:
        rng = self._rng(request)
        text = request.user_text
        if rng.random() < self.garbage_prob:
            return "Sure! Here are some ideas: " + text[:40]
        if '"expressions_fixed"' in text:
            payload = self._execute(text, rng)
        else:
            payload = self._strategize(text, rng)
        out = json.dumps(payload)
        if rng.random() < self.fence_prob:
            out = f"```json\n{out}\n```"
        return out

    # ------------------------------------------------------------ stage 1

    def _recipes(self, parent, rng: random.Random) -> list:
        feats = sorted({n.name for n in _features(parent)})
        out = []
        for a in feats:
            for b in FEATURES:
                if b != a and (a in _PRICES) == (b in _PRICES):
                    out.append(("swap", f"{a}->{b}",
                                f"Replace ${a} with ${b} to look at a related price field."))
        for op in _WRAP_OPS:
            d = rng.choice(self.windows)
            out.append(("wrap", f"{op},{d}", f"Smooth or normalise the signal over time with {op} over {d} days."))
        out.append(("rank", "", "Rank the signal cross-sectionally to remove market-wide level effects."))
        d = rng.choice(self.windows)
        out.append(("window", str(d), f"Change the lookback windows to {d} days."))
        if children(parent):
            out.append(("simplify", "", "Simplify the expression to its most informative component."))
        out.append(("ratio", rng.choice(_PRICES), "Scale the signal by a relative price level."))
        return out

    def _strategize(self, text: str, rng: random.Random) -> dict:
        m = _num(text)
        try:
            parent = parse(_field(text, "Expression"))
        except ExprError:
            parent = Feature("close")
        pool = self._recipes(parent, rng)
        rng.shuffle(pool)
        picks = pool[:m]
        for i in range(len(picks)):
            if self.neighborhood and rng.random() < self.neighbor_prob:
                k = rng.randrange(len(self.neighborhood))
                picks[i] = ("table", str(k), "Restructure the factor around a known related pattern.")
        return {"strategies": [f"[{kind}:{arg}] {desc}" for kind, arg, desc in picks]}

    # ------------------------------------------------------------ stage 2

    def _apply(self, parent, kind: str, arg: str, rng: random.Random):
        if kind == "swap":
            a, b = arg.split("->")
            return replace_features(parent, {a: b}), f"replaces {a} with {b}"
        if kind == "wrap":
            op, d = arg.split(",")
            return Rolling1(op, parent, IntConst(int(d))), f"applies {op} over {d} days"
        if kind == "rank":
            return Unary("Rank", parent), "cross-sectional rank of the parent signal"
        if kind == "window":
            return replace_windows(parent, int(arg)), f"uses {arg}-day windows"
        if kind == "simplify":
            subs = [c for c in children(parent) if children(c)] or list(children(parent))
            return rng.choice(subs), "keeps the core component of the parent"
        if kind == "ratio":
            return Binary("Div", parent, Feature(arg)), f"scales the signal by {arg}"
        if kind == "table":
            return parse(self.neighborhood[int(arg) % len(self.neighborhood)]), "related pattern"
        raise ValueError(kind)

    def _execute(self, text: str, rng: random.Random) -> dict:
        m = _num(text)
        try:
            parent = parse(_field(text, "Expression"))
        except ExprError:
            parent = Feature("close")
        block = text.split("Strategies:", 1)[-1]
        exprs, fixed, expl = [], [], []
        for line in block.strip().splitlines()[:m]:
            tag = _TAG_RE.search(line)
            child = FloatConst(1.0)
            why = "constant"
            if tag:
                try:
                    child, why = self._apply(parent, tag.group(1), tag.group(2) or "", rng)
                except (ValueError, ExprError, IndexError):
                    pass
            good = render(child)
            bad = good
            if rng.random() < self.typo_prob and "(" in good:
                bad = good.replace("(", " (", 1).replace(good.split("(")[0], good.split("(")[0].upper(), 1)
            exprs.append(bad)
            fixed.append(good)
            expl.append(f"This factor {why}, derived from {render(parent)}.")
        return {"expressions": exprs, "expressions_fixed": fixed, "explanations": expl}


def _features(e):
    if isinstance(e, Feature):
        yield e
    for c in children(e):
        yield from _features(c)

"""Three-stage child generation: strategies, expression synthesis, screening."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

from .expr import (DEFAULT_FLOAT_WHITELIST, DEFAULT_MAX_LEN, Expr, ExprError, lint, parse,
                   render)
from .graph import FactorGraph, FactorNode
from .providers import ChatProvider, ChatRequest, ProviderError, chat_json

log = logging.getLogger(__name__)

EMPTY_TRACE = "(empty trace: this factor is a seed)"
PLACEHOLDERS = ("topic", "num", "expressions", "explanations", "traces", "strategies")


class StageError(ProviderError):
    pass


def template(name: str) -> str:
    return resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def fill(text: str, **values) -> str:
    for key in PLACEHOLDERS:
        if key in values:
            text = text.replace("{" + key + "}", str(values[key]))
    return text


def render_trace(trace_nodes: list) -> str:
    """Ancestors of the parent, oldest first; the parent itself is excluded."""
    ancestors = trace_nodes[:-1]
    if not ancestors:
        return EMPTY_TRACE
    return "\n".join(f"depth {n.depth}: {n.text} -- {n.explanation}" for n in ancestors)


def build_request(stage: str, parent: FactorNode, trace_nodes: list, m: int, topic: str,
                  strategies=(), temperature: float = 0.7, tag: str = "") -> ChatRequest:
    body = fill(template(stage), topic=topic, num=m, expressions=parent.text,
                explanations=parent.explanation, traces=render_trace(trace_nodes),
                strategies="\n".join(f"{i}. {s}" for i, s in enumerate(strategies, 1)))
    return ChatRequest(template("system").strip(), (template("operators").strip(), body.strip()),
                       temperature=temperature, tag=tag)


@dataclass
class CandidateFactor:
    expr: Expr
    expr_text_raw: str
    explanation: str
    strategy: str
    parent_id: int
    stage_notes: list = field(default_factory=list)

    @property
    def text(self) -> str:
        return render(self.expr)


def _string_list(data, key: str) -> list:
    if not isinstance(data, dict) or not isinstance(data.get(key), list):
        raise StageError(f"response lacks a '{key}' array")
    return [x if isinstance(x, str) else str(x) for x in data[key]]


def propose_strategies(parent: FactorNode, trace_nodes: list, m: int, chat: ChatProvider,
                       topic: str = "", temperature: float = 0.7, retries: int = 3,
                       tag: str = "", on_prompt: Optional[Callable] = None) -> list:
    """Ask for ``m`` modification strategies; re-ask once if too few arrive."""
    got: list = []
    for attempt in range(2):
        req = build_request("strategy", parent, trace_nodes, m, topic,
                            temperature=temperature, tag=f"{tag}/strategy{attempt}")
        if on_prompt:
            on_prompt("strategy", req)
        resp = chat_json(chat, req, retries=retries)
        strategies = [s for s in _string_list(resp.data, "strategies") if s.strip()]
        if len(strategies) > len(got):
            got = strategies
        if len(got) >= m:
            break
    if not got:
        raise StageError("empty strategies array")
    return got[:m]


def synthesize(parent: FactorNode, strategies: list, trace_nodes: list, m: int,
               chat: ChatProvider, topic: str = "", temperature: float = 0.7, retries: int = 3,
               tag: str = "", on_prompt: Optional[Callable] = None) -> list:
    """Turn strategies into parsed candidates, preferring the repaired form."""
    if not strategies:
        raise StageError("no strategies to synthesize")
    req = build_request("execution", parent, trace_nodes, m, topic, strategies,
                        temperature=temperature, tag=f"{tag}/execution")
    if on_prompt:
        on_prompt("execution", req)
    data = chat_json(chat, req, retries=retries).data
    raw = _string_list(data, "expressions")
    fixed = _string_list(data, "expressions_fixed")
    expl = _string_list(data, "explanations")
    out = []
    for i in range(min(len(raw), m)):
        notes = []
        expr = None
        src = raw[i]
        for label, text in (("fixed", fixed[i] if i < len(fixed) else None), ("raw", raw[i])):
            if text is None:
                continue
            try:
                expr = parse(text.strip())
                src = text
                notes.append(f"parsed {label} form")
                break
            except ExprError as exc:
                notes.append(f"{label} form rejected: {exc}")
        if expr is None:
            log.info("dropping candidate %d of parent %d: %s", i, parent.id, "; ".join(notes))
            continue
        explanation = expl[i] if i < len(expl) and expl[i].strip() else f"variant of {parent.text}"
        strategy = strategies[i] if i < len(strategies) else ""
        out.append(CandidateFactor(expr, raw[i], explanation, strategy, parent.id, notes))
        if src != raw[i]:
            notes.append("repaired expression used")
    return out


def screen(candidates: list, graph: FactorGraph, max_len: int = DEFAULT_MAX_LEN,
           float_whitelist=DEFAULT_FLOAT_WHITELIST, rejected: Optional[list] = None) -> list:
    """Keep lint-clean candidates whose expression is new to the whole graph."""
    kept, seen = [], set()
    for c in candidates:
        report = lint(c.expr, max_len, float_whitelist)
        reason = None
        if not report.ok:
            reason = "; ".join(f"{v.code}: {v.message}" for v in report.errors)
        elif graph.has_expression(c.text):
            reason = "duplicate of an existing node"
        elif c.text in seen:
            reason = "duplicate within batch"
        if reason:
            c.stage_notes.append(f"screened out: {reason}")
            if rejected is not None:
                rejected.append((c, reason))
            continue
        for w in report.warnings:
            c.stage_notes.append(f"warning {w.code}: {w.message}")
        seen.add(c.text)
        kept.append(c)
    return kept


def generate(graph: FactorGraph, parent_id: int, chat: ChatProvider, m: int = 5, topic: str = "",
             max_len: int = DEFAULT_MAX_LEN, float_whitelist=DEFAULT_FLOAT_WHITELIST,
             temperature: float = 0.7, retries: int = 3, tag: str = "",
             on_prompt: Optional[Callable] = None, rejected: Optional[list] = None) -> list:
    parent = graph[parent_id]
    trace_nodes = graph.trace(parent_id)
    strategies = propose_strategies(parent, trace_nodes, m, chat, topic, temperature, retries,
                                    tag, on_prompt)
    cands = synthesize(parent, strategies, trace_nodes, m, chat, topic, temperature, retries,
                       tag, on_prompt)
    return screen(cands, graph, max_len, float_whitelist, rejected)

import json
import re

import pytest

from dagalpha.expr import parse
from dagalpha.generator import (EMPTY_TRACE, PLACEHOLDERS, StageError, build_request, generate,
                                propose_strategies, render_trace, screen, synthesize, template)
from dagalpha.graph import FactorGraph
from dagalpha.mock_llm import MutationChatProvider
from dagalpha.providers import FixtureChatProvider


def lineage():
    g = FactorGraph()
    a = g.insert_node(parse("Div($open, $close)"), "overnight gap", quality=0.2)
    b = g.insert_node(parse("Rank(Div($open, $close))"), "ranked gap", a, quality=0.3)
    return g, a, b


def test_templates_fill_every_placeholder():
    g, a, b = lineage()
    for stage in ("strategy", "execution"):
        req = build_request(stage, g[b], g.trace(b), 4, "gaps", ["s1", "s2"], tag="x")
        text = req.user_text
        for key in PLACEHOLDERS:
            assert "{" + key + "}" not in text
        assert "Expression: Rank(Div($open, $close))" in text
        assert "Explanation: ranked gap" in text
        assert "Topic: gaps" in text
        assert req.system == template("system").strip()
    assert "1. s1\n2. s2" in build_request("execution", g[b], g.trace(b), 2, "", ["s1", "s2"]).user_text


def test_operator_block_lists_known_operators():
    ops = re.findall(r"^  (\w+)\(", template("operators"), re.MULTILINE)
    from dagalpha.expr import PROMPT_OPS
    assert set(ops) == set(PROMPT_OPS)


def test_trace_excludes_parent():
    g, a, b = lineage()
    assert render_trace(g.trace(a)) == EMPTY_TRACE
    assert render_trace(g.trace(b)) == "depth 0: Div($open, $close) -- overnight gap"


def test_strategies_reasked_when_short():
    g, a, _ = lineage()
    chat = FixtureChatProvider(['{"strategies": ["one"]}', '{"strategies": ["a", "b", "c", "d"]}'])
    assert propose_strategies(g[a], g.trace(a), 3, chat) == ["a", "b", "c"]
    assert len(chat.requests) == 2


def test_strategies_keep_best_partial_answer():
    g, a, _ = lineage()
    chat = FixtureChatProvider(['{"strategies": ["x", "y"]}', '{"strategies": ["z"]}'])
    assert propose_strategies(g[a], g.trace(a), 3, chat) == ["x", "y"]


def test_empty_or_malformed_strategies():
    g, a, _ = lineage()
    with pytest.raises(StageError):
        propose_strategies(g[a], g.trace(a), 2, FixtureChatProvider(['{"strategies": []}'] * 2))
    with pytest.raises(StageError):
        propose_strategies(g[a], g.trace(a), 2, FixtureChatProvider(['{"other": 1}']))


def test_synthesize_prefers_fixed_and_drops_garbage():
    g, a, _ = lineage()
    reply = {"expressions": ["TSMEAN($close, 5)", "Rank($close)", "nonsense(", "Abs($open)"],
             "expressions_fixed": ["TsMean($close, 5)", "Rank($close)", "also bad", "Abs($open"],
             "explanations": ["smooth", "rank", "x", ""]}
    cands = synthesize(g[a], ["s1", "s2", "s3", "s4"], g.trace(a), 4,
                       FixtureChatProvider([json.dumps(reply)]))
    assert [c.text for c in cands] == ["TsMean($close, 5)", "Rank($close)", "Abs($open)"]
    assert cands[0].expr_text_raw == "TSMEAN($close, 5)"
    assert "repaired expression used" in cands[0].stage_notes
    assert cands[2].explanation.startswith("variant of")
    assert all(c.parent_id == a for c in cands)


def test_screen_rules():
    g, a, b = lineage()
    reply = {"expressions": ["Rank(Div($open, $close))", "Mul($close, 0.5)", "Abs($close)",
                             "Abs($close)"],
             "expressions_fixed": [], "explanations": []}
    cands = synthesize(g[a], ["s"] * 4, g.trace(a), 4, FixtureChatProvider([json.dumps(reply)]))
    rejected = []
    kept = screen(cands, g, rejected=rejected)
    assert [c.text for c in kept] == ["Abs($close)"]
    reasons = [why for _, why in rejected]
    assert reasons[0] == "duplicate of an existing node"
    assert reasons[1].startswith("float-whitelist")
    assert reasons[2] == "duplicate within batch"


def test_screen_rejects_expression_of_evicted_node():
    g, a, b = lineage()
    g[b].active = False
    reply = {"expressions": ["Rank(Div($open, $close))"], "expressions_fixed": [],
             "explanations": ["again"]}
    cands = synthesize(g[a], ["s"], g.trace(a), 1, FixtureChatProvider([json.dumps(reply)]))
    assert screen(cands, g) == []


def test_generate_with_mock_is_deterministic():
    g, a, b = lineage()
    runs = []
    for _ in range(2):
        chat = MutationChatProvider(seed=3, neighborhood=["Div($vwap, $close)"], typo_prob=0.5,
                                    fence_prob=0.5)
        runs.append([(c.text, c.explanation) for c in generate(g, b, chat, m=5, tag="it1/p1")])
    assert runs[0] == runs[1]
    assert 0 < len(runs[0]) <= 5
    other = MutationChatProvider(seed=4, neighborhood=["Div($vwap, $close)"])
    assert [c.text for c in generate(g, b, other, m=5, tag="it1/p1")] != [t for t, _ in runs[0]]


def test_mock_garbage_leads_to_generation_failure():
    from dagalpha.providers import GenerationFailure

    g, a, _ = lineage()
    chat = MutationChatProvider(seed=0, garbage_prob=1.0)
    with pytest.raises(GenerationFailure):
        generate(g, a, chat, m=3, retries=2)


def test_prompt_hook_sees_both_stages():
    g, a, _ = lineage()
    seen = []
    generate(g, a, MutationChatProvider(seed=0), m=2, on_prompt=lambda s, r: seen.append(s))
    assert seen == ["strategy", "execution"]

"""The closed mining loop: retrieve parents, generate, evaluate, admit, evict.

A run directory holds:

* ``graph.json`` - the factor graph checkpoint (rewritten every iteration)
* ``state.json`` - loop counters, panel fingerprint and seed topics
* ``iterations.jsonl`` - one audit record per iteration (iteration 0 = seeds)
* ``scores.csv`` - retrieval scores of every active node per iteration
* ``provider_log.jsonl`` - every provider call
* ``report.json`` plus Mega factor CSVs once the run finishes
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import backtest as bt
from .config import MiningConfig
from .engine import evaluate
from .expr import lint, parse, render
from .gatekeeper import admit
from .generator import StageError, generate
from .graph import FactorGraph, load as load_graph
from .integrator import mega_factor, write_weights
from .metrics import EmptyReportError, factor_corr, ic_suite, quality
from .mock_llm import MutationChatProvider
from .panel import Panel, forward_returns
from .providers import (ChatProvider, EmbeddingProvider, GenerationFailure, HashingEmbedder,
                        HttpChatProvider, HttpEmbeddingProvider, RunLog, TransportError)
from .retriever import ScoringInputs, score_pool, select_parents

log = logging.getLogger(__name__)

STATE_VERSION = 1


class ResumeError(RuntimeError):
    pass


@dataclass
class RunReport:
    status: str
    iterations: list = field(default_factory=list)
    final_pool: list = field(default_factory=list)
    splits: dict = field(default_factory=dict)
    backtests: dict = field(default_factory=dict)
    evaluations: int = 0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {"status": self.status, "error": self.error, "evaluations": self.evaluations,
                "iterations": self.iterations, "final_pool": self.final_pool,
                "splits": self.splits, "backtests": self.backtests}


def make_providers(config: MiningConfig, run_log: Optional[RunLog] = None):
    p = config.provider
    if p.kind == "http":
        chat = HttpChatProvider(p.endpoint, p.api_key, p.chat_model, p.timeout,
                                run_log=run_log, max_inflight=p.max_inflight)
        emb = HttpEmbeddingProvider(p.endpoint, p.api_key, p.embedding_model, p.timeout,
                                    run_log=run_log, max_inflight=p.max_inflight)
        return chat, emb
    chat = MutationChatProvider(seed=p.seed, neighborhood=p.mock_neighborhood, run_log=run_log,
                                max_inflight=p.max_inflight)
    return chat, HashingEmbedder(seed=p.seed, run_log=run_log)


def _clean(x):
    """Replace non-finite floats (nested) with None so the JSON stays standard."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


class Miner:
    def __init__(self, config: MiningConfig, panel: Panel, run_dir, chat: ChatProvider = None,
                 embedder: EmbeddingProvider = None, dump_prompts: bool = False):
        self.config = config
        self.panel = panel
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        if chat is None or embedder is None:
            c, e = make_providers(config, RunLog(self.run_dir / "provider_log.jsonl"))
            chat, embedder = chat or c, embedder or e
        self.chat = chat
        self.embedder = embedder
        self.dump_prompts = dump_prompts

        self.splits = {name: panel.date_slice(*span) for name, span in config.splits.items()}
        self.train = self.splits["train"]
        train_panel = panel.rows(self.train)
        if len(train_panel.dates) <= config.horizon:
            raise ValueError("training split is shorter than the forward-return horizon")
        self.train_returns = forward_returns(train_panel, config.horizon).values

        self.graph = FactorGraph(config.capacity)
        self.iteration = 0
        self.evaluations = 0
        self.stagnant = 0
        self.topics: dict = {}
        self.records: list = []
        self._values: dict = {}
        self._embeddings: dict = {}
        self.inputs = ScoringInputs(self.train_values, self.embedding)

    # ------------------------------------------------------------ caches

    def values(self, node_id: int) -> np.ndarray:
        v = self._values.get(node_id)
        if v is None:
            v = evaluate(self.graph[node_id].expr, self.panel)
            self._values[node_id] = v
        return v

    def train_values(self, node_id: int) -> np.ndarray:
        return self.values(node_id)[self.train]

    def embedding(self, node_id: int) -> np.ndarray:
        e = self._embeddings.get(node_id)
        if e is None:
            node = self.graph[node_id]
            e = self.embedder.embed(node.explanation or node.text)
            self._embeddings[node_id] = e
        return e

    def topic_of(self, node_id: int) -> str:
        root = self.graph.trace(node_id)[0]
        return self.topics.get(str(root.id), "")

    # ------------------------------------------------------------ persistence

    @property
    def graph_path(self) -> Path:
        return self.run_dir / "graph.json"

    def checkpoint(self) -> None:
        self.graph_path.write_text(self.graph.dumps(), encoding="utf-8")
        state = {"state_version": STATE_VERSION, "iteration": self.iteration,
                 "evaluations": self.evaluations, "stagnant": self.stagnant,
                 "panel_fingerprint": self.panel.fingerprint(), "topics": self.topics,
                 "config": self.config.to_dict()}
        (self.run_dir / "state.json").write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")

    def _append_record(self, rec: dict) -> None:
        self.records.append(rec)
        with open(self.run_dir / "iterations.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps(_clean(rec)) + "\n")

    def _append_scores(self, scores: list) -> None:
        path = self.run_dir / "scores.csv"
        new = not path.exists()
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(["iteration", "node_id", "is_leaf", "prior", "likelihood", "total"])
            for s in scores:
                w.writerow([self.iteration, s.node_id, int(s.is_leaf), repr(s.prior),
                            repr(s.likelihood), repr(s.total)])

    def restore(self) -> None:
        state_path = self.run_dir / "state.json"
        if not state_path.exists() or not self.graph_path.exists():
            raise ResumeError(f"no checkpoint in {self.run_dir}")
        state = json.loads(state_path.read_text(encoding="utf-8"))
        if state.get("state_version") != STATE_VERSION:
            raise ResumeError("incompatible checkpoint state version")
        if state["panel_fingerprint"] != self.panel.fingerprint():
            raise ResumeError("panel does not match the checkpoint (fingerprint mismatch)")
        graph = load_graph(self.graph_path, self.config.capacity)
        if len(graph.active) > self.config.capacity:
            raise ResumeError(f"capacity {self.config.capacity} is below the checkpoint's "
                              f"{len(graph.active)} active factors")
        self.graph = graph
        self.iteration = state["iteration"]
        self.evaluations = state["evaluations"]
        self.stagnant = state["stagnant"]
        self.topics = state["topics"]
        self._values.clear()
        self._embeddings.clear()
        self.inputs = ScoringInputs(self.train_values, self.embedding)
        # drop audit records written after the checkpoint (interrupted iteration)
        self.records = []
        rec_path = self.run_dir / "iterations.jsonl"
        if rec_path.exists():
            kept = [ln for ln in rec_path.read_text(encoding="utf-8").splitlines(keepends=True)
                    if json.loads(ln)["iteration"] <= self.iteration]
            self.records = [json.loads(ln) for ln in kept]
            rec_path.write_text("".join(kept), encoding="utf-8")
        score_path = self.run_dir / "scores.csv"
        if score_path.exists():
            lines = score_path.read_text(encoding="utf-8").splitlines(keepends=True)
            kept = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= self.iteration]
            score_path.write_text("".join(kept), encoding="utf-8")

    # ------------------------------------------------------------ loop

    def seed(self) -> None:
        if not self.config.seeds:
            raise ValueError("config has no seed expressions")
        added = []
        for s in self.config.seeds:
            expr = parse(s.expr)
            report = lint(expr, self.config.max_len, None)
            if not report.ok:
                raise ValueError(f"seed {s.expr!r} fails lint: {report.errors}")
            values = evaluate(expr, self.panel)
            if not np.any(~np.isnan(values[self.train])):
                raise ValueError(f"seed {s.expr!r} has no valid values on the training split")
            q = quality(values[self.train], self.train_returns)
            nid = self.graph.insert_node(expr, s.explanation or f"seed factor {render(expr)}",
                                         None, q, 0)
            self._values[nid] = values
            self.topics[str(nid)] = s.topic
            added.append({"id": nid, "expr": render(expr), "quality": q,
                          "explanation": self.graph[nid].explanation})
        self._append_record({"iteration": 0, "seeds": added, "admitted": [], "evicted": [],
                             "selected": [], "evaluations": 0, **self._pool_stats()})
        self.checkpoint()

    def _pool_stats(self) -> dict:
        q = [n.quality for n in self.graph.active]
        return {"pool_size": len(q), "pool_mean_quality": float(np.mean(q)) if q else 0.0,
                "pool_max_quality": float(np.max(q)) if q else 0.0}

    def _on_prompt(self, stage, request) -> None:
        if not self.dump_prompts:
            return
        d = self.run_dir / "prompts"
        d.mkdir(exist_ok=True)
        name = request.tag.replace("/", "_") or stage
        (d / f"{name}.txt").write_text(
            f"[system]\n{request.system}\n\n[user]\n{request.user_text}\n", encoding="utf-8")

    def step(self) -> dict:
        cfg = self.config
        it = self.iteration + 1
        scores = score_pool(self.graph, self.inputs, cfg.gamma, cfg.omega)
        self.iteration = it
        self._append_scores(scores)
        self.iteration = it - 1
        selected = select_parents(self.graph, cfg.k, cfg.gamma, cfg.omega, self.inputs)

        def work(s):
            rej: list = []
            try:
                cands = generate(self.graph, s.node_id, self.chat, cfg.m, self.topic_of(s.node_id),
                                 cfg.max_len, cfg.whitelist, cfg.provider.temperature,
                                 cfg.provider.retries, tag=f"it{it}/p{s.node_id}",
                                 on_prompt=self._on_prompt, rejected=rej)
                return cands, rej, None
            except (GenerationFailure, StageError) as exc:
                return [], rej, exc

        # provider calls fan out; results are merged in parent order
        with ThreadPoolExecutor(max(1, cfg.provider.max_inflight)) as pool:
            results = list(pool.map(work, selected))
        batch, failures, rejected = [], [], []
        for s, (cands, rej, exc) in zip(selected, results):
            rejected.extend(rej)
            if exc is not None:
                log.warning("iteration %d parent %d: generation failed: %s", it, s.node_id, exc)
                failures.append({"parent": s.node_id, "error": str(exc)})
            batch.extend(cands)

        evaluated = []
        for c in batch:
            values = evaluate(c.expr, self.panel)
            q = quality(values[self.train], self.train_returns)
            self.evaluations += 1
            evaluated.append((c, values, q))
        evaluated.sort(key=lambda x: -x[2])

        cand_records, admitted = [], []
        for c, values, q in evaluated:
            tv = values[self.train]
            corrs = [factor_corr(tv, self.train_values(n.id)) for n in self.graph.active]
            corrs = [abs(x) for x in corrs if not math.isnan(x)]
            max_corr = max(corrs) if corrs else math.nan
            parent = self.graph[c.parent_id]
            decision = admit(q, parent.quality, max_corr, cfg.tau_q, cfg.tau_d)
            rec = {"parent": c.parent_id, "expr": c.text, "quality": q, "branch": decision.branch,
                   "gain": decision.gain, "max_abs_pool_corr": decision.max_abs_pool_corr,
                   "explanation": c.explanation, "notes": c.stage_notes}
            if decision.admitted:
                nid = self.graph.insert_node(c.expr, c.explanation, c.parent_id, q, it)
                self._values[nid] = values
                rec["id"] = nid
                admitted.append(nid)
            cand_records.append(rec)

        evicted = self.graph.evict_to_capacity()
        self.iteration = it
        self.stagnant = 0 if admitted else self.stagnant + 1
        record = {
            "iteration": it,
            "selected": [{"id": s.node_id, "prior": s.prior, "likelihood": s.likelihood,
                          "total": s.total, "is_leaf": s.is_leaf} for s in selected],
            "generated": len(batch) + len(rejected),
            "screened": len(batch),
            "candidates": cand_records,
            "rejected": [{"parent": c.parent_id, "expr": c.text, "reason": why} for c, why in rejected],
            "failures": failures,
            "admitted": admitted,
            "evicted": evicted,
            "evaluations": self.evaluations,
            **self._pool_stats(),
        }
        self._append_record(record)
        self.checkpoint()
        return record

    def run(self, resume: bool = False) -> RunReport:
        if resume:
            self.restore()
        else:
            for name in ("iterations.jsonl", "scores.csv"):
                (self.run_dir / name).unlink(missing_ok=True)
            self.seed()
        status = "completed"
        error = None
        try:
            while self.iteration < self.config.iterations:
                self.step()
                if self.stagnant >= self.config.stagnation_limit:
                    status = "stagnated"
                    break
        except TransportError as exc:
            log.error("provider failure at iteration %d: %s", self.iteration + 1, exc)
            status, error = "interrupted", str(exc)
            # the on-disk checkpoint is the last completed iteration
            report = RunReport(status, self.records, error=error, evaluations=self.evaluations)
            self._write_report(report)
            return report
        report = self.finalize(status)
        return report

    # ------------------------------------------------------------ reporting

    def mega(self) -> tuple:
        cfg = self.config
        factors = {n.id: self.values(n.id) for n in self.graph.active}
        full_returns = forward_returns(self.panel, cfg.horizon)
        ig = cfg.integrator
        return mega_factor(factors, full_returns, ig.window, ig.threshold, ig.rebalance_every,
                           cfg.embargo)

    def finalize(self, status: str) -> RunReport:
        cfg = self.config
        mega, history = self.mega()
        splits, backtests = {}, {}
        for name, sl in self.splits.items():
            sub = self.panel.rows(sl)
            if len(sub.dates) <= cfg.horizon:
                continue
            ret = forward_returns(sub, cfg.horizon)
            try:
                splits[name] = ic_suite(mega[sl], ret).to_dict()
            except EmptyReportError:
                splits[name] = None
            b = cfg.backtest
            res = bt.simulate(mega[sl], sub, b.top_frac, b.hold, b.cost_rt, b.periods, b.risk_free)
            backtests[name] = {k: _clean(v) for k, v in res.summary().items()}
            res.write_curve(sub.dates, self.run_dir / f"backtest_{name}.csv")
        write_weights(history, self.panel.dates, self.run_dir / "mega_weights.csv")
        pool = [{**n.to_record()} for n in self.graph.active]
        report = RunReport(status, self.records, pool, splits, backtests, self.evaluations)
        self._write_report(report)
        return report

    def _write_report(self, report: RunReport) -> None:
        (self.run_dir / "report.json").write_text(
            json.dumps(_clean(report.to_dict()), indent=2) + "\n", encoding="utf-8")


def run_mining(config: MiningConfig, panel: Panel, run_dir, **kw) -> RunReport:
    return Miner(config, panel, run_dir, **kw).run()


def resume(run_dir, config: MiningConfig, panel: Panel, **kw) -> RunReport:
    return Miner(config, panel, run_dir, **kw).run(resume=True)


def replay(run_dir, capacity: int = 50) -> FactorGraph:
    """Rebuild the graph from the audit trail alone."""
    g = FactorGraph(capacity)
    lines = (Path(run_dir) / "iterations.jsonl").read_text(encoding="utf-8").splitlines()
    for rec in map(json.loads, lines):
        for s in rec.get("seeds", []):
            g.insert_node(parse(s["expr"]), s["explanation"], None, s["quality"], 0)
        for s in rec.get("selected", []):
            g.mark_retrieved(s["id"])
        for c in rec.get("candidates", []):
            if "id" in c:
                nid = g.insert_node(parse(c["expr"]), c["explanation"], c["parent"], c["quality"],
                                    rec["iteration"])
                assert nid == c["id"], (nid, c["id"])
        for vid in rec.get("evicted", []):
            g[vid].active = False
    return g


def iteration_curve(run_dir) -> list:
    """Rows of (iteration, evaluations, pool size, mean and max pool quality)."""
    lines = (Path(run_dir) / "iterations.jsonl").read_text(encoding="utf-8").splitlines()
    return [(r["iteration"], r["evaluations"], r["pool_size"], r["pool_mean_quality"],
             r["pool_max_quality"]) for r in map(json.loads, lines)]

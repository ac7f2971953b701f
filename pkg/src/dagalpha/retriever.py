"""Parent selection: quality/lineage prior times pool-contribution likelihood."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable

import numpy as np

from .expr import syntactic_distance
from .graph import FactorGraph, FactorNode
from .metrics import factor_corr

EPS_Q = 1e-6


class ConfigError(ValueError):
    pass


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass
class RetrievalScore:
    node_id: int
    prior: float
    likelihood: float
    total: float
    is_leaf: bool
    breakdown: dict = field(default_factory=dict)


class ScoringInputs:
    """Factor values and explanation embeddings, with memoised pair statistics.

    ``values(id)`` returns the training-period factor matrix of any node in
    the graph, ``embedding(id)`` its unit-norm explanation embedding.
    """

    def __init__(self, values: Callable[[int], np.ndarray], embedding: Callable[[int], np.ndarray]):
        self._values = values
        self._embedding = embedding
        self._corr: dict = {}

    def values(self, node_id: int) -> np.ndarray:
        return self._values(node_id)

    def embedding(self, node_id: int) -> np.ndarray:
        return self._embedding(node_id)

    def corr(self, a: int, b: int) -> float:
        """factor_corr with NaN (no comparable day) read as zero."""
        key = (a, b) if a <= b else (b, a)
        c = self._corr.get(key)
        if c is None:
            c = factor_corr(self.values(key[0]), self.values(key[1]))
            c = 0.0 if math.isnan(c) else c
            self._corr[key] = c
        return c


def pool_stats(graph: FactorGraph) -> tuple:
    q = np.array([n.quality for n in graph.active])
    if len(q) == 0:
        return 0.0, 0.0
    return float(np.mean(q)), float(np.std(q))


def prior(node: FactorNode, stats: tuple, gamma: float, omega: float) -> tuple:
    """Return (prior, breakdown) for a candidate parent."""
    if not (0 <= gamma < 1) or not (0 <= omega < 1):
        raise ConfigError(f"gamma and omega must lie in [0, 1), got {gamma}, {omega}")
    mu, sd = stats
    z = 0.0 if sd == 0 else (node.quality - mu) / sd
    norm_q = sigmoid(z)
    depth_pen = (1.0 - gamma) ** node.depth
    retr_pen = (1.0 - omega) ** node.k
    return norm_q * depth_pen * retr_pen, {
        "quality_z": z, "normalized_quality": norm_q,
        "depth_penalty": depth_pen, "retrieval_penalty": retr_pen,
    }


def leaf_likelihood(node: FactorNode, pool: list, inputs: ScoringInputs) -> tuple:
    """Value x semantic x syntactic diversity of ``node`` against ``pool``."""
    others = [f for f in pool if f.id != node.id]
    if not others:
        return 1.0, {"val_div": 1.0, "sem_div": 1.0, "syn_div": 1.0}
    mean_corr = sum(inputs.corr(node.id, f.id) for f in others) / len(others)
    val_div = min(1.0, max(0.0, 1.0 - abs(mean_corr)))
    e = inputs.embedding(node.id)
    mean_cos = sum(float(np.dot(e, inputs.embedding(f.id))) for f in others) / len(others)
    sem_div = sigmoid(1.0 - mean_cos)
    syn_div = sum(syntactic_distance(node.expr, f.expr) for f in others) / len(others)
    return val_div * sem_div * syn_div, {"val_div": val_div, "sem_div": sem_div, "syn_div": syn_div}


def _clamp_spar(x: float) -> float:
    return min(2.0, max(0.0, x))


def nonleaf_likelihood(node: FactorNode, kids: list, inputs: ScoringInputs,
                       eps_q: float = EPS_Q) -> tuple:
    """Average quality gain of the children times their sparsity."""
    base = max(node.quality, eps_q)
    pg = sum((c.quality - node.quality) / base for c in kids) / len(kids)
    pg = max(0.0, pg)
    spar_pc = _clamp_spar(1.0 - sum(inputs.corr(node.id, c.id) for c in kids) / len(kids))
    if len(kids) == 1:
        spar_cc = 1.0
    else:
        pairs = list(combinations(kids, 2))
        spar_cc = _clamp_spar(1.0 - sum(inputs.corr(a.id, b.id) for a, b in pairs) / len(pairs))
    return pg * spar_pc * spar_cc, {"pg": pg, "spar_pc": spar_pc, "spar_cc": spar_cc}


def score_node(graph: FactorGraph, node: FactorNode, inputs: ScoringInputs,
               gamma: float, omega: float, stats=None) -> RetrievalScore:
    stats = pool_stats(graph) if stats is None else stats
    p, pb = prior(node, stats, gamma, omega)
    kids = graph.child_nodes(node.id)
    if kids:
        lik, lb = nonleaf_likelihood(node, kids, inputs)
    else:
        lik, lb = leaf_likelihood(node, graph.active, inputs)
    return RetrievalScore(node.id, p, lik, p * lik, not kids, {**pb, **lb})


def score_pool(graph: FactorGraph, inputs: ScoringInputs, gamma: float, omega: float) -> list:
    stats = pool_stats(graph)
    return [score_node(graph, n, inputs, gamma, omega, stats) for n in graph.active]


def select_parents(graph: FactorGraph, k: int, gamma: float, omega: float,
                   inputs: ScoringInputs) -> list:
    """Score every active node, take the global top-k and bump their k."""
    if not graph.active:
        raise ValueError("no active factors to select from")
    scores = score_pool(graph, inputs, gamma, omega)
    scores.sort(key=lambda s: (-s.total, -graph[s.node_id].quality, s.node_id))
    chosen = scores[:min(k, len(scores))]
    for s in chosen:
        graph.mark_retrieved(s.node_id)
    return chosen

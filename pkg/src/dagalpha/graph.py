"""Factor lineage graph: nodes, active pool, eviction and JSON persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .expr import Expr, parse, render

SCHEMA_VERSION = 1
DEFAULT_CAPACITY = 50


class GraphError(ValueError):
    pass


class UnknownNodeError(GraphError, KeyError):
    pass


class DuplicateExpressionError(GraphError):
    pass


class SchemaError(GraphError):
    pass


@dataclass
class FactorNode:
    id: int
    expr: Expr
    explanation: str
    quality: float
    depth: int
    k: int = 0
    parent_id: Optional[int] = None
    active: bool = True
    created_iteration: int = 0

    @property
    def text(self) -> str:
        return render(self.expr)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "expr": self.text,
            "explanation": self.explanation,
            "quality": self.quality,
            "depth": self.depth,
            "k": self.k,
            "parent_id": self.parent_id,
            "active": self.active,
            "created_iteration": self.created_iteration,
        }


class FactorGraph:
    """Single-parent lineage store.

    Every node ever inserted stays in the graph; eviction only clears the
    ``active`` flag so traces through evicted ancestors remain intact.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self.nodes: dict[int, FactorNode] = {}
        self.children: dict[int, list[int]] = {}
        self._texts: dict[str, list[int]] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id) -> bool:
        return node_id in self.nodes

    def __getitem__(self, node_id: int) -> FactorNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node id {node_id}") from None

    @property
    def active(self) -> list[FactorNode]:
        return [n for n in self.nodes.values() if n.active]

    @property
    def active_ids(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.active]

    @property
    def roots(self) -> list[FactorNode]:
        return [n for n in self.nodes.values() if n.parent_id is None]

    def has_expression(self, text: str, active_only: bool = False) -> bool:
        ids = self._texts.get(text, ())
        if active_only:
            return any(self.nodes[i].active for i in ids)
        return bool(ids)

    def insert_node(self, expr: Expr, explanation: str, parent_id: Optional[int] = None,
                    quality: float = 0.0, iteration: int = 0) -> int:
        if parent_id is not None and parent_id not in self.nodes:
            raise UnknownNodeError(f"unknown parent id {parent_id}")
        text = render(expr)
        if self.has_expression(text, active_only=True):
            raise DuplicateExpressionError(f"expression already active: {text}")
        depth = 0 if parent_id is None else self.nodes[parent_id].depth + 1
        node = FactorNode(self._next_id, expr, explanation, float(quality), depth,
                          parent_id=parent_id, created_iteration=iteration)
        self._add(node)
        return node.id

    def _add(self, node: FactorNode) -> None:
        self.nodes[node.id] = node
        self.children.setdefault(node.id, [])
        if node.parent_id is not None:
            self.children[node.parent_id].append(node.id)
        self._texts.setdefault(node.text, []).append(node.id)
        self._next_id = max(self._next_id, node.id + 1)

    def child_nodes(self, node_id: int) -> list[FactorNode]:
        return [self.nodes[c] for c in self.children.get(node_id, [])]

    def is_leaf(self, node_id: int) -> bool:
        return not self.children.get(node_id)

    def trace(self, node_id: int) -> list[FactorNode]:
        """Ancestor chain from the root down to ``node_id`` inclusive."""
        chain = [self[node_id]]
        seen = {node_id}
        while chain[-1].parent_id is not None:
            pid = chain[-1].parent_id
            if pid in seen:
                raise GraphError(f"cycle through node {pid}")
            seen.add(pid)
            chain.append(self.nodes[pid])
        chain.reverse()
        return chain

    def mark_retrieved(self, node_id: int) -> None:
        self[node_id].k += 1

    def evict_lowest(self) -> Optional[int]:
        """Deactivate the lowest-quality active node when over capacity.

        Ties go to the oldest ``created_iteration`` then the smallest id.
        Returns the evicted id, or None when the pool is within capacity.
        """
        pool = self.active
        if len(pool) <= self.capacity:
            return None
        victim = min(pool, key=lambda n: (n.quality, n.created_iteration, n.id))
        victim.active = False
        return victim.id

    def evict_to_capacity(self) -> list[int]:
        evicted = []
        while (vid := self.evict_lowest()) is not None:
            evicted.append(vid)
        return evicted

    # ------------------------------------------------------------ persistence

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "nodes": [n.to_record() for n in self.nodes.values()]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, capacity: int = DEFAULT_CAPACITY) -> "FactorGraph":
        if not isinstance(doc, dict) or "nodes" not in doc:
            raise SchemaError("graph document must be an object with a 'nodes' array")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"unsupported schema_version {doc.get('schema_version')!r}")
        g = cls(capacity)
        try:
            for rec in doc["nodes"]:
                node = FactorNode(
                    id=int(rec["id"]), expr=parse(rec["expr"]), explanation=str(rec["explanation"]),
                    quality=float(rec["quality"]), depth=int(rec["depth"]), k=int(rec["k"]),
                    parent_id=None if rec["parent_id"] is None else int(rec["parent_id"]),
                    active=bool(rec["active"]), created_iteration=int(rec["created_iteration"]))
                if node.id in g.nodes:
                    raise SchemaError(f"duplicate node id {node.id}")
                if node.parent_id is not None and node.parent_id not in g.nodes:
                    raise SchemaError(f"node {node.id} references unknown parent {node.parent_id}")
                expected = 0 if node.parent_id is None else g.nodes[node.parent_id].depth + 1
                if node.depth != expected:
                    raise SchemaError(f"node {node.id} has depth {node.depth}, expected {expected}")
                g._add(node)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed node record: {exc}") from exc
        return g


def save(graph: FactorGraph, sink: Union[str, Path]) -> None:
    Path(sink).write_text(graph.dumps(), encoding="utf-8")


def load(source: Union[str, Path], capacity: int = DEFAULT_CAPACITY) -> FactorGraph:
    try:
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed graph document: {exc}") from exc
    return FactorGraph.from_dict(doc, capacity)


def to_dot(graph: FactorGraph) -> str:
    lines = ["digraph factors {", "  node [shape=box, fontname=monospace];"]
    for n in graph.nodes.values():
        label = f"{n.id}: {n.text}\\nq={n.quality:.4f} depth={n.depth} k={n.k}"
        label = label.replace('"', '\\"')
        style = "" if n.active else ", style=dashed, color=gray"
        lines.append(f'  n{n.id} [label="{label}"{style}];')
    for n in graph.nodes.values():
        if n.parent_id is not None:
            lines.append(f"  n{n.parent_id} -> n{n.id};")
    lines.append("}")
    return "\n".join(lines) + "\n"

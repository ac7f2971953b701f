"""LLM-guided formulaic alpha mining over a lineage graph of factors."""
from .engine import evaluate
from .expr import lint, parse, render
from .graph import FactorGraph
from .panel import Panel, forward_returns, load_panel

__all__ = ["FactorGraph", "Panel", "evaluate", "forward_returns", "lint", "load_panel", "parse",
           "render"]
__version__ = "0.1.0"

"""Learned graph-coloring engine.

Greedy baselines, a sequential coloring decision process, tree search
guided by a trainable policy/value network over message-passing vertex
embeddings, and a self-play training pipeline, all at desk scale.
"""

__version__ = "0.1.0"

from .graph import Graph, GraphSource, gen_er, gen_ws, load_graph
from .coloring import (
    Outcome,
    ColoringState,
    greedy_color,
    estimate_mdp_size,
    brute_force_chromatic,
)

__all__ = [
    "Graph",
    "GraphSource",
    "gen_er",
    "gen_ws",
    "load_graph",
    "Outcome",
    "ColoringState",
    "greedy_color",
    "estimate_mdp_size",
    "brute_force_chromatic",
    "__version__",
]

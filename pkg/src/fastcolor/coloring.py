"""Sequential graph coloring as a decision process, plus greedy baselines.

Vertices are colored one at a time along a fixed visitation order. At each
move the agent picks either an existing color that no colored neighbor
uses, or opens a new color (always available). The three classic greedy
heuristics differ only in the order they visit vertices; all of them pick
the smallest valid color id.

Episode outcomes are scored zero-sum against a baseline color count:
fewer colors wins (+1), equal ties (0), more loses (-1).
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError, ParseError, SizeError, StateError
from .graph import Graph

__all__ = [
    "HEURISTIC_KINDS",
    "Outcome",
    "outcome_vs_baseline",
    "ActionSet",
    "ColoringState",
    "apply_action",
    "compute_order",
    "greedy_color",
    "Coloring",
    "estimate_mdp_size",
    "brute_force_chromatic",
    "is_proper",
    "check_proper",
    "save_coloring",
    "load_coloring",
]

HEURISTIC_KINDS = ("unordered", "ordered", "dynamic")


class Outcome(enum.IntEnum):
    """Zero-sum episode result from the agent's point of view."""

    WIN = 1
    TIE = 0
    LOSE = -1

    @property
    def game_value(self) -> float:
        return float(self.value)

    @property
    def index(self) -> int:
        """Position in (win, tie, lose) distributions."""
        return {Outcome.WIN: 0, Outcome.TIE: 1, Outcome.LOSE: 2}[self]


def outcome_vs_baseline(agent_colors: int, baseline_colors: int) -> Outcome:
    """Compare color counts at the same move index."""
    if agent_colors < baseline_colors:
        return Outcome.WIN
    if agent_colors == baseline_colors:
        return Outcome.TIE
    return Outcome.LOSE


@dataclass(frozen=True)
class ActionSet:
    """Valid moves at one state: existing compatible colors plus 'new'.

    ``existing`` is sorted ascending; ``new_color`` equals the current
    number of colors in use, so actions are plain ints in
    [0, new_color] and 'new' is always the largest.
    """

    existing: tuple[int, ...]
    new_color: int

    @property
    def size(self) -> int:
        return len(self.existing) + 1

    def actions(self) -> list[int]:
        return list(self.existing) + [self.new_color]

    def __contains__(self, a: int) -> bool:
        return a == self.new_color or a in self.existing


class ColoringState:
    """Mutable partial coloring along a fixed visitation order.

    The next vertex to color is ``order[t]``. ``color_of`` holds -1 for
    uncolored vertices. ``color_members[c]`` lists the vertices of color
    c in the order they were colored (newest last).
    """

    __slots__ = ("graph", "order", "t", "color_of", "colors_used", "color_members")

    def __init__(self, graph: Graph, order: np.ndarray | None = None):
        self.graph = graph
        if order is None:
            order = np.arange(graph.n, dtype=np.int32)
        else:
            order = np.asarray(order, dtype=np.int32)
            if order.shape != (graph.n,) or (graph.n and sorted(order.tolist()) != list(range(graph.n))):
                raise ParameterError("order must be a permutation of 0..n-1")
        self.order = order
        self.t = 0
        self.color_of = np.full(graph.n, -1, dtype=np.int32)
        self.colors_used = 0
        self.color_members: list[list[int]] = []

    def clone(self) -> "ColoringState":
        other = ColoringState.__new__(ColoringState)
        other.graph = self.graph
        other.order = self.order
        other.t = self.t
        other.color_of = self.color_of.copy()
        other.colors_used = self.colors_used
        other.color_members = [m.copy() for m in self.color_members]
        return other

    @property
    def is_terminal(self) -> bool:
        return self.t >= self.graph.n

    def current_vertex(self) -> int:
        if self.is_terminal:
            raise StateError("all vertices are colored")
        return int(self.order[self.t])

    def neighbor_colors(self, v: int) -> set[int]:
        cols = self.color_of[self.graph.neighbors_of(v)]
        return set(int(c) for c in cols[cols >= 0])

    def valid_actions(self) -> ActionSet:
        v = self.current_vertex()
        blocked = self.neighbor_colors(v)
        existing = tuple(c for c in range(self.colors_used) if c not in blocked)
        return ActionSet(existing=existing, new_color=self.colors_used)

    def apply_inplace(self, action: int) -> None:
        """Color the current vertex. ``action`` must come from valid_actions."""
        v = self.current_vertex()
        if action == self.colors_used:
            self.colors_used += 1
            self.color_members.append([])
        elif not (0 <= action < self.colors_used):
            raise ContractError(f"action {action} out of range at t={self.t}")
        elif action in self.neighbor_colors(v):
            raise ContractError(f"color {action} conflicts at vertex {v}")
        self.color_of[v] = action
        self.color_members[action].append(v)
        self.t += 1

    def greedy_action(self) -> int:
        """Smallest valid color id; opens a new color only when forced."""
        v = self.current_vertex()
        blocked = self.neighbor_colors(v)
        for c in range(self.colors_used):
            if c not in blocked:
                return c
        return self.colors_used


def apply_action(state: ColoringState, action: int) -> ColoringState:
    """Pure-functional step: returns a new state, input untouched."""
    nxt = state.clone()
    nxt.apply_inplace(action)
    return nxt


def compute_order(g: Graph, kind: str) -> np.ndarray:
    """Visitation order used by each heuristic.

    unordered: ascending vertex id. ordered: descending static degree,
    ties by ascending id. dynamic: repeatedly take the uncolored vertex
    with the most uncolored neighbors (ties by ascending id), decrementing
    neighbors as vertices leave the pool. The dynamic order depends only
    on adjacency, never on chosen colors, so it can be precomputed.
    """
    if kind == "unordered":
        return np.arange(g.n, dtype=np.int32)
    if kind == "ordered":
        # lexsort: last key is primary, so degree descending then id.
        return np.lexsort((np.arange(g.n), -g.degrees.astype(np.int64))).astype(np.int32)
    if kind == "dynamic":
        dyn = g.degrees.astype(np.int64).copy()
        done = np.zeros(g.n, dtype=bool)
        heap = [(-int(dyn[v]), v) for v in range(g.n)]
        heapq.heapify(heap)
        order = np.empty(g.n, dtype=np.int32)
        for slot in range(g.n):
            while True:
                negd, v = heapq.heappop(heap)
                if not done[v] and -negd == dyn[v]:
                    break
            order[slot] = v
            done[v] = True
            for u in g.neighbors_of(v):
                u = int(u)
                if not done[u]:
                    dyn[u] -= 1
                    heapq.heappush(heap, (-int(dyn[u]), u))
        return order
    raise ParameterError(f"unknown heuristic kind {kind!r}")


@dataclass(frozen=True)
class Coloring:
    """A completed proper coloring and the order that produced it."""

    assignment: np.ndarray
    colors_used: int
    order: np.ndarray


def greedy_color(g: Graph, kind: str = "unordered", order: np.ndarray | None = None) -> Coloring:
    """Greedy smallest-valid-color run along the given heuristic's order.

    Passing ``order`` explicitly overrides ``kind`` (used to replay a
    fixed order with the greedy action policy).
    """
    if order is None:
        order = compute_order(g, kind)
    state = ColoringState(g, order)
    while not state.is_terminal:
        state.apply_inplace(state.greedy_action())
    return Coloring(assignment=state.color_of, colors_used=state.colors_used, order=order)


def estimate_mdp_size(g: Graph, kind: str = "unordered") -> float:
    """log10 of the product of action-set sizes along one greedy trajectory.

    A cheap proxy for the size of the reachable decision space; summing
    logs avoids overflow on graphs where the product is astronomically
    large.
    """
    order = compute_order(g, kind)
    state = ColoringState(g, order)
    total = 0.0
    while not state.is_terminal:
        total += math.log10(state.valid_actions().size)
        state.apply_inplace(state.greedy_action())
    return total


def _greedy_clique_lower_bound(g: Graph) -> int:
    best = 1 if g.n else 0
    by_degree = sorted(range(g.n), key=lambda v: (-int(g.degrees[v]), v))
    for start in by_degree[: min(g.n, 8)]:
        clique = [start]
        for v in by_degree:
            if v != start and all(g.has_edge(v, u) for u in clique):
                clique.append(v)
        best = max(best, len(clique))
    return best


def brute_force_chromatic(g: Graph, cap: int = 12) -> int:
    """Exact chromatic number by backtracking; refuses graphs above ``cap``.

    Starts at a greedy clique lower bound and tests k-colorability with
    color classes kept as vertex bitmasks; only the first empty class may
    be opened, which kills color-permutation symmetry.
    """
    if g.n > cap:
        raise SizeError(f"graph has {g.n} vertices, cap is {cap}")
    if g.n == 0:
        return 0
    if g.edge_count == 0:
        return 1
    adj = [0] * g.n
    for v in range(g.n):
        for u in g.neighbors_of(v):
            adj[v] |= 1 << int(u)
    verts = sorted(range(g.n), key=lambda v: (-int(g.degrees[v]), v))
    upper = greedy_color(g, "dynamic").colors_used
    lower = _greedy_clique_lower_bound(g)

    def colorable(k: int) -> bool:
        classes = [0] * k

        def place(i: int) -> bool:
            if i == len(verts):
                return True
            v = verts[i]
            opened_new = False
            for c in range(k):
                if classes[c] == 0:
                    if opened_new:
                        break  # all further empty classes are symmetric
                    opened_new = True
                if classes[c] & adj[v]:
                    continue
                classes[c] |= 1 << v
                if place(i + 1):
                    return True
                classes[c] &= ~(1 << v)
            return False

        return place(0)

    for k in range(lower, upper):
        if colorable(k):
            return k
    return upper


def is_proper(g: Graph, assignment: np.ndarray) -> bool:
    """True iff every vertex is colored and no edge is monochromatic."""
    assignment = np.asarray(assignment)
    if assignment.shape != (g.n,) or (g.n and assignment.min() < 0):
        return False
    for v in range(g.n):
        row = g.neighbors_of(v)
        if np.any(assignment[row] == assignment[v]):
            return False
    return True


def check_proper(g: Graph, assignment: np.ndarray) -> None:
    """Raise ContractError naming the first offending vertex or edge."""
    assignment = np.asarray(assignment)
    if assignment.shape != (g.n,):
        raise ContractError(f"assignment length {assignment.shape} != vertex count {g.n}")
    bad = np.nonzero(assignment < 0)[0]
    if bad.size:
        raise ContractError(f"vertex {int(bad[0])} is uncolored")
    for v in range(g.n):
        row = g.neighbors_of(v)
        hits = row[assignment[row] == assignment[v]]
        if hits.size:
            raise ContractError(f"edge ({v}, {int(hits[0])}) is monochromatic")


def save_coloring(assignment: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v, c in enumerate(np.asarray(assignment).tolist()):
            fh.write(f"{v} {c}\n")


def load_coloring(g: Graph, path: str) -> np.ndarray:
    """Read 'vertex color' lines and verify the result is proper for g."""
    assignment = np.full(g.n, -1, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'vertex color'")
            try:
                v, c = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field") from None
            if not 0 <= v < g.n:
                raise ParseError(f"{path}:{lineno}: vertex {v} out of range")
            if assignment[v] != -1:
                raise ParseError(f"{path}:{lineno}: vertex {v} assigned twice")
            assignment[v] = c
    check_proper(g, assignment)
    return assignment

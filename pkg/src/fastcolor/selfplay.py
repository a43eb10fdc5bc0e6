"""Self-play episode generation and the replay buffer.

Training tuples (graph, move, pi, z) come from short MCTS bursts played
inside limited run-ahead windows. Each window is scored against a frozen
baseline policy that walks the same visitation order, so agent and
baseline differ only in color choice. Windows that are already decided
are abandoned early using sound monotonicity bounds.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .coloring import ColoringState, Outcome, compute_order, outcome_vs_baseline
from .config import Config
from .embedding import EmbeddingTable, compute_embeddings
from .errors import ParameterError, StateError
from .graph import Graph
from .mcts import SearchTree, search
from .rng import make_rng, mix64

# -- fast policies ------------------------------------------------------


class GreedyPolicy:
    """Bootstrap policy: smallest valid color along the fixed order."""

    def choose(self, state: ColoringState) -> int:
        return state.greedy_action()


class NetPolicy:
    """Greedy argmax of a P-network snapshot, no search."""

    def __init__(self, store, cfg: Config, cache: "EmbeddingCache", version: int):
        self.store = store
        self.cfg = cfg
        self.cache = cache
        self.version = version

    def choose(self, state: ColoringState) -> int:
        from .fastcolornet import evaluate

        table = self.cache.table(state.graph, self.store, self.cfg, self.version)
        out = evaluate(self.store, self.cfg, state, table)
        return int(out.actions[int(np.argmax(out.p))])


class EmbeddingCache:
    """Lazy per-(graph, parameter version) message-passing tables.

    Tables are immutable once computed; a version bump (new gated
    parameters) keys fresh entries instead of mutating old ones.
    """

    def __init__(self) -> None:
        self._tables: dict[tuple[str, int], EmbeddingTable] = {}

    def __len__(self) -> int:
        return len(self._tables)

    def table(self, g: Graph, store, cfg: Config, version: int) -> EmbeddingTable:
        key = (g.key(), version)
        hit = self._tables.get(key)
        if hit is None:
            hit = compute_embeddings(g, store, cfg, seed=cfg.embed_seed)
            self._tables[key] = hit
        return hit

    def drop_below(self, version: int) -> None:
        """Free tables computed under superseded parameters."""
        self._tables = {k: v for k, v in self._tables.items() if k[1] >= version}


# -- baseline -----------------------------------------------------------


@dataclass(frozen=True)
class BaselineTrace:
    """Deterministic full coloring by a frozen policy.

    ``cumulative[t]`` is the color count after t moves (``cumulative[0]``
    is 0), so a window ending at move t is scored by ``cumulative[t]``.
    """

    actions: np.ndarray
    cumulative: np.ndarray

    @property
    def chi(self) -> int:
        return int(self.cumulative[-1])


class BaselineOracle:
    """Frozen best policy plus cached per-graph score traces."""

    def __init__(self, policy) -> None:
        self.policy = policy
        self._traces: dict[tuple[str, str], BaselineTrace] = {}

    def trace(self, g: Graph, cfg: Config) -> BaselineTrace:
        key = (g.key(), cfg.order_kind)
        hit = self._traces.get(key)
        if hit is None:
            hit = _run_policy(g, self.policy, cfg)
            self._traces[key] = hit
        return hit


def _run_policy(g: Graph, policy, cfg: Config) -> BaselineTrace:
    state = ColoringState(g, compute_order(g, cfg.order_kind))
    actions = np.empty(g.n, dtype=np.int64)
    cumulative = np.empty(g.n + 1, dtype=np.int64)
    cumulative[0] = 0
    for t in range(g.n):
        a = policy.choose(state)
        actions[t] = a
        state.apply_inplace(a)
        cumulative[t + 1] = state.colors_used
    return BaselineTrace(actions=actions, cumulative=cumulative)


def baseline_score(g: Graph, oracle: BaselineOracle, cfg: Config) -> BaselineTrace:
    """Cumulative color counts of the frozen policy along the episode."""
    return oracle.trace(g, cfg)


def bootstrap_oracle() -> BaselineOracle:
    """Baseline before any model is gated: greedy along the same order."""
    return BaselineOracle(GreedyPolicy())


def fast_forward(g: Graph, trace: BaselineTrace, start_t: int, cfg: Config) -> ColoringState:
    """Reconstruct the frozen policy's state after ``start_t`` moves."""
    if not 0 <= start_t <= g.n:
        raise ParameterError(f"start_t {start_t} outside [0, {g.n}]")
    state = ColoringState(g, compute_order(g, cfg.order_kind))
    for a in trace.actions[:start_t]:
        state.apply_inplace(int(a))
    return state


# -- window play --------------------------------------------------------


def abort_outcome(colors_now: int, t_now: int, t_end: int, baseline_end: int) -> Outcome | None:
    """Call a window early when its outcome is already certain.

    Colors are monotone non-decreasing and grow by at most one per move,
    so the final count lies in [colors_now, colors_now + moves left].
    Returns None while both win and non-win are still reachable.
    """
    if colors_now > baseline_end:
        return Outcome.LOSE
    if colors_now + (t_end - t_now) < baseline_end:
        return Outcome.WIN
    return None


@dataclass
class MoveRecord:
    """One training tuple; records of a segment share one action trace.

    ``trace[:t]`` replayed along the config order reconstructs the state
    the distribution ``pi`` was recorded at.
    """

    graph: Graph
    t: int
    pi: np.ndarray
    z: Outcome
    trace: np.ndarray


def reconstruct_state(rec: MoveRecord, cfg: Config) -> ColoringState:
    state = ColoringState(rec.graph, compute_order(rec.graph, cfg.order_kind))
    for a in rec.trace[: rec.t]:
        state.apply_inplace(int(a))
    return state


@dataclass(frozen=True)
class SegmentResult:
    """Episode-log entry for one played window."""

    graph_key: str
    start_t: int
    moves: int
    z: Outcome
    agent_colors: int
    baseline_colors: int
    aborted_at: int | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "graph": self.graph_key,
                "start_t": self.start_t,
                "moves": self.moves,
                "z": self.z.name.lower(),
                "agent_colors": self.agent_colors,
                "baseline_colors": self.baseline_colors,
                "aborted_at": self.aborted_at,
            }
        )


def play_segment(
    g: Graph,
    start_t: int,
    cfg: Config,
    evaluator,
    baseline: BaselineOracle,
    seed: int,
    early_abort: bool | None = None,
) -> tuple[list[MoveRecord], SegmentResult]:
    """Play one limited run-ahead window starting at ``start_t``.

    Runs min(mcts_segment, window) search-guided moves with the tree
    reused across them, completes the rest of the window with the frozen
    fast policy, and scores the result against the baseline's color
    count at the same absolute move index. Every record of the segment
    carries that one outcome. Moves before ``sample_first_k`` (absolute
    episode index) are sampled from the visit distribution, later ones
    take its argmax.
    """
    if not 0 <= start_t < g.n:
        raise ParameterError(f"start_t {start_t} outside [0, {g.n})")
    if early_abort is None:
        early_abort = cfg.early_abort
    rng = make_rng(seed)
    btrace = baseline.trace(g, cfg)
    t_end = min(start_t + cfg.run_ahead, g.n)
    baseline_end = int(btrace.cumulative[t_end])

    state = fast_forward(g, btrace, start_t, cfg)
    tree = SearchTree(
        state,
        evaluator,
        t_end,
        btrace.cumulative,
        c=cfg.ucb_c,
        root_noise=cfg.root_noise,
        dirichlet_alpha=cfg.dirichlet_alpha,
        dirichlet_frac=cfg.dirichlet_frac,
        rng=rng,
    )

    taken: list[tuple[int, np.ndarray]] = []
    actions: list[int] = []
    verdict: Outcome | None = None
    aborted_at: int | None = None

    # Fast-forward replays the baseline itself, so at the first move the
    # window cannot be decided yet; checks start from the second.
    for i in range(min(cfg.mcts_segment, t_end - start_t)):
        if early_abort and i > 0:
            verdict = abort_outcome(state.colors_used, state.t, t_end, baseline_end)
            if verdict is not None:
                aborted_at = state.t
                break
        pi = search(tree, cfg.simulations, tau=1.0)
        if state.t < cfg.sample_first_k:
            choice = int(rng.choice(pi.size, p=pi))
        else:
            choice = int(np.argmax(pi))
        action = tree.root.actions[choice]
        taken.append((state.t, pi))
        actions.append(action)
        tree.advance_root(action)

    if verdict is None:
        while state.t < t_end:
            if early_abort:
                verdict = abort_outcome(state.colors_used, state.t, t_end, baseline_end)
                if verdict is not None:
                    aborted_at = state.t
                    break
            state.apply_inplace(baseline.policy.choose(state))
    if verdict is None:
        verdict = outcome_vs_baseline(state.colors_used, baseline_end)

    trace_arr = np.empty(start_t + len(actions), dtype=np.int64)
    trace_arr[:start_t] = btrace.actions[:start_t]
    trace_arr[start_t:] = actions
    records = [MoveRecord(graph=g, t=t, pi=pi, z=verdict, trace=trace_arr) for t, pi in taken]
    result = SegmentResult(
        graph_key=g.key(),
        start_t=start_t,
        moves=len(records),
        z=verdict,
        agent_colors=state.colors_used,
        baseline_colors=baseline_end,
        aborted_at=aborted_at,
    )
    return records, result


def sample_positions(graphs: Sequence[Graph], cfg: Config, seed: int) -> list[tuple[int, int]]:
    """Draw window starts uniformly over the union of all move indices.

    Returns (graph index, start move) pairs, without replacement,
    floor(rate * total moves) of them, sorted so work on one graph is
    contiguous.
    """
    if not graphs:
        raise ParameterError("empty training set")
    sizes = np.array([g.n for g in graphs], dtype=np.int64)
    total = int(sizes.sum())
    count = int(np.floor(cfg.move_sample_rate * total))
    if count == 0:
        return []
    rng = make_rng(seed)
    flat = rng.choice(total, size=count, replace=False)
    bounds = np.cumsum(sizes)
    starts = bounds - sizes
    out: list[tuple[int, int]] = []
    for f in sorted(flat.tolist()):
        gi = int(np.searchsorted(bounds, f, side="right"))
        out.append((gi, int(f - starts[gi])))
    return out


# -- replay buffer ------------------------------------------------------


class ReplayBuffer:
    """FIFO record store holding a single shared copy of each graph."""

    def __init__(self, capacity: int = 2**20) -> None:
        if capacity < 1:
            raise ParameterError("capacity must be >= 1")
        self.capacity = capacity
        self.embeddings = EmbeddingCache()
        self._records: deque[MoveRecord] = deque()
        self._graphs: dict[str, Graph] = {}
        self._refs: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._records)

    @property
    def graph_count(self) -> int:
        return len(self._graphs)

    def refcount(self, graph_key: str) -> int:
        return self._refs.get(graph_key, 0)

    def append(self, records: Iterable[MoveRecord]) -> None:
        """Add records oldest-first, evicting beyond capacity."""
        for rec in records:
            key = rec.graph.key()
            canon = self._graphs.get(key)
            if canon is None:
                self._graphs[key] = rec.graph
            else:
                rec.graph = canon
            self._refs[key] = self._refs.get(key, 0) + 1
            self._records.append(rec)
            while len(self._records) > self.capacity:
                self._evict_oldest()

    def _evict_oldest(self) -> None:
        old = self._records.popleft()
        key = old.graph.key()
        self._refs[key] -= 1
        if self._refs[key] == 0:
            del self._refs[key]
            del self._graphs[key]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[MoveRecord]:
        """Uniform with replacement."""
        if batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self._records:
            raise StateError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._records), size=batch_size)
        return [self._records[int(i)] for i in idx]

    def table_for(self, rec: MoveRecord, store, cfg: Config, version: int) -> EmbeddingTable:
        """Embedding table for a sampled record, materialized lazily."""
        return self.embeddings.table(rec.graph, store, cfg, version)


# -- driver -------------------------------------------------------------


def run_selfplay(
    graphs: Sequence[Graph],
    cfg: Config,
    make_evaluator: Callable[[Graph], object],
    baseline: BaselineOracle,
    buffer: ReplayBuffer,
    seed: int,
    log_path: str | None = None,
) -> list[SegmentResult]:
    """One pass: sample window starts, play them, fill the buffer.

    Per-segment seeds are derived from (seed, position index) so a pass
    replays identically regardless of chunking.
    """
    positions = sample_positions(graphs, cfg, seed)
    results: list[SegmentResult] = []
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for j, (gi, start_t) in enumerate(positions):
            g = graphs[gi]
            seg_seed = int(mix64(seed, j))
            records, info = play_segment(
                g, start_t, cfg, make_evaluator(g), baseline, seed=seg_seed
            )
            buffer.append(records)
            results.append(info)
            if fh is not None:
                fh.write(info.to_json() + "\n")
    finally:
        if fh is not None:
            fh.close()
    return results

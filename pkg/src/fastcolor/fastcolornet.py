"""Policy and value networks over coloring states.

A move is scored from three fixed-size contexts: a graph summary (bucketed
one-hot counts), a window of vertex embeddings around the current position
in the visitation order, and one small embedding set per candidate color.
The V-network maps the first two to a 3-way outcome distribution; the
P-network scores every candidate with shared weights and normalizes across
the dynamic action set.

Training couples the networks to the embedding table: context rows are
occasionally made "live" by recomputing them from the current transfer
parameters along their sampled message chain, so the loss gradient reaches
those parameters through the same chain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .coloring import ColoringState, Outcome
from .embedding import (
    EmbeddingTable,
    encode_multihot,
    init_transfer_params,
    onehot_vector,
    walk_backprop,
    walk_value,
)
from .errors import ContractError, ParameterError
from .graph import Graph
from .nn import (
    AdamState,
    ParamStore,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    init_batchnorm,
    init_conv1d,
    init_dense,
    softmax,
)
from .rng import make_rng, mix64

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12

__all__ = [
    "MoveInput",
    "NetOutput",
    "TrainMove",
    "graph_context",
    "build_contexts",
    "init_fastcolornet",
    "v_forward",
    "p_forward",
    "evaluate",
    "fcn_loss",
    "forward_backward",
    "fcn_train_step",
]


# -- contexts ----------------------------------------------------------


@dataclass
class MoveInput:
    """Everything the networks need to score one move.

    ``pc_vertices`` and ``cand_vertices`` name the vertex behind each
    embedding row (-1 for zero padding) so training can route gradients
    back into the embedding parameters.
    """

    table: EmbeddingTable
    graph: Graph
    gc: np.ndarray  # (4 * feature_bins,)
    pc: np.ndarray  # (2w, D)
    pc_vertices: np.ndarray  # (2w,) int64
    cand_sets: np.ndarray  # (K, m, D)
    cand_vertices: np.ndarray  # (K, m) int64
    actions: list[int]
    capped: bool = False


@dataclass
class NetOutput:
    actions: list[int]
    p: np.ndarray  # (K,)
    v3: np.ndarray  # (win, tie, lose)
    v: float  # p_win - p_lose
    capped: bool = False


@dataclass
class TrainMove:
    move: MoveInput
    pi: np.ndarray
    z: Outcome


def graph_context(state: ColoringState, cfg) -> np.ndarray:
    """Four stacked feature-bin blocks: vertex count (log2 bucketed),
    colors used, vertices colored so far, and the valid-color multi-hot."""
    g = state.graph
    bins = cfg.feature_bins
    maxc = g.max_degree + 1
    count_block = np.zeros(bins)
    # vertex counts span orders of magnitude; bucket by bit length
    count_block[min(bins - 1, g.n.bit_length() - 1)] = 1.0
    used_block = onehot_vector(min(state.colors_used, maxc), maxc, bins)
    progress_block = onehot_vector(state.t, g.n, bins)
    existing = state.valid_actions().existing
    valid_block = encode_multihot([min(c, maxc) for c in existing], maxc, bins)
    return np.concatenate([count_block, used_block, progress_block, valid_block])


def build_contexts(state: ColoringState, table: EmbeddingTable, cfg) -> MoveInput:
    g = state.graph
    if table.tables.shape[1] != g.n:
        raise ContractError(
            f"embedding table covers {table.tables.shape[1]} vertices, graph has {g.n}")
    w, m, dim = cfg.window, cfg.color_set_size, cfg.embed_dim
    rows = table.final
    t = state.t

    pc = np.zeros((2 * w, dim))
    pc_vertices = np.full(2 * w, -1, dtype=np.int64)
    for i in range(2 * w):
        src = t - w + i
        if 0 <= src < g.n:
            v = int(state.order[src])
            pc_vertices[i] = v
            pc[i] = rows[v]

    aset = state.valid_actions()
    existing = list(aset.existing)
    capped = False
    if len(existing) + 1 > cfg.candidate_cap:
        existing = existing[: cfg.candidate_cap - 1]
        capped = True
        logger.warning("candidate cap %d hit at t=%d (%d existing colors)",
                       cfg.candidate_cap, t, len(aset.existing))
    k = len(existing) + 1
    cand_sets = np.zeros((k, m, dim))
    cand_vertices = np.full((k, m), -1, dtype=np.int64)
    for ci, color in enumerate(existing):
        members = state.color_members[color]
        if cfg.recent_color_sample == "random" and len(members) > m:
            keys = np.asarray(mix64(
                np.full(len(members), table.seed, dtype=np.uint64),
                np.full(len(members), t, dtype=np.uint64),
                np.full(len(members), color, dtype=np.uint64),
                np.arange(len(members), dtype=np.uint64)))
            take = [members[i] for i in np.argsort(keys)[:m]]
        else:
            take = members[-m:][::-1]  # most recent first
        for si, v in enumerate(take[:m]):
            cand_sets[ci, si] = rows[v]
            cand_vertices[ci, si] = v

    return MoveInput(table=table, graph=g, gc=graph_context(state, cfg),
                     pc=pc, pc_vertices=pc_vertices, cand_sets=cand_sets,
                     cand_vertices=cand_vertices,
                     actions=existing + [aset.new_color], capped=capped)


# -- parameter layout --------------------------------------------------


def _init_conv_stack(store: ParamStore, prefix: str, c_in: int, cfg, rng) -> None:
    for i in range(cfg.seq_layers):
        cin = c_in if i == 0 else cfg.seq_channels
        init_conv1d(store, f"{prefix}.{i}", cfg.seq_filter, cin, cfg.seq_channels, rng)
        init_batchnorm(store, f"{prefix}.{i}.bn", cfg.seq_channels)


def _init_fc_stack(store: ParamStore, prefix: str, c_in: int, width: int,
                   layers: int, rng) -> None:
    for i in range(layers):
        cin = c_in if i == 0 else width
        init_dense(store, f"{prefix}.{i}", cin, width, rng)
        init_batchnorm(store, f"{prefix}.{i}.bn", width)


def init_fastcolornet(cfg, seed: int | None = None) -> ParamStore:
    """Fresh parameters for the transfer function and both networks.

    The final heads start at zero, so an untrained model emits uniform
    distributions for both p and the outcome softmax.
    """
    rng = make_rng(cfg.init_seed if seed is None else seed)
    store = ParamStore(dtype=np.dtype(cfg.dtype))
    init_transfer_params(store, cfg, rng)

    gc_width = 4 * cfg.feature_bins
    _init_conv_stack(store, "v.seq", cfg.embed_dim, cfg, rng)
    _init_fc_stack(store, "v.fc", gc_width + cfg.seq_channels, cfg.v_width, cfg.v_layers, rng)
    init_dense(store, "v.head", cfg.v_width, 3, rng, zero=True)

    pc_width = cfg.embed_dim if cfg.pool_problem_context else 2 * cfg.window * cfg.embed_dim
    cand_in = gc_width + pc_width + cfg.color_set_size * cfg.embed_dim
    _init_fc_stack(store, "p.fc", cand_in, cfg.p_width, cfg.p_layers, rng)
    if cfg.candidate_seq2seq:
        _init_conv_stack(store, "p.seq", cfg.p_width, cfg, rng)
        init_dense(store, "p.head", cfg.seq_channels, 1, rng, zero=True)
    else:
        init_dense(store, "p.head", cfg.p_width, 1, rng, zero=True)
    return store


# -- stacks ------------------------------------------------------------


def _conv_stack_forward(store, prefix, x, cfg, training):
    """x (B, S, C_in) -> (B, S, C); residual whenever channels match."""
    caches = []
    for i in range(cfg.seq_layers):
        y, conv_cache = conv1d_forward(x, store[f"{prefix}.{i}.k"], store[f"{prefix}.{i}.b"])
        y, bn_cache = batchnorm_forward(
            y, store[f"{prefix}.{i}.bn.gamma"], store[f"{prefix}.{i}.bn.beta"],
            store[f"{prefix}.{i}.bn._running_mean"], store[f"{prefix}.{i}.bn._running_var"],
            training)
        mask = y > 0
        y = y * mask
        skip = x.shape[-1] == y.shape[-1]
        out = x + y if skip else y
        caches.append((conv_cache, bn_cache, mask, skip))
        x = out
    return x, caches


def _conv_stack_backward(store, prefix, dout, caches, cfg, grads):
    for i in reversed(range(cfg.seq_layers)):
        conv_cache, bn_cache, mask, skip = caches[i]
        dy = dout * mask
        dy, dgamma, dbeta = batchnorm_backward(dy, bn_cache)
        _acc(grads, f"{prefix}.{i}.bn.gamma", dgamma)
        _acc(grads, f"{prefix}.{i}.bn.beta", dbeta)
        dx, dk, db = conv1d_backward(dy, conv_cache)
        _acc(grads, f"{prefix}.{i}.k", dk)
        _acc(grads, f"{prefix}.{i}.b", db)
        dout = dx + dout if skip else dx
    return dout


def _conv_stack_forward_list(store, prefix, seqs, cfg, training):
    """Variable-length sequences; batchnorm statistics are shared across
    the whole batch, so conv runs per sequence but normalization is joint."""
    lengths = [s.shape[0] for s in seqs]
    xs = list(seqs)
    caches = []
    for i in range(cfg.seq_layers):
        conv_caches = []
        ys = []
        for x in xs:
            y, cc = conv1d_forward(x[None, :, :], store[f"{prefix}.{i}.k"], store[f"{prefix}.{i}.b"])
            ys.append(y[0])
            conv_caches.append(cc)
        flat = np.concatenate(ys, axis=0)
        flat, bn_cache = batchnorm_forward(
            flat, store[f"{prefix}.{i}.bn.gamma"], store[f"{prefix}.{i}.bn.beta"],
            store[f"{prefix}.{i}.bn._running_mean"], store[f"{prefix}.{i}.bn._running_var"],
            training)
        mask = flat > 0
        flat = flat * mask
        skip = xs[0].shape[-1] == flat.shape[-1]
        outs = []
        pos = 0
        for x, n in zip(xs, lengths):
            piece = flat[pos:pos + n]
            outs.append(x + piece if skip else piece)
            pos += n
        caches.append((conv_caches, bn_cache, mask, skip))
        xs = outs
    return xs, (caches, lengths)


def _conv_stack_backward_list(store, prefix, douts, cache, cfg, grads):
    caches, lengths = cache
    douts = list(douts)
    for i in reversed(range(cfg.seq_layers)):
        conv_caches, bn_cache, mask, skip = caches[i]
        flat_dout = np.concatenate(douts, axis=0)
        dy = flat_dout * mask
        dy, dgamma, dbeta = batchnorm_backward(dy, bn_cache)
        _acc(grads, f"{prefix}.{i}.bn.gamma", dgamma)
        _acc(grads, f"{prefix}.{i}.bn.beta", dbeta)
        new_douts = []
        pos = 0
        for sl, cc, dout in zip(lengths, conv_caches, douts):
            dx, dk, db = conv1d_backward(dy[pos:pos + sl][None, :, :], cc)
            _acc(grads, f"{prefix}.{i}.k", dk)
            _acc(grads, f"{prefix}.{i}.b", db)
            new_douts.append(dx[0] + dout if skip else dx[0])
            pos += sl
        douts = new_douts
    return douts


def _fc_stack_forward(store, prefix, x, layers, training):
    caches = []
    for i in range(layers):
        y, dense_cache = dense_forward(x, store[f"{prefix}.{i}.w"], store[f"{prefix}.{i}.b"])
        y, bn_cache = batchnorm_forward(
            y, store[f"{prefix}.{i}.bn.gamma"], store[f"{prefix}.{i}.bn.beta"],
            store[f"{prefix}.{i}.bn._running_mean"], store[f"{prefix}.{i}.bn._running_var"],
            training)
        mask = y > 0
        y = y * mask
        skip = x.shape[-1] == y.shape[-1]
        out = x + y if skip else y
        caches.append((dense_cache, bn_cache, mask, skip))
        x = out
    return x, caches


def _fc_stack_backward(store, prefix, dout, caches, grads):
    for i in reversed(range(len(caches))):
        dense_cache, bn_cache, mask, skip = caches[i]
        dy = dout * mask
        dy, dgamma, dbeta = batchnorm_backward(dy, bn_cache)
        _acc(grads, f"{prefix}.{i}.bn.gamma", dgamma)
        _acc(grads, f"{prefix}.{i}.bn.beta", dbeta)
        dx, dw, db = dense_backward(dy, dense_cache)
        _acc(grads, f"{prefix}.{i}.w", dw)
        _acc(grads, f"{prefix}.{i}.b", db)
        dout = dx + dout if skip else dx
    return dout


def _acc(grads: dict, name: str, val: np.ndarray) -> None:
    if name in grads:
        grads[name] = grads[name] + val
    else:
        grads[name] = val


def _pool_forward(x: np.ndarray, kind: str):
    # x (B, S, C) -> (B, C)
    if kind == "mean":
        return x.mean(axis=1), None
    idx = x.argmax(axis=1)
    return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :], idx


def _pool_backward(dp: np.ndarray, x_shape, kind: str, idx):
    b, s, c = x_shape
    if kind == "mean":
        return np.broadcast_to(dp[:, None, :] / s, x_shape).copy()
    dx = np.zeros(x_shape, dtype=dp.dtype)
    np.put_along_axis(dx, idx[:, None, :], dp[:, None, :], axis=1)
    return dx


# -- networks ----------------------------------------------------------


def v_forward(store: ParamStore, cfg, moves: list[MoveInput], training: bool,
              pc_override: np.ndarray | None = None):
    """Outcome head over a batch of moves; returns (v3 (B,3), cache)."""
    pc = pc_override if pc_override is not None else np.stack([mi.pc for mi in moves])
    gc = np.stack([mi.gc for mi in moves])
    seq_out, seq_cache = _conv_stack_forward(store, "v.seq", pc, cfg, training)
    pooled, pool_idx = _pool_forward(seq_out, cfg.pool)
    h = np.concatenate([gc, pooled], axis=1)
    fc_out, fc_cache = _fc_stack_forward(store, "v.fc", h, cfg.v_layers, training)
    logits, head_cache = dense_forward(fc_out, store["v.head.w"], store["v.head.b"])
    v3 = softmax(logits)
    cache = (seq_cache, pool_idx, seq_out.shape, fc_cache, head_cache, gc.shape[1])
    return v3, logits, cache


def v_backward(store: ParamStore, cfg, dlogits: np.ndarray, cache, grads: dict) -> np.ndarray:
    seq_cache, pool_idx, seq_shape, fc_cache, head_cache, gc_width = cache
    dh, dw, db = dense_backward(dlogits, head_cache)
    _acc(grads, "v.head.w", dw)
    _acc(grads, "v.head.b", db)
    dh = _fc_stack_backward(store, "v.fc", dh, fc_cache, grads)
    dpooled = dh[:, gc_width:]
    dseq = _pool_backward(dpooled, seq_shape, cfg.pool, pool_idx)
    return _conv_stack_backward(store, "v.seq", dseq, seq_cache, cfg, grads)


def p_forward(store: ParamStore, cfg, moves: list[MoveInput], training: bool,
              pc_override: np.ndarray | None = None,
              cand_override: list[np.ndarray] | None = None):
    """Candidate scores; returns (list of p vectors, list of logits, cache)."""
    sizes = [mi.cand_sets.shape[0] for mi in moves]
    if any(k == 0 for k in sizes):
        raise ContractError("every move must offer at least one candidate")
    pc = pc_override if pc_override is not None else np.stack([mi.pc for mi in moves])
    if cfg.pool_problem_context:
        pc_feat = pc.mean(axis=1) if cfg.pool == "mean" else pc.max(axis=1)
        pc_pool_idx = None if cfg.pool == "mean" else pc.argmax(axis=1)
    else:
        pc_feat = pc.reshape(pc.shape[0], -1)
        pc_pool_idx = None
    rows = []
    for b, mi in enumerate(moves):
        cand = cand_override[b] if cand_override is not None else mi.cand_sets
        k = cand.shape[0]
        head = np.concatenate([mi.gc, pc_feat[b]])
        rows.append(np.concatenate(
            [np.broadcast_to(head, (k, head.size)), cand.reshape(k, -1)], axis=1))
    x = np.concatenate(rows, axis=0)
    feats, fc_cache = _fc_stack_forward(store, "p.fc", x, cfg.p_layers, training)
    if cfg.candidate_seq2seq:
        split = np.split(feats, np.cumsum(sizes)[:-1])
        seq_outs, seq_cache = _conv_stack_forward_list(store, "p.seq", split, cfg, training)
        flat = np.concatenate(seq_outs, axis=0)
    else:
        seq_cache = None
        flat = feats
    scores, head_cache = dense_forward(flat, store["p.head.w"], store["p.head.b"])
    logits_list = np.split(scores[:, 0], np.cumsum(sizes)[:-1])
    p_list = [softmax(lg) for lg in logits_list]
    cache = (sizes, pc.shape, pc_pool_idx, fc_cache, seq_cache, head_cache,
             [mi.gc.size for mi in moves], pc_feat.shape[1])
    return p_list, logits_list, cache


def p_backward(store: ParamStore, cfg, dlogits_list, cache, grads: dict):
    """Returns (d_pc (B,2w,D), list of d_cand (K,m,D))."""
    sizes, pc_shape, pc_pool_idx, fc_cache, seq_cache, head_cache, gc_sizes, pcf_width = cache
    dscores = np.concatenate(dlogits_list)[:, None]
    dflat, dw, db = dense_backward(dscores, head_cache)
    _acc(grads, "p.head.w", dw)
    _acc(grads, "p.head.b", db)
    if cfg.candidate_seq2seq:
        split = np.split(dflat, np.cumsum(sizes)[:-1])
        dseqs = _conv_stack_backward_list(store, "p.seq", split, seq_cache, cfg, grads)
        dfeats = np.concatenate(dseqs, axis=0)
    else:
        dfeats = dflat
    dx = _fc_stack_backward(store, "p.fc", dfeats, fc_cache, grads)

    b_target, s, dim = pc_shape
    d_pc = np.zeros(pc_shape)
    d_cands = []
    pos = 0
    for b, k in enumerate(sizes):
        drows = dx[pos:pos + k]
        pos += k
        gcw = gc_sizes[b]
        d_pcf = drows[:, gcw:gcw + pcf_width].sum(axis=0)
        if cfg.pool_problem_context:
            if cfg.pool == "mean":
                d_pc[b] += d_pcf[None, :] / s
            else:
                np.add.at(d_pc[b], (pc_pool_idx[b], np.arange(dim)), d_pcf)
        else:
            d_pc[b] += d_pcf.reshape(s, dim)
        d_cands.append(drows[:, gcw + pcf_width:].reshape(k, -1, dim))
    return d_pc, d_cands


def evaluate(store: ParamStore, cfg, state: ColoringState, table: EmbeddingTable) -> NetOutput:
    """Score one state with frozen statistics; pure given the arguments."""
    mi = build_contexts(state, table, cfg)
    v3, _, _ = v_forward(store, cfg, [mi], training=False)
    p_list, _, _ = p_forward(store, cfg, [mi], training=False)
    v3_row = v3[0]
    return NetOutput(actions=mi.actions, p=p_list[0], v3=v3_row,
                     v=float(v3_row[0] - v3_row[2]), capped=mi.capped)


# -- loss and training -------------------------------------------------


def fcn_loss(p_list, v3_rows, pis, zs) -> tuple[float, int]:
    """Mean over moves of [-pi . log p - log v3[z]]; returns (loss, clamps)."""
    if not p_list:
        raise ParameterError("empty batch")
    total = 0.0
    clamps = 0
    for p, v3, pi, z in zip(p_list, v3_rows, pis, zs):
        pi = np.asarray(pi, dtype=np.float64)
        if pi.shape != np.shape(p):
            raise ContractError(f"pi has shape {pi.shape}, p has {np.shape(p)}")
        support = pi > 0
        if np.any(p[support] < LOG_EPS) or v3[Outcome(z).index] < LOG_EPS:
            clamps += 1
        total += -float(pi[support] @ np.log(np.maximum(p[support], LOG_EPS)))
        total += -float(np.log(max(v3[Outcome(z).index], LOG_EPS)))
    return total / len(p_list), clamps


def forward_backward(moves: list[MoveInput], pis, zs, store: ParamStore, cfg,
                     walks: list[tuple[int, str, tuple, int]], training: bool):
    """One joint pass over both networks.

    ``walks`` lists the live context rows as (move index, "pc"|"cand",
    position, vertex). Live rows are recomputed from the current transfer
    parameters through their sampled chains before the forward pass, and
    the loss gradient on them is pushed back through the same chains, so
    the returned gradients cover the embedding parameters too.
    """
    pc = np.stack([mi.pc for mi in moves]).astype(np.float64)
    cands = [mi.cand_sets.astype(np.float64) for mi in moves]
    for b, kind, pos, vertex in walks:
        mi = moves[b]
        live = walk_value(mi.graph, store, cfg, mi.table, vertex,
                          cfg.walk_length, mi.table.seed)
        if kind == "pc":
            pc[b, pos] = live
        else:
            cands[b][pos] = live

    v3, v_logits, v_cache = v_forward(store, cfg, moves, training, pc_override=pc)
    p_list, p_logits, p_cache = p_forward(store, cfg, moves, training,
                                          pc_override=pc, cand_override=cands)
    loss, clamps = fcn_loss(p_list, v3, pis, zs)

    batch = len(moves)
    v_target = np.zeros((batch, 3))
    for b, z in enumerate(zs):
        v_target[b, Outcome(z).index] = 1.0
    dv_logits = (v3 - v_target) / batch
    dp_logits = [(p - np.asarray(pi)) / batch for p, pi in zip(p_list, pis)]

    grads: dict[str, np.ndarray] = {}
    d_pc = v_backward(store, cfg, dv_logits, v_cache, grads)
    d_pc_p, d_cands = p_backward(store, cfg, dp_logits, p_cache, grads)
    d_pc = d_pc + d_pc_p

    for b, kind, pos, vertex in walks:
        mi = moves[b]
        upstream = d_pc[b, pos] if kind == "pc" else d_cands[b][pos]
        wgrads = walk_backprop(mi.graph, store, cfg, mi.table, vertex,
                               upstream, cfg.walk_length, mi.table.seed)
        for name, val in wgrads.items():
            _acc(grads, name, val)

    return loss, grads, {"clamps": clamps, "walks": len(walks)}


def draw_walks(moves: list[MoveInput], cfg, rng: np.random.Generator):
    """Bernoulli(walk_rate) per context row, stopping at the walk budget."""
    walks: list[tuple[int, str, tuple, int]] = []
    if cfg.walk_rate <= 0.0:
        return walks
    for b, mi in enumerate(moves):
        for pos in range(mi.pc_vertices.size):
            v = int(mi.pc_vertices[pos])
            if v >= 0 and rng.random() < cfg.walk_rate:
                walks.append((b, "pc", pos, v))
        k, m = mi.cand_vertices.shape
        for ci in range(k):
            for si in range(m):
                v = int(mi.cand_vertices[ci, si])
                if v >= 0 and rng.random() < cfg.walk_rate:
                    walks.append((b, "cand", (ci, si), v))
    return walks[: cfg.walk_budget]


def fcn_train_step(batch: list[TrainMove], store: ParamStore, cfg,
                   adam: AdamState, rng: np.random.Generator):
    """Forward, backward, and one optimizer update over a batch of moves."""
    if not batch:
        raise ParameterError("empty batch")
    moves = [tm.move for tm in batch]
    pis = [tm.pi for tm in batch]
    zs = [tm.z for tm in batch]
    walks = draw_walks(moves, cfg, rng)
    loss, grads, stats = forward_backward(moves, pis, zs, store, cfg, walks,
                                          training=True)
    full = {name: grads.get(name, np.zeros_like(store[name]))
            for name in store.trainable_names()}
    adam_step(store, full, adam)
    stats["capped_moves"] = sum(1 for mi in moves if mi.capped)
    return loss, stats

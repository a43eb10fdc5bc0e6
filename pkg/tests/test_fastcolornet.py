"""Context assembly, the two networks, the joint loss, and training steps."""

import logging

import numpy as np
import pytest

from fastcolor.coloring import ColoringState, Outcome
from fastcolor.config import Config
from fastcolor.embedding import compute_embeddings
from fastcolor.errors import ContractError
from fastcolor.fastcolornet import (
    MoveInput,
    TrainMove,
    build_contexts,
    draw_walks,
    evaluate,
    fcn_loss,
    fcn_train_step,
    forward_backward,
    graph_context,
    init_fastcolornet,
    p_forward,
    v_forward,
)
from fastcolor.graph import Graph, gen_er
from fastcolor.nn import AdamState, ParamStore, finite_diff_check
from fastcolor.rng import make_rng

from conftest import complete_graph, path_graph, cycle_graph


def tiny_cfg(**kw) -> Config:
    base = dict(feature_bins=8, embed_dim=6, embed_hidden=10, embed_iterations=2,
                lstm_steps=1, window=2, color_set_size=2, v_width=16, v_layers=2,
                p_width=16, p_layers=2, seq_channels=8, seq_layers=2, seq_filter=3,
                walk_length=2, dtype="float64")
    base.update(kw)
    return Config(**base)


def setup_state(g, cfg, moves=(), seed=0, init_seed=None):
    store = init_fastcolornet(cfg, seed=init_seed)
    table = compute_embeddings(g, store, cfg, seed=seed)
    state = ColoringState(g)
    for a in moves:
        state.apply_inplace(a)
    return store, table, state


class TestContexts:
    def test_first_move(self):
        cfg = tiny_cfg()
        g = path_graph(6)
        store, table, state = setup_state(g, cfg)
        mi = build_contexts(state, table, cfg)
        # nothing colored: past half of the window is padding, and the
        # only candidate is the new color with an all-zero set
        assert not mi.pc[: cfg.window].any()
        assert (mi.pc_vertices[: cfg.window] == -1).all()
        assert mi.cand_sets.shape == (1, cfg.color_set_size, cfg.embed_dim)
        assert not mi.cand_sets.any()
        assert mi.actions == [0]

    def test_k4_after_two_moves_forced(self):
        cfg = tiny_cfg()
        g = complete_graph(4)
        store, table, state = setup_state(g, cfg, moves=(0, 1))
        mi = build_contexts(state, table, cfg)
        assert mi.actions == [2]
        assert mi.cand_sets.shape[0] == 1
        assert not mi.cand_sets.any()

    def test_path_color_set_rows(self):
        cfg = tiny_cfg(color_set_size=4)
        g = path_graph(3)
        store, table, state = setup_state(g, cfg, moves=(0, 1))
        mi = build_contexts(state, table, cfg)
        assert mi.actions == [0, 2]
        assert np.allclose(mi.cand_sets[0, 0], table.final[0])
        assert not mi.cand_sets[0, 1:].any()
        assert not mi.cand_sets[1].any()
        assert mi.cand_vertices[0, 0] == 0 and (mi.cand_vertices[0, 1:] == -1).all()

    def test_graph_context_block_structure(self):
        cfg = tiny_cfg()
        g = path_graph(5)
        store, table, state = setup_state(g, cfg, moves=(0,))
        gc = graph_context(state, cfg)
        bins = cfg.feature_bins
        assert gc.shape == (4 * bins,)
        for block in range(3):  # the three one-hot blocks
            assert gc[block * bins:(block + 1) * bins].sum() == 1.0

    def test_problem_window_rows_match_table(self):
        cfg = tiny_cfg()
        g = path_graph(8)
        store, table, state = setup_state(g, cfg, moves=(0, 1, 0))
        mi = build_contexts(state, table, cfg)  # t=3, w=2
        assert mi.pc_vertices.tolist() == [1, 2, 3, 4]
        for i, v in enumerate(mi.pc_vertices):
            assert np.allclose(mi.pc[i], table.final[v])

    def test_window_pads_past_graph_end(self):
        cfg = tiny_cfg(window=4)
        g = path_graph(5)
        store, table, state = setup_state(g, cfg, moves=(0, 1, 0, 1))
        mi = build_contexts(state, table, cfg)  # t=4, next window runs off the end
        assert mi.pc_vertices.tolist() == [0, 1, 2, 3, 4, -1, -1, -1]
        assert not mi.pc[5:].any()

    def test_recent_members_come_first(self):
        cfg = tiny_cfg(color_set_size=2)
        g = Graph.from_edges(5, [])  # no conflicts: everything reusable
        store, table, state = setup_state(g, cfg, moves=(0, 0, 0))
        mi = build_contexts(state, table, cfg)
        # color 0 holds [0, 1, 2]; the set shows the 2 newest, newest first
        assert mi.cand_vertices[0].tolist() == [2, 1]

    def test_candidate_cap_logged(self, caplog):
        cfg = tiny_cfg(candidate_cap=3)
        g = Graph.from_edges(6, [])
        store, table, state = setup_state(g, cfg, moves=(0, 1, 2, 3))
        with caplog.at_level(logging.WARNING):
            mi = build_contexts(state, table, cfg)
        assert mi.capped
        assert mi.actions == [0, 1, 4]
        assert any("candidate cap" in rec.message for rec in caplog.records)

    def test_table_size_mismatch_rejected(self):
        cfg = tiny_cfg()
        store, table, _ = setup_state(path_graph(4), cfg)
        state = ColoringState(path_graph(5))
        with pytest.raises(ContractError, match="embedding table"):
            build_contexts(state, table, cfg)


class TestForward:
    def test_v3_is_distribution(self):
        cfg = tiny_cfg()
        store, table, state = setup_state(cycle_graph(7), cfg, moves=(0, 1))
        out = evaluate(store, cfg, state, table)
        assert out.v3.shape == (3,)
        assert (out.v3 >= 0).all() and abs(out.v3.sum() - 1.0) < 1e-6
        assert -1.0 <= out.v <= 1.0
        assert abs(out.v - (out.v3[0] - out.v3[2])) < 1e-12

    def test_p_matches_action_set_and_sums_to_one(self):
        cfg = tiny_cfg()
        g = gen_er(12, 0.4, seed=3)
        store, table, state = setup_state(g, cfg)
        rng = make_rng(0)
        while not state.is_terminal:
            out = evaluate(store, cfg, state, table)
            aset = state.valid_actions()
            assert out.actions == list(aset.existing) + [aset.new_color]
            assert out.p.shape == (aset.size,)
            assert abs(out.p.sum() - 1.0) < 1e-6
            state.apply_inplace(out.actions[rng.integers(len(out.actions))])

    def test_fresh_heads_give_uniform_outputs(self):
        cfg = tiny_cfg()
        store, table, state = setup_state(Graph.from_edges(5, []), cfg, moves=(0, 1, 2))
        out = evaluate(store, cfg, state, table)
        assert np.allclose(out.v3, 1.0 / 3.0)
        assert out.v == 0.0
        assert len(out.p) == 4 and np.allclose(out.p, 0.25)

    def test_singleton_candidate_is_certain(self):
        cfg = tiny_cfg()
        store, table, state = setup_state(complete_graph(4), cfg, moves=(0, 1))
        store["p.head.w"] = make_rng(1).normal(size=store["p.head.w"].shape)
        out = evaluate(store, cfg, state, table)
        assert out.p.shape == (1,) and out.p[0] == 1.0

    def test_deterministic(self):
        cfg = tiny_cfg()
        store, table, state = setup_state(cycle_graph(6), cfg, moves=(0,))
        a = evaluate(store, cfg, state, table)
        b = evaluate(store, cfg, state, table)
        assert np.array_equal(a.p, b.p) and np.array_equal(a.v3, b.v3)

    def test_rows_outside_windows_are_ignored(self):
        # locality: the forward pass only reads embedding rows that the
        # contexts reference, so rows of far-away vertices can change freely
        cfg = tiny_cfg()
        g = path_graph(8)
        store, table, state = setup_state(g, cfg, moves=(0, 1))
        base = evaluate(store, cfg, state, table)
        # windows at t=2 (w=2) cover vertices 0..3; 0,1 also appear in
        # color sets; rows 5..7 appear nowhere
        import copy
        other = copy.deepcopy(table)
        other.tables[-1][5:] += 7.5
        got = evaluate(store, cfg, state, other)
        assert np.array_equal(base.v3, got.v3)
        assert np.array_equal(base.p, got.p)

    def test_duplicated_candidates_score_equally(self):
        # weight sharing: with the candidate seq2seq disabled, identical
        # candidate contexts must receive identical probability
        cfg = tiny_cfg(candidate_seq2seq=False)
        g = Graph.from_edges(6, [])
        store, table, state = setup_state(g, cfg, moves=(0, 0, 1))
        store["p.head.w"] = make_rng(2).normal(size=store["p.head.w"].shape)
        mi = build_contexts(state, table, cfg)
        # colors 0 and 1 hold different members; duplicate color 1's set
        mi.cand_sets[0] = mi.cand_sets[1]
        mi.cand_vertices[0] = mi.cand_vertices[1]
        p_list, _, _ = p_forward(store, cfg, [mi], training=False)
        assert np.isclose(p_list[0][0], p_list[0][1])
        assert not np.isclose(p_list[0][0], p_list[0][2])

    def test_permuting_candidates_permutes_p(self):
        cfg = tiny_cfg(candidate_seq2seq=False)
        g = Graph.from_edges(6, [])
        store, table, state = setup_state(g, cfg, moves=(0, 1, 2))
        store["p.head.w"] = make_rng(3).normal(size=store["p.head.w"].shape)
        mi = build_contexts(state, table, cfg)
        p_base, _, _ = p_forward(store, cfg, [mi], training=False)
        perm = [2, 0, 1, 3]
        swapped = MoveInput(table=mi.table, graph=mi.graph, gc=mi.gc, pc=mi.pc,
                            pc_vertices=mi.pc_vertices,
                            cand_sets=mi.cand_sets[perm],
                            cand_vertices=mi.cand_vertices[perm],
                            actions=[mi.actions[i] for i in perm])
        p_perm, _, _ = p_forward(store, cfg, [swapped], training=False)
        assert np.allclose(p_perm[0], p_base[0][perm])

    def test_empty_candidates_rejected(self):
        cfg = tiny_cfg()
        store, table, state = setup_state(path_graph(4), cfg)
        mi = build_contexts(state, table, cfg)
        mi.cand_sets = mi.cand_sets[:0]
        mi.cand_vertices = mi.cand_vertices[:0]
        with pytest.raises(ContractError, match="candidate"):
            p_forward(store, cfg, [mi], training=False)

    def test_default_architecture_shapes(self):
        cfg = Config()
        store = init_fastcolornet(cfg)
        assert store["v.seq.0.k"].shape == (7, 128, 128)
        assert store["v.seq.2.k"].shape == (7, 128, 128)
        assert store["v.fc.0.w"].shape == (128 + 128, 512)
        assert store["v.fc.2.w"].shape == (512, 512)
        assert store["v.head.w"].shape == (512, 3) and not store["v.head.w"].any()
        # per-candidate input: gc 128 + pooled pc 128 + 4 set embeddings
        assert store["p.fc.0.w"].shape == (128 + 128 + 4 * 128, 512)
        assert store["p.fc.4.w"].shape == (512, 512)
        assert store["p.seq.0.k"].shape == (7, 512, 128)
        assert store["p.head.w"].shape == (128, 1) and not store["p.head.w"].any()


class TestLoss:
    def test_perfect_prediction_zero_loss(self):
        p = [np.array([0.0, 1.0])]
        v3 = [np.array([1.0, 0.0, 0.0])]
        loss, clamps = fcn_loss(p, v3, [np.array([0.0, 1.0])], [Outcome.WIN])
        assert loss == 0.0 and clamps == 0

    def test_textbook_values(self):
        p = [np.array([0.5, 0.5])]
        v3 = [np.array([0.25, 0.5, 0.25])]
        loss, clamps = fcn_loss(p, v3, [np.array([0.5, 0.5])], [Outcome.WIN])
        assert abs(loss - (np.log(2) + np.log(4))) < 1e-12
        assert clamps == 0

    def test_zero_probability_clamped_and_flagged(self):
        p = [np.array([1.0, 0.0])]
        v3 = [np.array([1.0, 0.0, 0.0])]
        loss, clamps = fcn_loss(p, v3, [np.array([0.0, 1.0])], [Outcome.WIN])
        assert np.isfinite(loss) and loss > 20.0
        assert clamps == 1

    def test_batch_is_mean(self):
        p = [np.array([0.5, 0.5]), np.array([1.0])]
        v3 = [np.array([0.25, 0.5, 0.25]), np.array([1.0, 0.0, 0.0])]
        pis = [np.array([0.5, 0.5]), np.array([1.0])]
        zs = [Outcome.WIN, Outcome.WIN]
        loss, _ = fcn_loss(p, v3, pis, zs)
        assert abs(loss - (np.log(2) + np.log(4)) / 2) < 1e-12

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractError):
            fcn_loss([np.array([1.0])], [np.ones(3) / 3], [np.array([0.5, 0.5])], [Outcome.TIE])


def _training_batch(cfg, n_moves=3, seed=0):
    g = gen_er(10, 0.35, seed=1)
    store = init_fastcolornet(cfg, seed=2)
    table = compute_embeddings(g, store, cfg, seed=seed)
    state = ColoringState(g)
    batch = []
    rng = make_rng(seed + 10)
    for _ in range(n_moves):
        mi = build_contexts(state, table, cfg)
        k = len(mi.actions)
        pi = rng.dirichlet(np.ones(k))
        z = [Outcome.WIN, Outcome.TIE, Outcome.LOSE][rng.integers(3)]
        batch.append(TrainMove(move=mi, pi=pi, z=z))
        state.apply_inplace(mi.actions[rng.integers(k)])
    return g, store, table, batch


class TestGradients:
    def test_policy_gradient_is_probs_minus_target(self):
        cfg = tiny_cfg()
        g, store, table, batch = _training_batch(cfg)
        moves = [tm.move for tm in batch]
        pis = [tm.pi for tm in batch]
        zs = [tm.z for tm in batch]
        names = ["p.head.b"]
        _, grads, _ = forward_backward(moves, pis, zs, store, cfg, [], training=False)
        p_list, _, _ = p_forward(store, cfg, moves, training=False)
        # with a shared scalar head bias, dL/db = sum over candidates of
        # (p - pi)/B, which telescopes to 0 since both sum to 1 per move
        assert abs(grads["p.head.b"][0]) < 1e-12
        v3, _, _ = v_forward(store, cfg, moves, training=False)
        want = np.zeros(3)
        for z in zs:
            t = np.zeros(3)
            t[Outcome(z).index] = 1.0
            want += (np.ones(3) / 3 - t) / len(batch)
        assert np.allclose(grads["v.head.b"], want, atol=1e-12)

    def test_full_model_finite_difference(self):
        cfg = tiny_cfg(walk_rate=1.0, walk_budget=1000)
        g = gen_er(10, 0.35, seed=1)
        store = init_fastcolornet(cfg, seed=2)
        # zero-initialized heads block signal into the stacks below, and
        # zero additive params leave padded rows exactly on the relu kink
        # where central differences straddle the boundary; move off both
        prng = make_rng(5)
        store["p.head.w"] = prng.normal(size=store["p.head.w"].shape) * 0.3
        store["v.head.w"] = prng.normal(size=store["v.head.w"].shape) * 0.3
        for name in store.trainable_names():
            if name.endswith((".b", ".beta")):
                store[name] = prng.normal(size=store[name].shape) * 0.2
        table = compute_embeddings(g, store, cfg, seed=0)
        state = ColoringState(g)
        while state.t < cfg.window:
            state.apply_inplace(state.greedy_action())
        rng = make_rng(10)
        moves, pis, zs = [], [], []
        for _ in range(3):
            mi = build_contexts(state, table, cfg)
            k = len(mi.actions)
            moves.append(mi)
            pis.append(rng.dirichlet(np.ones(k)))
            zs.append([Outcome.WIN, Outcome.TIE, Outcome.LOSE][rng.integers(3)])
            state.apply_inplace(mi.actions[rng.integers(k)])
        walks = draw_walks(moves, cfg, make_rng(4))
        assert walks, "expected live context rows"

        def loss_fn():
            return forward_backward(moves, pis, zs, store, cfg, walks, training=False)[0]

        _, grads, _ = forward_backward(moves, pis, zs, store, cfg, walks, training=False)
        for name in store.trainable_names():
            assert name in grads or not grads.get(name, np.zeros(1)).any()
        check_names = [n for n in store.trainable_names() if n in grads]
        for prefix in ("emb.", "v.seq.", "p."):
            named = [n for n in check_names if n.startswith(prefix)]
            assert named and any(grads[n].any() for n in named), prefix
        worst = finite_diff_check(loss_fn, store, grads, make_rng(8),
                                  samples_per_tensor=3, names=check_names)
        assert worst <= 1e-4, f"worst relative error {worst:.3e}"

    def test_walk_rows_route_gradients_to_transfer_params(self):
        cfg = tiny_cfg(walk_rate=1.0, walk_budget=1000)
        g, store, table, batch = _training_batch(cfg)
        moves = [tm.move for tm in batch]
        pis = [tm.pi for tm in batch]
        zs = [tm.z for tm in batch]
        # give the policy head signal so context gradients are nonzero
        store["p.head.w"] = make_rng(5).normal(size=store["p.head.w"].shape) * 0.3
        store["v.head.w"] = make_rng(6).normal(size=store["v.head.w"].shape) * 0.3
        walks = draw_walks(moves, cfg, make_rng(4))
        _, grads, _ = forward_backward(moves, pis, zs, store, cfg, walks, training=False)
        assert grads["emb.in.w"].any() and grads["emb.cell.w"].any()
        _, grads_nw, _ = forward_backward(moves, pis, zs, store, cfg, [], training=False)
        assert "emb.in.w" not in grads_nw

    def test_budget_caps_walk_count(self):
        cfg = tiny_cfg(walk_rate=1.0, walk_budget=3)
        g, store, table, batch = _training_batch(cfg)
        walks = draw_walks([tm.move for tm in batch], cfg, make_rng(0))
        assert len(walks) == 3


class TestTrainStep:
    def test_zero_lr_leaves_params_unchanged(self):
        cfg = tiny_cfg()
        g, store, table, batch = _training_batch(cfg)
        adam = AdamState.for_store(store, lr=0.0)
        before = {name: arr.copy() for name, arr in store.items()}
        loss, stats = fcn_train_step(batch, store, cfg, adam, make_rng(0))
        assert np.isfinite(loss)
        for name, arr in store.items():
            if name.split(".")[-1].startswith("_"):
                continue  # batchnorm running buffers do move in training mode
            assert np.array_equal(arr, before[name]), name

    def test_loss_decreases_on_fixed_batch(self):
        cfg = tiny_cfg(walk_rate=0.0)
        g, store, table, batch = _training_batch(cfg, n_moves=4)
        adam = AdamState.for_store(store, lr=0.005)
        rng = make_rng(1)
        first, _ = fcn_train_step(batch, store, cfg, adam, rng)
        last = first
        for _ in range(120):
            last, _ = fcn_train_step(batch, store, cfg, adam, rng)
        assert last < first * 0.55, f"{first:.4f} -> {last:.4f}"

    def test_stats_reported(self):
        cfg = tiny_cfg(walk_rate=1.0, walk_budget=5)
        g, store, table, batch = _training_batch(cfg)
        adam = AdamState.for_store(store)
        _, stats = fcn_train_step(batch, store, cfg, adam, make_rng(0))
        assert stats["walks"] == 5
        assert stats["capped_moves"] == 0
        assert "clamps" in stats

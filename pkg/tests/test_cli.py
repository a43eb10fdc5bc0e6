"""Command-line behavior and the SVG chart writer."""

import json
import os

import numpy as np
import pytest

from fastcolor.checkpoint import Checkpoint, save_checkpoint
from fastcolor.cli import main
from fastcolor.config import Config
from fastcolor.errors import ParameterError, ParseError
from fastcolor.fastcolornet import init_fastcolornet
from fastcolor.graph import Graph, gen_er, load_graph, save_edge_list
from fastcolor.nn import AdamState
from fastcolor.plotting import line_chart, numeric_column, read_csv_columns

from conftest import complete_graph


def tiny_cfg(**kw) -> Config:
    base = dict(
        train_sources="er:10,0.5:seed=0..1",
        feature_bins=8,
        embed_dim=6,
        embed_hidden=10,
        embed_iterations=2,
        lstm_steps=1,
        window=2,
        color_set_size=2,
        v_width=16,
        v_layers=2,
        p_width=16,
        p_layers=2,
        seq_channels=8,
        seq_layers=2,
        seq_filter=3,
        dtype="float64",
        run_ahead=4,
        mcts_segment=2,
        simulations=4,
        move_sample_rate=0.3,
        steps_per_iteration=2,
        batch_size=2,
        train_iterations=1,
        seed=0,
    )
    base.update(kw)
    return Config(**base)


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.cfg"
    tiny_cfg().save(str(path))
    return str(path)


@pytest.fixture
def k4_file(tmp_path):
    path = tmp_path / "k4.el"
    save_edge_list(complete_graph(4), str(path))
    return str(path)


def checkpoint_for(cfg: Config, path: str) -> None:
    store = init_fastcolornet(cfg)
    save_checkpoint(path, Checkpoint(
        params=store, adam=AdamState.for_store(store, lr=cfg.lr),
        config_hash=cfg.hash(), iteration=0,
        gate_history=np.zeros((0, 4), dtype=np.float64)))


class TestGen:
    def test_writes_loadable_graphs(self, tmp_path, capsys):
        out = tmp_path / "graphs"
        assert main(["gen", "--sources", "er:8,0.4:seed=0..1", "--out", str(out)]) == 0
        paths = capsys.readouterr().out.splitlines()
        assert len(paths) == 2
        for p in paths:
            assert os.path.exists(p)
            assert load_graph(p).n == 8

    def test_env_var_overrides_out(self, tmp_path, capsys, monkeypatch):
        forced = tmp_path / "forced"
        monkeypatch.setenv("FASTCOLOR_OUT_DIR", str(forced))
        assert main(["gen", "--sources", "er:8,0.4:seed=0", "--out", str(tmp_path / "ignored")]) == 0
        paths = capsys.readouterr().out.splitlines()
        assert all(p.startswith(str(forced)) for p in paths)
        assert not (tmp_path / "ignored").exists()


class TestColor:
    def test_heuristic_prints_count(self, k4_file, capsys):
        assert main(["color", "--graph", k4_file, "--heuristic", "ordered"]) == 0
        assert capsys.readouterr().out == "colors: 4\n"

    def test_model_greedy_decode(self, tmp_path, capsys):
        cfg = tiny_cfg()
        cfg_path = tmp_path / "run.cfg"
        cfg.save(str(cfg_path))
        ck_path = tmp_path / "model.ckpt"
        checkpoint_for(cfg, str(ck_path))
        g_path = tmp_path / "g.el"
        save_edge_list(gen_er(12, 0.5, seed=1), str(g_path))
        assert main(["color", "--graph", str(g_path), "--model", str(ck_path),
                     "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        expected = main(["color", "--graph", str(g_path), "--heuristic", "unordered"])
        assert expected == 0
        assert out == capsys.readouterr().out  # zero head decodes greedily

    def test_corrupted_checkpoint_fails(self, tmp_path, k4_file, capsys, cfg_file):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint")
        assert main(["color", "--graph", k4_file, "--model", str(bad),
                     "--config", cfg_file]) == 1
        assert "error:" in capsys.readouterr().err

    def test_config_hash_mismatch_fails(self, tmp_path, k4_file, capsys):
        cfg = tiny_cfg()
        ck_path = tmp_path / "model.ckpt"
        checkpoint_for(cfg, str(ck_path))
        other = tmp_path / "other.cfg"
        tiny_cfg(seed=999).save(str(other))
        assert main(["color", "--graph", k4_file, "--model", str(ck_path),
                     "--config", str(other)]) == 1
        assert "config hash" in capsys.readouterr().err

    def test_corrupted_graph_fails_with_diagnostic(self, tmp_path, capsys):
        bad = tmp_path / "bad.el"
        bad.write_text("0 1\nnot numbers\n")
        assert main(["color", "--graph", str(bad)]) == 1
        err = capsys.readouterr().err
        assert "error:" in err
        assert "2" in err  # line number of the bad row

    def test_unknown_flag_exits_2(self, k4_file):
        with pytest.raises(SystemExit) as exc:
            main(["color", "--graph", k4_file, "--bogus"])
        assert exc.value.code == 2


class TestEstimateMdp:
    def test_empty3_value(self, tmp_path, capsys):
        # self-loop rows pin the vertex count; loops themselves drop
        path = tmp_path / "empty3.el"
        path.write_text("0 0\n1 1\n2 2\n")
        assert main(["estimate-mdp", "--graph", str(path)]) == 0
        assert capsys.readouterr().out == "log10 mdp size: 0.602\n"

    def test_order_flag(self, k4_file, capsys):
        assert main(["estimate-mdp", "--graph", k4_file, "--order", "dynamic"]) == 0
        assert capsys.readouterr().out == "log10 mdp size: 0.000\n"


class TestSelfplay:
    def test_writes_episode_log(self, tmp_path, cfg_file, capsys):
        out = tmp_path / "sp"
        assert main(["selfplay", "--config", cfg_file, "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "segments: " in stdout and "records: " in stdout
        rows = [json.loads(line) for line in (out / "episodes.jsonl").read_text().splitlines()]
        assert rows
        assert all(r["z"] in {"win", "tie", "lose"} for r in rows)


class TestTrain:
    def test_writes_metrics(self, tmp_path, cfg_file, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", cfg_file, "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "iterations: 1" in stdout
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "iteration,loss,eval_avg_colors,win_rate,wall_clock"
        assert len(lines) == 3


class TestEval:
    def test_writes_csv_and_summary(self, tmp_path, cfg_file, capsys):
        csv_path = tmp_path / "report.csv"
        assert main(["eval", "--config", cfg_file, "--sources", "er:10,0.4:seed=0..4",
                     "--out", str(csv_path)]) == 0
        stdout = capsys.readouterr().out
        assert "unordered: avg" in stdout
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "graph,n,unordered,ordered,dynamic"
        assert len(lines) == 7

    def test_csv_byte_identical_across_runs(self, tmp_path, cfg_file):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert main(["eval", "--config", cfg_file, "--sources",
                         "er:10,0.4:seed=0..4", "--out", str(path)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_bad_source_fails(self, cfg_file, capsys):
        assert main(["eval", "--config", cfg_file, "--sources", "er:10:seed=0"]) == 1
        assert "error:" in capsys.readouterr().err


class TestPlot:
    def test_chart_from_metrics(self, tmp_path, cfg_file, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", cfg_file, "--out", str(out)]) == 0
        capsys.readouterr()
        svg_path = tmp_path / "curve.svg"
        assert main(["plot", "--csv", str(out / "metrics.csv"), "--x", "iteration",
                     "--y", "loss,eval_avg_colors", "--out", str(svg_path)]) == 0
        svg = svg_path.read_text()
        assert svg.startswith("<svg")
        assert svg.count("<polyline") == 2
        assert "eval_avg_colors" in svg

    def test_missing_column_fails(self, tmp_path, capsys):
        csv_path = tmp_path / "t.csv"
        csv_path.write_text("a,b\n1,2\n")
        assert main(["plot", "--csv", str(csv_path), "--x", "a", "--y", "nope",
                     "--out", str(tmp_path / "x.svg")]) == 1
        assert "no column" in capsys.readouterr().err


class TestPlottingUnits:
    def test_read_and_parse_columns(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("x,y\n1,2.5\n2,\n3,7\n")
        cols = read_csv_columns(str(path))
        assert numeric_column(cols, "x") == [1.0, 2.0, 3.0]
        ys = numeric_column(cols, "y")
        assert ys[0] == 2.5 and np.isnan(ys[1]) and ys[2] == 7.0

    def test_non_numeric_cell_reports_row(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("x\n1\nbad\n")
        with pytest.raises(ParseError, match="row 3"):
            numeric_column(read_csv_columns(str(path)), "x")

    def test_empty_csv_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            read_csv_columns(str(path))

    def test_line_chart_needs_points(self):
        with pytest.raises(ParameterError):
            line_chart([])
        with pytest.raises(ParameterError):
            line_chart([("s", [], [])])

    def test_line_chart_scales_constant_series(self):
        svg = line_chart([("flat", [0.0, 1.0, 2.0], [5.0, 5.0, 5.0])])
        assert "<polyline" in svg
        assert svg.rstrip().endswith("</svg>")

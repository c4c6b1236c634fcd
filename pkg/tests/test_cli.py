"""Command-line behavior: config handling, exit codes, artifact layout, and
the resolved-config reproducibility contract."""

import json

import pytest
import yaml

from ridepool.cli import main
from ridepool.roadnet import load_edge_list

TINY = [
    "--set", "network.rows=3", "--set", "network.cols=3",
    "--set", "run.fleet_size=3", "--set", "run.horizon=8",
    "--set", "run.capacity=2", "--set", "run.k_nearest=4",
    "--set", "run.eval_cap=40", "--set", "run.emb_dim=4",
    "--set", "run.emb_steps=30", "--set", "run.hidden=8",
    "--set", "run.head1=8", "--set", "run.head2=4",
    "--set", "run.eval_days=2", "--set", "run.minibatch=8",
    "--set", "run.replay_capacity=64", "--set", "run.episodes=1",
    "--set", "demand.segments=[[0, 8, 1.0]]",
]


def test_unknown_key_in_file_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("run:\n  fleet_sz: 10\n")
    code = main(["baseline", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "run.fleet_sz" in capsys.readouterr().err


def test_unknown_override_exits_2(tmp_path, capsys):
    code = main(["baseline", "--set", "run.bogus=1", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "run.bogus" in capsys.readouterr().err


def test_malformed_yaml_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("run: [unclosed\n")
    code = main(["baseline", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "parse" in err or "config" in err


def test_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["baseline", "--config", str(tmp_path / "nope.yaml"),
                 "--out", str(tmp_path / "o")])
    assert code == 2


def test_non_mapping_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("- 1\n- 2\n")
    assert main(["baseline", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == 2


def test_bad_value_exits_2(tmp_path, capsys):
    code = main(["baseline", "--set", "run.capacity=0",
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "capacity" in capsys.readouterr().err


def test_overrides_are_typed(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["gen-network", *TINY, "--out", str(out)])
    assert code == 0
    resolved = yaml.safe_load((out / "resolved-config.yaml").read_text())
    assert resolved["network"]["rows"] == 3
    assert isinstance(resolved["run"]["eval_cap"], int)
    assert resolved["demand"]["segments"] == [[0, 8, 1.0]]
    assert resolved["run"]["tau"] == 300.0   # untouched default carried along


def test_gen_network_round_trips_through_file_kind(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["gen-network", *TINY, "--out", str(out)]) == 0
    net = load_edge_list(out / "network.edgelist")
    assert net.n == 9
    assert "9 locations" in capsys.readouterr().out

    # a run on the written file matches the same run on the generating grid
    grid_out = tmp_path / "g"
    file_out = tmp_path / "f"
    assert main(["baseline", *TINY, "--out", str(grid_out)]) == 0
    assert main(["baseline", *TINY, "--set", "network.kind=file",
                 "--set", f"network.path={out / 'network.edgelist'}",
                 "--out", str(file_out)]) == 0
    assert (file_out / "summary.json").read_bytes() == \
        (grid_out / "summary.json").read_bytes()


def test_baseline_outputs_and_rerun_bit_exact(tmp_path, capsys):
    out1 = tmp_path / "a"
    assert main(["baseline", *TINY, "--out", str(out1)]) == 0
    for name in ("summary.json", "metrics.jsonl", "timing.jsonl",
                 "resolved-config.yaml"):
        assert (out1 / name).exists()
    summary = json.loads((out1 / "summary.json").read_text())
    assert len(summary["days"]) == 2
    for d in summary["days"]:
        assert d["served"] <= d["seen"]

    # rerunning from the resolved config must reproduce every deterministic
    # byte; timing is exempt by design
    out2 = tmp_path / "b"
    assert main(["baseline", "--config", str(out1 / "resolved-config.yaml"),
                 "--out", str(out2)]) == 0
    assert (out2 / "summary.json").read_bytes() == (out1 / "summary.json").read_bytes()
    assert (out2 / "metrics.jsonl").read_bytes() == (out1 / "metrics.jsonl").read_bytes()


def test_zero_checkpoint_equals_baseline(tmp_path, capsys):
    base = tmp_path / "base"
    zero = tmp_path / "zero"
    assert main(["baseline", *TINY, "--out", str(base)]) == 0
    assert main(["evaluate", "--zero", *TINY, "--out", str(zero)]) == 0
    assert (zero / "summary.json").read_bytes() == (base / "summary.json").read_bytes()
    assert (zero / "metrics.jsonl").read_bytes() == (base / "metrics.jsonl").read_bytes()
    out = capsys.readouterr().out
    assert "baseline:" in out and "value:" in out


def test_train_then_evaluate_checkpoint(tmp_path, capsys):
    tdir = tmp_path / "t"
    code = main(["train", *TINY, "--episodes", "1", "--out", str(tdir)])
    assert code == 0
    assert (tdir / "checkpoint.npz").exists()
    summary = json.loads((tdir / "summary.json").read_text())
    assert summary["episodes"] == 1
    assert len(summary["val_rates"]) == 1

    edir = tmp_path / "e"
    code = main(["evaluate", "--checkpoint", str(tdir / "checkpoint.npz"),
                 *TINY, "--out", str(edir)])
    assert code == 0
    assert (edir / "summary.json").exists()


def test_evaluate_without_weights_exits_2(tmp_path, capsys):
    assert main(["evaluate", *TINY, "--out", str(tmp_path / "o")]) == 2


def test_evaluate_architecture_mismatch_exits_1(tmp_path, capsys):
    tdir = tmp_path / "t"
    assert main(["train", *TINY, "--episodes", "1", "--out", str(tdir)]) == 0
    code = main(["evaluate", "--checkpoint", str(tdir / "checkpoint.npz"),
                 *TINY, "--set", "run.hidden=16", "--out", str(tmp_path / "e")])
    assert code == 1
    assert "architecture" in capsys.readouterr().err


def test_bench_reports_budget(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["bench", *TINY, "--out", str(out)])
    report = json.loads((out / "bench.json").read_text())
    assert report["epochs"] == 8
    assert report["epoch_budget_ms"] == 60_000.0
    assert report["dispatch_ms_max"] >= report["dispatch_ms_mean"]
    assert code == (0 if report["within_budget"] else 1)

#!/usr/bin/env python3
"""
Command-line tests: run configuration precedence, exit codes and the
files each command leaves behind.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import config
from cli import SNAPSHOT_NAME, RunConfig, build_parser, main
from codec import write_gradient_file
from errors import ConfigError
from protocol import REPORT_COLUMNS


def _run(tmp_path, *argv):
    return main(["--output-dir", str(tmp_path), "--log-level", "ERROR", *argv])


def test_config_precedence(tmp_path):
    env = tmp_path / "run.env"
    env.write_text("protocol.clients=12\nlwe.preset=c\n")
    run = RunConfig.load(env, {"protocol.clients": 5, "lwe.preset": None})
    assert run.get("protocol.clients") == 5
    assert run.get("lwe.preset") == "c"
    assert run.get("protocol.dim") == 1024
    assert run.get("bench.clients") == (8, 32, 128)
    assert run.get("sharing.t") is None


def test_config_rejects_unknown_and_bad_values(tmp_path):
    env = tmp_path / "run.env"
    env.write_text("protocol.colour=blue\n")
    with pytest.raises(ConfigError):
        RunConfig.load(env)
    with pytest.raises(ConfigError):
        RunConfig.load(overrides={"protocol.clients": "many"})
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.env")


def test_params_command(tmp_path, capsys):
    assert _run(tmp_path, "params") == config.EXIT_OK
    out = capsys.readouterr().out
    assert "478" in out and "1093" in out
    assert _run(tmp_path, "params", "--q", "91") == config.EXIT_CONFIG_ERROR


def test_aggregate_zero_noise_writes_report_and_snapshot(tmp_path, capsys):
    report = tmp_path / "agg.csv"
    code = _run(tmp_path, "aggregate", "--clients", "4", "--dim", "8",
                "--zero-noise", "--report", str(report))
    assert code == config.EXIT_OK
    assert "exact match" in capsys.readouterr().out
    frame = pd.read_csv(report)
    assert list(frame.columns) == REPORT_COLUMNS
    assert frame["k"].iloc[0] == 4 and frame["m"].iloc[0] == 8
    snapshot = (tmp_path / SNAPSHOT_NAME).read_text()
    assert "protocol.clients=4" in snapshot and "lwe.zero_noise=True" in snapshot


def test_aggregate_abort_exit_code(tmp_path):
    code = _run(tmp_path, "aggregate", "--clients", "10", "--dim", "16", "--zero-noise",
                "--mode", "malicious", "--adversary", "corrupt=1;behavior=bad_share_sum")
    assert code == config.EXIT_PROTOCOL_ABORT


def test_unknown_config_key_exit_code(tmp_path):
    env = tmp_path / "run.env"
    env.write_text("protocol.colour=blue\n")
    assert _run(tmp_path, "--config", str(env), "params") == config.EXIT_CONFIG_ERROR


def test_aggregate_from_gradient_file(tmp_path):
    path = tmp_path / "grads.bin"
    write_gradient_file(path, np.random.default_rng(0).normal(size=(4, 8)))
    code = _run(tmp_path, "aggregate", "--clients", "4", "--zero-noise", "--gradients", str(path))
    assert code == config.EXIT_OK

    broken = tmp_path / "broken.bin"
    broken.write_bytes(b"NOTGRADS" + bytes(20))
    assert _run(tmp_path, "aggregate", "--gradients", str(broken)) == config.EXIT_IO_ERROR


def test_accountant_curves(tmp_path):
    curves = tmp_path / "curves.csv"
    code = _run(tmp_path, "accountant", "--sigma", "1", "--clip", "5", "--batch", "64",
                "--epochs", "2", "--discrete", "--honest-fraction", "0.5", "--curves", str(curves))
    assert code == config.EXIT_OK
    frame = pd.read_csv(curves)
    assert list(frame.columns) == ["alpha", "eps_rdp_continuous", "eps_rdp_discrete", "eps_rdp_degraded"]
    assert np.allclose(frame["eps_rdp_degraded"], 2 * frame["eps_rdp_continuous"])


def _toy_csv(tmp_path, rows=40):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(rows, 3))
    data = pd.DataFrame(X, columns=["a", "b", "c"])
    data["label"] = (X[:, 0] > 0).astype(int)
    path = tmp_path / "toy.csv"
    data.to_csv(path, index=False)
    return path


def test_train_on_small_csv(tmp_path):
    metrics = tmp_path / "metrics.csv"
    code = _run(tmp_path, "train", "--data", str(_toy_csv(tmp_path)), "--batch", "16",
                "--epochs", "1", "--sigma", "0.5", "--zero-noise", "--metrics", str(metrics))
    assert code == config.EXIT_OK
    assert len(pd.read_csv(metrics)) == 1


def test_train_with_broadcast_topology(tmp_path):
    code = _run(tmp_path, "train", "--data", str(_toy_csv(tmp_path)), "--batch", "16",
                "--epochs", "1", "--sigma", "0.5", "--zero-noise", "--topology", "broadcast")
    assert code == config.EXIT_OK
    assert "protocol.topology=broadcast" in (tmp_path / SNAPSHOT_NAME).read_text()


def test_bench_scale_flag_and_alias(tmp_path):
    parser = build_parser()
    assert parser.parse_args(["bench", "--paper-scale"]).full_scale
    assert parser.parse_args(["bench", "--full-scale"]).full_scale
    assert not parser.parse_args(["bench"]).full_scale
    # the large plan is validated before any cell runs
    assert _run(tmp_path, "bench", "--paper-scale", "--reps", "2") == config.EXIT_CONFIG_ERROR


def test_report_merges_aggregate_csvs(tmp_path):
    for i in range(2):
        assert _run(tmp_path, "--seed", f"{i:064x}", "aggregate", "--clients", "4", "--dim", "8",
                    "--zero-noise", "--report", str(tmp_path / f"agg{i}.csv")) == config.EXIT_OK
    out = tmp_path / "merged"
    code = _run(tmp_path, "report", str(tmp_path / "agg0.csv"), str(tmp_path / "agg1.csv"),
                "--out", str(out))
    assert code == config.EXIT_OK
    medians = pd.read_csv(out / "report_medians.csv")
    assert len(medians) == 1 and medians["runs"].iloc[0] == 2
    assert (out / "report_expansion.csv").exists()


def main_runner():
    tests = [(name, func) for name, func in globals().items() if name.startswith("test_")]
    failed = 0
    for name, func in tests:
        try:
            with tempfile.TemporaryDirectory() as tmp:
                if "capsys" in func.__code__.co_varnames[: func.__code__.co_argcount]:
                    print(f"  - {name} (needs pytest)")
                    continue
                func(Path(tmp))
            print(f"  ✓ {name}")
        except Exception as e:
            failed += 1
            print(f"  ✗ {name}: {e}")
    print(f"\n{len(tests) - failed}/{len(tests)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main_runner())

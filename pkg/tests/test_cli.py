"""Command-line surface: reports, determinism, exit codes, plot exports."""

import json
import os

import pytest

from conftest import MINI_CONFIG

from parastab.cli import main


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def run_cli(args):
    return main(args)


def test_solve_writes_report_and_csv(mini_config, tmp_path, capsys):
    out = tmp_path / "r"
    rc = run_cli(["solve", "--config", mini_config, "--out", str(out)])
    assert rc == 0
    assert "PASS" in capsys.readouterr().out
    report = read_json(out / "mini.solve.json")
    assert report["passed"] is True
    assert report["tag"] == "mini"
    assert {"fingerprint", "metrics", "verdicts", "provenance"} <= \
        set(report)
    meta = read_json(out / "mini.solve.meta.json")
    assert {"started_utc", "wall_seconds", "backend"} <= set(meta)
    csv_head = (out / "mini.solve.csv").read_text().splitlines()[0]
    assert csv_head.split(",")[0] == "t"


def test_reports_byte_identical_across_runs(mini_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(["solve", "--config", mini_config, "--out", str(a)]) == 0
    assert run_cli(["solve", "--config", mini_config, "--out", str(b)]) == 0
    for name in sorted(os.listdir(a)):
        if name.endswith(".meta.json"):
            continue  # timestamps are quarantined to the sidecar
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_all_subcommands_merge_and_worker_independence(mini_config,
                                                       tmp_path):
    one = tmp_path / "w1"
    two = tmp_path / "w2"
    rc1 = run_cli(["all", "--config", mini_config, "--out", str(one),
                   "--workers", "1"])
    rc2 = run_cli(["all", "--config", mini_config, "--out", str(two),
                   "--workers", "2"])
    assert rc1 == 0 and rc2 == 0
    merged = read_json(one / "mini.all.json")
    assert merged["passed"] is True
    # the mini instance sits under the oracle gate, so it runs too
    assert "oracle" in merged["subcommands"]
    assert all(v["passed"] for v in merged["subcommands"].values())
    assert (one / "mini.all.json").read_bytes() == \
        (two / "mini.all.json").read_bytes()


def test_seed_override_changes_report(mini_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(["lipschitz", "--config", mini_config, "--out", str(a)])
    run_cli(["lipschitz", "--config", mini_config, "--out", str(b),
             "--seed", "5"])
    ra = read_json(a / "mini.lipschitz.json")
    rb = read_json(b / "mini.lipschitz.json")
    assert ra["provenance"]["seed"] == 0
    assert rb["provenance"]["seed"] == 5
    assert ra["probes"] != rb["probes"]


def test_validate_ok_and_failure(mini_config, tmp_path, capsys):
    assert run_cli(["validate", "--config", mini_config]) == 0
    out = capsys.readouterr().out
    assert out.startswith("OK mini")
    assert "node_count" in out

    bad = dict(MINI_CONFIG, horizon={"T": 0.6, "dt": 0.07,
                                     "tail_tol": 0.6})
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    assert run_cli(["validate", "--config", str(p)]) == 1
    assert "/horizon/dt" in capsys.readouterr().err


def test_hard_failure_writes_diagnostic(tmp_path, capsys):
    # strong positive shift with no reaction: steps stay linear, so the
    # norm guard is what aborts the run
    blow = json.loads(json.dumps(MINI_CONFIG))
    blow["model"] = {"variant": "quartic", "k": 0.0}
    blow["solver"]["operator_shift"] = 30.0
    blow["solver"]["warm_start"] = "zero"
    blow["control"]["eta"] = 1e-9
    blow["horizon"]["dt"] = 0.01
    blow["initial_state"] = {"kind": "constant", "value": 1.0}
    p = tmp_path / "blow.json"
    p.write_text(json.dumps(blow))
    out = tmp_path / "r"
    rc = run_cli(["solve", "--config", str(p), "--out", str(out)])
    assert rc == 1
    diag = read_json(out / "mini.solve.error.json")
    assert diag["error"] == "BlowUpError"
    assert diag["norm"] > diag["limit"]


def test_emit_plot_data(mini_config, tmp_path, capsys):
    out = tmp_path / "r"
    run_cli(["grad-check", "--config", mini_config, "--out", str(out)])
    capsys.readouterr()
    rc = run_cli(["emit-plot-data", str(out / "mini.grad-check.json"),
                  "--out", str(out)])
    assert rc == 0
    plot = out / "mini.grad-check.plot.csv"
    assert str(plot) in capsys.readouterr().out
    header = plot.read_text().splitlines()[0]
    assert header == "eps,direction_id,rel_error"


def test_emit_plot_data_rejects_corrupt_file(tmp_path, capsys):
    p = tmp_path / "x.solve.json"
    p.write_text("{oops")
    assert run_cli(["emit-plot-data", str(p), "--out", str(tmp_path)]) == 1
    assert "x.solve.json" in capsys.readouterr().err


def test_unknown_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as ei:
        run_cli(["frobnicate", "--config", "x.json"])
    assert ei.value.code == 2

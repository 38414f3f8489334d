import json
import subprocess
import sys

import pytest

from quasiwave import cli

SMALL = """
[grid]
M = 40
T = {T}

[solve]
trajectory_stride = 1

[entropy]
n2 = 16

[chain]
sizes = [8, 16]
ensemble = 4
T = 0.2
samples = 3
"""


def _cfg(tmp_path, text, name="c.toml"):
    f = tmp_path / name
    f.write_text(text)
    return f


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _run_dirs(root, command):
    return sorted(root.glob(f"{command}-*")) if root.exists() else []


def test_solve_with_zero_horizon_writes_single_snapshot(tmp_path, capsys):
    cfg = _cfg(tmp_path, SMALL.format(T=0.0))
    code, out, _ = _run(capsys, "solve", "-c", cfg, "-o", tmp_path / "runs")
    assert code == cli.EXIT_OK
    (run,) = _run_dirs(tmp_path / "runs", "solve")
    assert str(run) in out
    rows = (run / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,x,r,p"
    assert len(rows) == 1 + 41
    assert {r.split(",")[0] for r in rows[1:]} == {"0.0"}
    assert json.loads((run / "failures.json").read_text()) == []
    meta = json.loads((run / "config.json").read_text())
    assert meta["command"] == "solve" and meta["config"]["grid"]["T"] == 0.0


def test_sweep_with_empty_deltas_is_a_config_error(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[sweep]\ndeltas = []\n")
    code, _, err = _run(capsys, "sweep", "-c", cfg, "-o", tmp_path / "runs")
    assert code == cli.EXIT_CONFIG
    assert "sweep.deltas" in err
    assert _run_dirs(tmp_path / "runs", "sweep") == []


def test_unknown_key_is_named(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[grid]\nMM = 3\n")
    code, _, err = _run(capsys, "solve", "-c", cfg, "-o", tmp_path / "runs")
    assert code == cli.EXIT_CONFIG
    assert "grid.MM" in err and err.startswith("error:")


def test_bad_criteria_selection(tmp_path, capsys):
    for sel in ("0", "x,1", ","):
        code, _, err = _run(capsys, "verify", "--criteria", sel, "-o", tmp_path / "runs")
        assert code == cli.EXIT_CONFIG, sel
        assert "--criteria" in err


def test_missing_config_file(tmp_path, capsys):
    code, _, err = _run(capsys, "solve", "-c", tmp_path / "nope.toml", "-o", tmp_path / "runs")
    assert code == cli.EXIT_CONFIG and "cannot read" in err


def test_run_directories_never_collide(tmp_path):
    a = cli.run_directory(tmp_path, "solve")
    b = cli.run_directory(tmp_path, "solve")
    assert a != b and a.is_dir() and b.is_dir()


@pytest.mark.parametrize("command, files", [
    ("solve", ["trajectory.csv", "thermo.json"]),
    ("entropy", ["entropy.json"]),
    ("greens", ["greens.json"]),
    ("chain", ["chain.json", "hydro_N8.csv", "chain_N16_members.csv"]),
])
def test_subcommands_write_their_outputs(tmp_path, capsys, command, files):
    cfg = _cfg(tmp_path, SMALL.format(T=0.5))
    code, _, _ = _run(capsys, command, "-c", cfg, "-o", tmp_path / "runs")
    (run,) = _run_dirs(tmp_path / "runs", command)
    failures = json.loads((run / "failures.json").read_text())
    assert code == (cli.EXIT_CONTRACT if failures else cli.EXIT_OK)
    for f in files:
        assert (run / f).exists(), f


def test_verify_exit_code_agrees_with_failures(tmp_path, capsys):
    code, out, _ = _run(capsys, "verify", "--criteria", "7", "-o", tmp_path / "runs")
    (run,) = _run_dirs(tmp_path / "runs", "verify")
    failures = json.loads((run / "failures.json").read_text())
    report = json.loads((run / "report.json").read_text())
    assert code == (cli.EXIT_CONTRACT if failures else cli.EXIT_OK)
    assert [c["number"] for c in report["criteria"]] == [7]
    lines = (run / "report.txt").read_text().splitlines()
    assert len(lines) == 1 and lines[0].split()[0] in ("PASS", "FAIL")
    assert lines[0] in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "quasiwave", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in cli.COMMANDS:
        assert name in proc.stdout


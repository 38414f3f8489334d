"""Acceptance suite on the shipped default configuration.

``quasiwave verify`` runs twice into separate directories; each criterion
test reads its verdict from the first report and prints the PASS/FAIL line
(echoed again in the terminal summary).  Criterion 10 compares the two
reports byte for byte.
"""
import json

import pytest
from conftest import ACCEPTANCE_LINES

from quasiwave import cli
from quasiwave.acceptance import CRITERIA

pytestmark = pytest.mark.slow

# known failure, analysed in the README: the L2 norms drift by ~9% across the sweep
KNOWN_FAILING = {3: "L2 norms vary by less than 5%"}


@pytest.fixture(scope="module")
def verify_runs(tmp_path_factory):
    runs = []
    for k in range(2):
        root = tmp_path_factory.mktemp(f"verify{k}")
        code = cli.main(["verify", "-o", str(root)])
        (run,) = sorted(root.glob("verify-*"))
        runs.append((code, run))
    return runs


@pytest.fixture(scope="module")
def report(verify_runs):
    return json.loads((verify_runs[0][1] / "report.json").read_text())


def _line(number, ok, name, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {name}{detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def test_report_lists_every_criterion(report):
    assert [c["number"] for c in report["criteria"]] == sorted(CRITERIA)
    assert report["failures"] == [c["number"] for c in report["criteria"] if not c["passed"]]


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(report, number, request):
    crit = next(c for c in report["criteria"] if c["number"] == number)
    failed = [k for k, v in crit["clauses"].items() if not v]
    _line(number, crit["passed"], crit["name"], f" [failed: {'; '.join(failed)}]" if failed else "")
    if number in KNOWN_FAILING:
        # every other clause must still hold; only the documented one may fail
        assert [k for k in failed if k != KNOWN_FAILING[number]] == []
        request.applymarker(pytest.mark.xfail(strict=True, reason=KNOWN_FAILING[number]))
    assert crit["passed"], failed


def test_criterion_10_determinism(verify_runs):
    (_, a), (_, b) = verify_runs
    same = (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    _line(10, same, "determinism", "" if same else " [failed: report.json differs between runs]")
    assert same


def test_exit_code_matches_failures(verify_runs):
    for code, run in verify_runs:
        failures = json.loads((run / "failures.json").read_text())
        assert code == (cli.EXIT_CONTRACT if failures else cli.EXIT_OK)
        assert (run / "report.txt").read_text().count("\n") == len(CRITERIA)


@pytest.mark.xfail(strict=True, reason="criterion 3 fails on the default configuration")
def test_verify_default_config_exits_zero(verify_runs):
    assert verify_runs[0][0] == cli.EXIT_OK

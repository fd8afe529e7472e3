import csv
import json

import numpy as np
import pytest

from finite_mfg import cli
from finite_mfg.mfg_solver import ConvergenceError


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def report(out):
    return json.loads((out / "report.json").read_text())


def test_solve_ergodic_ok(tmp_path):
    cfg = write(tmp_path, "[model]\nbeta = 1\n[run]\ntask = ergodic\n")
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 0
    rep = report(out)
    assert rep["exit_code"] == 0 and rep["status"] == "ok"
    assert rep["results"]["rho"] == pytest.approx(0.5, abs=1e-10)
    assert rep["config"]["model"]["beta"] == 1.0
    assert "total_seconds" in rep["timings"]
    rows = list(csv.reader(open(out / "solution.csv")))
    assert rows[0][:2] == ["t", "u_1"]


def test_discounted_csv_byte_identical(tmp_path):
    cfg = write(tmp_path, "[model]\ng = 0, 0.3\n[run]\nr = 0.1\nmu0 = 0.9, 0.1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["solve", "--config", cfg, "--task", "discounted", "--out", str(a)]) == 0
    assert cli.main(["solve", "--config", cfg, "--task", "discounted", "--out", str(b)]) == 0
    assert (a / "flow.csv").read_bytes() == (b / "flow.csv").read_bytes()


@pytest.mark.parametrize("text", [
    "[model]\n[run]\nmu0 = 0.6, 0.6\n",
    "[model]\nd = 2\na_l = 3\n",
    "[model]\nbogus = 1\n",
    "[weird]\nx = 1\n",
    "[model]\n[run]\nr = -0.1\n",
    "[model]\n[run]\nseed = -4\n",
    "[model]\n[run]\nchecks = no_such_check\n",
    "[model]\nd = x\n",
])
def test_malformed_config_exit_2(tmp_path, text, capsys):
    cfg = write(tmp_path, text)
    assert cli.main(["solve", "--config", cfg, "--task", "discounted", "--out", str(tmp_path / "o")]) == 2
    assert "malformed config" in capsys.readouterr().err


def test_missing_config_and_bad_task(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "nope.ini")]) == 2
    cfg = write(tmp_path, "[model]\n")
    assert cli.main(["solve", "--config", cfg, "--task", "master"]) == 2


def test_config_task_falls_back(tmp_path):
    cfg = cli.load_config(write(tmp_path, "[run]\ntask = ergodic\n"), "simulate")
    assert cfg.task == "simulate"


def test_check_failure_exit_1(tmp_path, capsys):
    # a tolerance below round-off makes the closed-form comparison fail
    cfg = write(tmp_path, "[model]\n[run]\ntol = 1e-16\nchecks = symmetric_closed_form\n")
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 1
    rep = report(out)
    assert rep["checks"][0]["verdict"] == "fail"
    assert "FAIL symmetric_closed_form" in capsys.readouterr().out


def test_solver_failure_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("no fixed point", [1.0])

    monkeypatch.setattr(cli, "solve_stationary_discounted", boom)
    cfg = write(tmp_path, "[model]\n[run]\ntask = stationary\n")
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", cfg, "--out", str(out)]) == 3
    rep = report(out)
    assert rep["status"] == "solver failure"
    assert "no fixed point" in rep["error"]


def test_verify_subset_ok(tmp_path, capsys):
    cfg = write(tmp_path, "[model]\ng = 0, 0.3\n[run]\nchecks = value_measure_duality, boundedness\n")
    out = tmp_path / "o"
    assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 0
    names = [c["name"] for c in report(out)["checks"]]
    assert len(names) == 2
    assert capsys.readouterr().out.count("PASS") == 2


def test_master_outputs(tmp_path):
    cfg = write(tmp_path, "[model]\ng = 0, 0.3\n[run]\nr = 0.1\nn = 6\n")
    out = tmp_path / "o"
    assert cli.main(["master", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "master_summary.json").read_text())
    assert summary["lattice_points"] == 7
    rows = list(csv.reader(open(out / "master_field.csv")))
    assert len(rows) == 1 + 7 * 2


def test_simulate_seed_changes_only_paths(tmp_path):
    cfg = write(tmp_path, "[model]\ng = 0, 0.3\n[run]\nr = 0.1\nt = 2\npaths = 2000\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a), "--seed", "1"]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b), "--seed", "1"]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(c), "--seed", "2"]) == 0
    assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()
    assert (a / "paths.csv").read_bytes() != (c / "paths.csv").read_bytes()
    ra, rc = report(a)["results"], report(c)["results"]
    assert ra["model_law"] == rc["model_law"]
    assert ra["value_model"] == rc["value_model"]
    assert ra["empirical"] != rc["empirical"]
    se = ra["cost_stderr"] + 0.05
    assert abs(ra["value_estimate"] - ra["value_model"]) <= 3 * se
    rows = list(csv.reader(open(a / "paths.csv")))
    assert rows[0] == ["path", "time", "state"]
    assert {int(r[2]) for r in rows[1:]} <= {1, 2}


def test_inline_comments(tmp_path):
    cfg = cli.load_config(write(tmp_path, "[run]\nr = 0.05   ; discount\nmu0 = 0.7, 0.3  # law\n"), "solve",
                          "discounted")
    assert cfg.r == 0.05
    np.testing.assert_allclose(cfg.mu0, [0.7, 0.3])

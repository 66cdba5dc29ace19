import json
import subprocess
import sys
from pathlib import Path

import pytest

from mfslq.cli import RunSpec, main, run
from mfslq.riccati import read_matrix_path_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def cfg(name):
    return str(CONFIGS / f"{name}.json")


def test_solve_scalar(tmp_path):
    assert main(["solve", "--problem", cfg("scalar_plain"), "--out", str(tmp_path)]) == 0
    s, P = read_matrix_path_csv(tmp_path / "P.csv")
    assert s[0] == 0.0 and abs(P[0, 0, 0] - 0.5) <= 1e-9
    for name in ("Pi", "Phi", "Gamma", "GammaBar", "GammaTilde"):
        assert (tmp_path / f"{name}.csv").exists()
    assert json.loads((tmp_path / "validation.json").read_text())["h1_ok"]


def test_verify_frozen(tmp_path):
    code = main(["verify", "--problem", cfg("frozen"), "--out", str(tmp_path), "--steps", "200", "--paths", "500"])
    doc = json.loads((tmp_path / "verify.json").read_text())
    checks = {c["name"]: c for c in doc["checks"]}
    assert code == 0 and doc["passed"]
    assert checks["representation"]["statistic"] < 0.05
    assert checks["reductions"]["passed"]


def test_converge_game(tmp_path):
    args = ["converge", "--problem", cfg("meanfield_2d"), "--out", str(tmp_path), "--steps", "320"]
    assert main(args + ["--kind", "game", "--meshes", "T/4,T/8,T/16,T/32"]) == 0
    lines = (tmp_path / "game_convergence.csv").read_text().splitlines()
    errors = [float(line.split(",")[1]) for line in lines[1:]]
    assert len(errors) == 4 and all(b < a for a, b in zip(errors, errors[1:]))
    assert not (tmp_path / "naive_convergence.csv").exists()


def test_mesh_sizes_accepted(tmp_path):
    args = ["converge", "--problem", cfg("meanfield_2d"), "--out", str(tmp_path), "--steps", "64", "--kind", "game"]
    assert main(args + ["--meshes", "0.25,0.125"]) == 0
    doc = json.loads((tmp_path / "game_convergence.json").read_text())
    assert doc["meshes"] == [0.25, 0.125]


def test_gains_and_costs(tmp_path):
    base = ["--problem", cfg("scalar_meanfield"), "--out", str(tmp_path), "--steps", "100", "--paths", "200"]
    assert main(["gains"] + base) == 0
    assert len(list(tmp_path.glob("*_psi*.csv"))) == 9
    assert main(["cost"] + base) == 0
    rows = (tmp_path / "cost.csv").read_text().splitlines()
    assert rows[0] == "kind,mc_cost,std_error,analytic_cost,paths"
    assert [r.split(",")[0] for r in rows[1:]] == ["pre", "naive", "eq"]
    assert main(["compare"] + base) == 0
    rows = (tmp_path / "compare.csv").read_text().splitlines()
    excess = {r.split(",")[0]: float(r.split(",")[4]) for r in rows[1:]}
    assert excess["pre"] == 0.0
    # the pre-committed strategy is optimal from time 0
    assert excess["naive"] > 0 and excess["eq"] > 0


def test_simulate_kinds(tmp_path):
    base = ["simulate", "--problem", cfg("meanfield_2d"), "--out", str(tmp_path), "--steps", "64", "--paths", "100"]
    for kind in ("pre", "naive", "eq", "game"):
        assert main(base + ["--kind", kind]) == 0
        assert (tmp_path / f"summary_{kind}.csv").exists()
    assert main(base + ["--kind", "eq", "--t", "0.5"]) == 2


def test_missing_config_reports_json_error(tmp_path, capsys):
    code = run(RunSpec("solve", str(tmp_path / "nope.json"), str(tmp_path)))
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "FileNotFoundError" and err["subcommand"] == "solve"


def test_bad_config_reports_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 1, "m": 1, "T": 1.0, "N": 10, "coefficients": {"R": [[-1.0]]}, "terminal": {}}))
    assert run(RunSpec("solve", str(bad), str(tmp_path / "o"))) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"]


def test_failed_check_sets_exit_one(tmp_path, monkeypatch, capsys):
    from mfslq import cli, verify

    monkeypatch.setattr(cli, "COMMANDS", {"solve": lambda c: [verify.CheckReport.residual("x", 2.0, 1.0)]})
    assert run(RunSpec("solve", cfg("scalar_plain"), str(tmp_path))) == 1
    assert json.loads(capsys.readouterr().err.strip())["check"] == "x"


def test_module_entry_point(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "mfslq", "solve", "--problem", cfg("scalar_plain"), "--out", str(tmp_path), "--steps", "50"],
        capture_output=True,
    )
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "P.csv").exists()


@pytest.mark.parametrize("sub", ["simulate", "cost"])
def test_byte_identical_outputs(tmp_path, sub):
    def go(where, workers):
        args = [sub, "--problem", cfg("meanfield_2d"), "--out", str(where), "--steps", "100", "--paths", "301"]
        assert main(args + ["--seed", "17", "--workers", str(workers)]) == 0
        return {f.name: f.read_bytes() for f in sorted(Path(where).glob("*.csv"))}

    a, b, c = go(tmp_path / "a", 1), go(tmp_path / "b", 1), go(tmp_path / "c", 3)
    assert a and a == b == c

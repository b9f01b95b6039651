import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from gfl.cli import main


def run_cli(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_generate_fc(tmp_path, capsys):
    out = tmp_path / "fc.json"
    code, stdout, _ = run_cli(["generate", "fc", "--n", 10, "--seed", 1, "--out", out], capsys)
    assert code == 0
    assert len(json.loads(out.read_text())["edges"]) == 45
    assert "n=10 d=45" in stdout and "lambda_min=" in stdout and "lambda_max=" in stdout


def test_generate_csl(tmp_path, capsys):
    out = tmp_path / "csl.json"
    assert run_cli(["generate", "csl", "--n", 10, "--out", out], capsys)[0] == 0
    assert len(json.loads(out.read_text())["edges"]) == 20


def test_generate_bad_path(tmp_path, capsys):
    code, _, err = run_cli(["generate", "fc", "--out", tmp_path / "missing" / "g.json"], capsys)
    assert code != 0 and "No such file" in err


def test_run_gd_sweep_all_satisfied(capsys):
    code, out, err = run_cli(["sweep", "--task", "electric_gd", "--graph", "fc", "--trials", 10,
                              "--L", *range(1, 21)], capsys)
    assert code == 0
    rows = rows_of(out)
    for trial in range(10):
        mine = [r for r in rows if r["trial"] == str(trial)]
        assert len(mine) == 20
        assert all(r["satisfied"] == "true" for r in mine)
    assert "pass rate 200/200" in err


def test_run_deterministic(tmp_path, capsys):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        assert run_cli(["run", "--task", "sqrt_series", "--graph", "csl", "--layers", 6, "--seed", 9,
                        "--format", "json", "--out", p], capsys)[0] == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_run_heat_series_below_gate(capsys):
    code, out, _ = run_cli(["run", "--task", "heat_series", "--temp", 0.5, "--layers", 10], capsys)
    assert code == 0
    rows = rows_of(out)
    assert len(rows) == 11
    assert all(r["bound"] == "NA" and r["satisfied"] == "NA" for r in rows)


def test_run_bound_violation_exit_code(capsys):
    # small lambda_min: the stated GD bound fails at layer 0 on this CSL sample
    code, out, _ = run_cli(["run", "--task", "electric_gd", "--graph", "csl", "--layers", 30, "--seed", 41], capsys)
    assert code == 1
    assert any(r["satisfied"] == "false" for r in rows_of(out))


def test_run_config_error_exit_code(capsys):
    code, out, err = run_cli(["run", "--task", "electric_gd", "--layers", 3, "--delta", 10, "--trials", 2], capsys)
    assert code == 2
    assert "ConstraintError" in err
    assert [r["satisfied"] for r in rows_of(out)] == ["error", "error"]


def test_run_missing_graph_file(capsys):
    assert run_cli(["run", "--task", "electric_gd", "--layers", 3, "--graph", "file"], capsys)[0] == 2


def test_run_from_graph_file(tmp_path, capsys):
    g = tmp_path / "g.json"
    run_cli(["generate", "csl", "--n", 8, "--seed", 2, "--out", g], capsys)
    code, out, _ = run_cli(["run", "--task", "electric_fast", "--layers", 3, "--graph", "file",
                            "--graph-file", g], capsys)
    assert code == 0 and len(rows_of(out)) == 4


def test_sweep_gd_decreasing(capsys):
    code, out, _ = run_cli(["sweep", "--task", "electric_gd", "--trials", 3, "--L", 2, 4, 8], capsys)
    assert code == 0
    rows = rows_of(out)
    for trial in range(3):
        errs = [float(r["error"]) for r in rows if r["trial"] == str(trial)]
        assert len(errs) == 3 and errs[0] > errs[1] > errs[2]


def test_sweep_empty(capsys):
    code, out, _ = run_cli(["sweep", "--task", "electric_gd", "--L"], capsys)
    assert code == 0
    assert out == "task,L,trial,error,bound,satisfied,lambda_min,lambda_max\n"


def test_sweep_electric_fast_superlinear(capsys):
    code, out, _ = run_cli(["sweep", "--task", "electric_fast", "--trials", 2, "--L", 1, 2, 3], capsys)
    assert code == 0
    rows = rows_of(out)
    for trial in range(2):
        logs = [np.log(float(r["error"])) for r in rows if r["trial"] == str(trial)]
        drops = np.diff(logs)
        assert drops[0] < 0 and drops[1] < drops[0]


def test_env_seed_override(capsys, monkeypatch):
    args = ["run", "--task", "electric_gd", "--layers", 2]
    base = run_cli(args + ["--seed", 5], capsys)[1]
    monkeypatch.setenv("GFL_SEED", "5")
    assert run_cli(args + ["--seed", 0], capsys)[1] == base
    monkeypatch.setenv("GFL_SEED", "x")
    assert run_cli(args, capsys)[0] == 2


def test_trial_seeds_differ(capsys):
    rows = rows_of(run_cli(["run", "--task", "electric_gd", "--layers", 0, "--trials", 2], capsys)[1])
    assert rows[0]["lambda_max"] != rows[1]["lambda_max"]


def test_sampled_demands(capsys):
    code, out, _ = run_cli(["run", "--task", "electric_gd", "--layers", 3, "--k", 2], capsys)
    assert code == 0 and rows_of(out)[1]["bound"] != "NA"
    code, out, _ = run_cli(["run", "--task", "electric_gd", "--layers", 3, "--k", 2, "--project-demands", "off"],
                           capsys)
    assert code == 0 and rows_of(out)[1]["bound"] == "NA"


def test_efficient_engine_subspace(capsys):
    code, out, _ = run_cli(["run", "--task", "subspace_top_k", "--k", 2, "--layers", 6, "--engine", "efficient",
                            "--format", "json"], capsys)
    assert code == 0
    assert json.loads(out)["trials"][0]["metadata"]["engine"] == "efficient"


@pytest.mark.parametrize("bad", [["run", "--task", "bogus", "--layers", "1"], ["run", "--task", "electric_gd"]])
def test_argparse_errors_exit_2(bad, capsys):
    with pytest.raises(SystemExit) as exc:
        main(bad)
    assert exc.value.code == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gfl", "run", "--task", "heat_fast", "--layers", "3"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("task,trial,layer,error,bound,satisfied,lambda_min,lambda_max\n")

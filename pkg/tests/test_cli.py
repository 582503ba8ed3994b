import json
import os
import subprocess
import sys

import pytest

from srgeo.cli import main
from srgeo.scenarios import (ScenarioConfig, ScenarioError, emit_csv, run_scenario)


def test_flag_heisenberg_json(capsys):
    assert main(["flag", "--manifold", "heisenberg1", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    res = rep["results"]
    assert res["growth"] == [2, 3] and res["step"] == 2 and res["Q"] == 4
    assert rep["verdict"] == "pass" and rep["runtime_ms"] is None
    assert set(rep) >= {"tool_version", "spec_hash", "seed", "task", "params", "results",
                        "verdict", "runtime_ms"}


@pytest.mark.parametrize("name,growth", [("euclidean(3)", [3]), ("heisenberg1", [2, 3]),
                                         ("engel", [2, 3, 4]), ("perturbed_heisenberg", [2, 3])])
def test_builtins_pass_flag(name, growth):
    out = run_scenario(ScenarioConfig(name, "flag"))
    assert out.exit_code == 0 and out.report["results"]["growth"] == growth


def test_unknown_task_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--manifold", "heisenberg1"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_bad_manifold_exits_one(capsys):
    assert main(["flag", "--manifold", "nonesuch"]) == 1
    assert "unknown builtin" in capsys.readouterr().err


def test_bad_point_dimension_exits_one():
    assert main(["nilpotent", "--manifold", "heisenberg1", "--point", "0,0"]) == 1


def test_diameter_euclidean(tmp_path, capsys):
    code = main(["diameter", "--manifold", "euclidean(3)", "--radii", "0.1",
                 "--out", str(tmp_path), "--csv"])
    assert code == 0
    rep = json.loads((tmp_path / "diameter.json").read_text())
    assert rep["results"]["ratio"] == pytest.approx(1.0, abs=1e-6)
    assert (tmp_path / "diameter.csv").read_text().startswith("r,q_index,ratio\n")


def test_randomized_task_needs_seed():
    with pytest.raises(ScenarioError, match="explicit seed"):
        ScenarioConfig("heisenberg1", "factor")


def test_verdict_fail_exit_code():
    out = run_scenario(ScenarioConfig("heisenberg1", "area-check", {"tolerance": 1e-30}))
    assert out.exit_code == 2 and out.report["verdict"] == "fail"


def test_blowup_csv_header():
    text = emit_csv(("r", "q_index", "sup_deviation"), [(0.4, 0, 0.01)])
    assert text.splitlines()[0] == "r,q_index,sup_deviation"


def test_json_identical_across_threads(tmp_path):
    texts = []
    for threads in ("1", "3"):
        env = dict(os.environ, SRGEO_THREADS=threads)
        out = tmp_path / threads
        subprocess.run([sys.executable, "-m", "srgeo.cli", "nilpotent", "--manifold", "engel",
                        "--point", "0.1,0.2,0,0", "--out", str(out)], env=env, check=True,
                       capture_output=True)
        texts.append((out / "nilpotent.json").read_bytes())
    assert texts[0] == texts[1]


def test_module_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "srgeo.cli", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "--manifold" in proc.stdout


def test_param_option_reaches_the_task(capsys):
    assert main(["area-check", "--manifold", "heisenberg1", "--json",
                 "--param", "tolerance=1e-30", "--param", "ball_radius=0.4"]) == 2
    rep = json.loads(capsys.readouterr().out)
    assert rep["params"]["tolerance"] == 1e-30 and rep["params"]["ball_radius"] == 0.4


def test_malformed_param_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["flag", "--manifold", "heisenberg1", "--param", "novalue"])
    assert exc.value.code == 1
    assert "KEY=VALUE" in capsys.readouterr().err

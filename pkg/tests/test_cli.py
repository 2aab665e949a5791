import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dhinf import InputError, __version__
from dhinf.cli import main
from dhinf.fileio import (
    load_plant,
    load_regulator,
    plant_from_dict,
    plant_to_dict,
    regulator_from_dict,
    regulator_to_dict,
)
from dhinf.synthesis import Regulator

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "three_tank.json"

IMPULSIVE = {
    "E": [[1, 0], [0, 0]], "A": [[-1, 1], [1, 0]], "B1": [[1], [0]], "B2": [[0], [1]],
    "C1": [[1, 0], [0, 0]], "C2": [[1, 0], [0, 1]], "D12": [[0], [1]],
    "weights": {"P": [[1]], "Q": [[1, 0], [0, 1]], "H": [[1, 0], [0, 1]]},
}


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    shutil.copy(FIXTURE, tmp_path / "three_tank.json")
    return tmp_path


def read(path):
    return json.loads(Path(path).read_text())


def test_fixture_matches_package_data():
    packaged = Path(__file__).resolve().parents[1] / "src" / "dhinf" / "data" / "three_tank.json"
    assert read(packaged) == read(FIXTURE)


def test_plant_roundtrip(fixture_bundle):
    doc = plant_to_dict(fixture_bundle.plant, fixture_bundle.weights)
    plant, weights = plant_from_dict(json.loads(json.dumps(doc)))
    for name, M in plant.blocks().items():
        np.testing.assert_array_equal(M, getattr(fixture_bundle.plant, name))
    np.testing.assert_array_equal(weights.H, fixture_bundle.weights.H)


def test_regulator_roundtrip():
    reg = Regulator([[1.0, 2.0]], Z=[[-1.0]], V=[[0.5, 0.25]], U=[[3.0]])
    back = regulator_from_dict(json.loads(json.dumps(regulator_to_dict(reg))))
    for a, b in zip(reg.parts(), back.parts()):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.pop("A"), "missing required field"),
    (lambda d: d.update(A=[[1, 0, 0], [0]]), "field 'A', row 2: has 1 entries, expected 3"),
    (lambda d: d.update(A=[[1, 0, 0], [0, "x", 0], [0, 0, 1]]), "row 2, column 2"),
    (lambda d: d.pop("weights"), "weights"),
    (lambda d: d["weights"].update(P=[[-1, 0], [0, 1]]), "positive definite"),
])
def test_plant_diagnostics(mutate, message):
    doc = read(FIXTURE)
    mutate(doc)
    with pytest.raises(InputError, match=message):
        plant_from_dict(doc)


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_analyze_with_oracle(work, capsys):
    assert main(["analyze", "three_tank.json", "--oracle"]) == 0
    doc = read(work / "three_tank.analyze.json")
    assert doc["format_version"] == 1 and doc["command"] == "analyze"
    lo, hi = doc["result"]["band"]["gamma_infeasible"], doc["result"]["band"]["gamma_feasible"]
    assert lo - 1e-5 <= 1.17851 <= hi + 1e-5 and hi - lo < 1e-5
    assert doc["result"]["oracle"]["discrepancy"] < 1e-4
    assert "discrepancy" in capsys.readouterr().out


@pytest.mark.filterwarnings("ignore::dhinf.sim.UnsettledWarning")  # a sine never settles
def test_synth_then_worstcase_and_simulate(work):
    assert main(["synth", "three_tank.json", "--static", "--gamma", "1.0"]) == 0
    synth = read(work / "three_tank.synth.json")
    assert synth["result"]["band"]["gamma_feasible"] < 1.0
    assert synth["result"]["output_conditions"] == {"full_rank": True, "decoupled": True}
    assert main(["worstcase", "three_tank.json", "--regulator", "three_tank.synth.json"]) == 0
    wc = read(work / "three_tank.worstcase.json")
    assert abs(wc["result"]["achieved_ratio"] - wc["result"]["band"]["gamma_feasible"]) < 0.01
    assert (work / "three_tank.worstcase.csv").exists()
    assert (work / "three_tank.worstcase_plot.py").exists()
    assert main(["simulate", "three_tank.json", "--regulator", "three_tank.synth.json",
                 "--disturbance", "sine", "--no-plot", "--horizon", "2", "-o", "sim.json"]) == 0
    sim = read(work / "sim.json")
    assert sim["result"]["int_wPw"] > 0
    assert not (work / "three_tank.simulate_plot.py").exists()


def test_synth_infeasible_exit_code(work, capsys):
    assert main(["synth", "three_tank.json", "--dynamic", "2", "--gamma", "0.3"]) == 1
    assert "no regulator of any order" in capsys.readouterr().err


def test_input_errors(work, capsys):
    (work / "bad.json").write_text('{"E": [[1]],\n "A": [[1]] oops}')
    assert main(["analyze", "bad.json"]) == 2
    assert "bad.json:2:" in capsys.readouterr().err
    assert main(["analyze", "missing.json"]) == 2
    assert main(["synth", "three_tank.json", "--dynamic", "-1", "--gamma", "1"]) == 2
    assert main(["synth", "three_tank.json", "--static", "--gamma", "1", "--special"]) == 2
    assert "D21bar" in capsys.readouterr().err


def test_impulsive_chain(work, capsys):
    (work / "imp.json").write_text(json.dumps(IMPULSIVE))
    assert main(["analyze", "imp.json"]) == 2
    assert "regularize" in capsys.readouterr().err
    assert main(["regularize", "imp.json", "--seed", "3"]) == 0
    reg = read(work / "imp.regularize.json")
    assert reg["result"]["impulse_free"] is True
    bundle = load_plant(work / "imp.regularize.json")
    assert bundle.K1 is not None and bundle.original is not None
    assert main(["synth", "imp.regularize.json", "--static", "--gamma", "2"]) == 0
    regulator, K1 = load_regulator(work / "imp.regularize.synth.json")
    np.testing.assert_allclose(K1, reg["result"]["K1"])
    assert main(["analyze", "imp.json", "--regulator", "imp.regularize.synth.json"]) == 0
    band = read(work / "imp.analyze.json")["result"]["band"]
    assert band["gamma_feasible"] < 2.0


def test_regularize_already_impulse_free(work, capsys):
    assert main(["regularize", "three_tank.json"]) == 0
    assert "no-op" in capsys.readouterr().out


def test_console_script_entry_point(work):
    exe = shutil.which("dhinf")
    if exe is None:
        pytest.skip("console script not installed")
    out = subprocess.run([exe, "analyze", "three_tank.json", "--measure", "j0"],
                         capture_output=True, text=True, cwd=work)
    assert out.returncode == 0, out.stderr
    assert "J0 in [" in out.stdout


def test_module_invocation(work):
    out = subprocess.run([sys.executable, "-m", "dhinf.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "worstcase" in out.stdout

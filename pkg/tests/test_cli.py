import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from retrofitctl import __version__
from retrofitctl.cli import main
from retrofitctl.modelio import read_controller, read_plant, write_controller
from retrofitctl.reference import stable_4
from retrofitctl.statespace import Realization

FIXTURES = Path(__file__).parent / "fixtures"


def fx(name):
    return str(FIXTURES / name)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_fixture_plants_match_reference():
    plant = read_plant(fx("stable_4.json"))
    assert np.array_equal(plant.A, stable_4().A) and np.array_equal(plant.C, stable_4().C)


@pytest.mark.parametrize("name", ["stable_4.json", "unstable_4.json"])
def test_analyze_reference(capsys, name):
    code, out, _ = run(capsys, "analyze", fx(name), "--json")
    assert code == 0
    report = json.loads(out)
    assert report["relative_degrees_raw"] == [2, 1]
    assert report["relative_degrees"] == [1, 2]
    assert report["T"] == [[0.0, 1.0], [1.0, 0.0]]
    assert report["assumption_satisfied"]


def test_analyze_text_report(capsys):
    code, out, _ = run(capsys, "analyze", fx("stable_4.json"))
    assert code == 0 and "relative degrees (reordered): [1, 2]" in out


def test_analyze_rejects_square_interconnection(capsys):
    code, out, _ = run(capsys, "analyze", fx("cex_2.json"))
    assert code == 2
    assert "rectifier synthesis requires m < p" in out


@pytest.mark.parametrize("name", ["malformed.json", "nan_plant.json", "does_not_exist.json"])
def test_bad_model_files(capsys, name):
    code, _, err = run(capsys, "analyze", fx(name))
    assert code == 1 and err.startswith("error:")


def test_unknown_subcommand_is_usage_error(capsys):
    assert run(capsys, "frobnicate")[0] == 1


def test_version(capsys):
    code, out, _ = run(capsys, "--version")
    assert code == 0 and __version__ in out


@pytest.mark.parametrize("name", ["stable_4.json", "unstable_4.json"])
def test_synthesize_then_verify(capsys, tmp_path, name):
    ctrl = tmp_path / "k.json"
    code, out, _ = run(capsys, "synthesize", fx(name), "--out", ctrl, "--json")
    assert code == 0
    assert json.loads(out)["kgyv_residual"] < 1e-7
    code, out, _ = run(capsys, "verify", fx(name), ctrl, "--trials", 200, "--seed", 7, "--json")
    report = json.loads(out)
    assert code == 0 and report["passed"] and report["metadata_consistent"]
    assert report["retrofit"]["unstable_trials"] == 0


def test_synthesize_is_byte_identical(capsys, tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    run(capsys, "synthesize", fx("unstable_4.json"), "--out", first)
    run(capsys, "synthesize", fx("unstable_4.json"), "--out", second)
    assert first.read_bytes() == second.read_bytes()


def test_controller_round_trip(capsys, tmp_path):
    ctrl = tmp_path / "k.json"
    run(capsys, "synthesize", fx("stable_4.json"), "--out", ctrl)
    K, meta = read_controller(ctrl)
    again = tmp_path / "k2.json"
    write_controller(again, K)
    K2, _ = read_controller(again)
    assert np.array_equal(K.A, K2.A) and np.array_equal(K.D, K2.D)
    verdicts = []
    for path in (ctrl, again):
        code, out, _ = run(capsys, "verify", fx("stable_4.json"), path, "--trials", 10, "--json")
        report = json.loads(out)
        verdicts.append((code, report["passed"], report["retrofit"]["worst_abscissa"]))
    assert verdicts[0] == verdicts[1]
    assert meta["relative_degrees"] == [1, 2] and meta["verdict"]["output_rectifying"]


def test_synthesis_failure_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "synthesize", fx("unreachable_3.json"), "--out", tmp_path / "k.json")
    assert code == 2 and "cannot be reached from u" in err


def test_zero_controller_verifies(capsys):
    assert run(capsys, "verify", fx("stable_4.json"), fx("zero_controller.json"), "--trials", 20)[0] == 0


def test_counterexample_controller_fails(capsys):
    code, out, _ = run(capsys, "verify", fx("cex_2.json"), fx("cex_2_controller.json"), "--trials", 20)
    assert code == 3 and out.rstrip().endswith("FAIL")


def test_naive_controller_fails(capsys):
    code, out, _ = run(capsys, "verify", fx("stable_4.json"), fx("naive_controller_4.json"),
                       "--trials", 20, "--json")
    assert code == 3 and not json.loads(out)["output_rectifying"]["passed"]


def test_wrong_controller_shape(capsys):
    code, _, _ = run(capsys, "verify", fx("cex_2.json"), fx("zero_controller.json"))
    assert code == 1


def test_env_var_sets_default_tolerance(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("RETROFITCTL_TOL", "1e-10")
    ctrl = tmp_path / "k.json"
    assert run(capsys, "synthesize", fx("stable_4.json"), "--out", ctrl)[0] == 0
    assert read_controller(ctrl)[1]["settings"]["tol"] == 1e-10
    monkeypatch.setenv("RETROFITCTL_TOL", "abc")
    assert run(capsys, "analyze", fx("stable_4.json"))[0] == 1


def test_simulate_csv(capsys, tmp_path):
    ctrl, csv = tmp_path / "k.json", tmp_path / "traj.csv"
    run(capsys, "synthesize", fx("unstable_4.json"), "--out", ctrl)
    args = ("simulate", fx("unstable_4.json"), ctrl, "--env-seed", 3, "--dt", 0.01,
            "--t-final", 30, "--out", csv)
    code, out, _ = run(capsys, *args, "--json")
    assert code == 0
    report = json.loads(out)
    assert report["steps"] == 3000 and report["final_state_norm"] < report["initial_state_norm"]
    lines = csv.read_text().splitlines()
    header = lines[0].split(",")
    assert header[:6] == ["t", "x_plant0", "x_plant1", "x_plant2", "x_plant3", "x_env0"]
    assert header[-5:] == ["u0", "y0", "y1", "v0", "w0"]
    assert len(lines) == 3002
    first = csv.read_bytes()
    run(capsys, *args)
    assert csv.read_bytes() == first


def test_simulate_explicit_x0_to_stdout(capsys):
    code, out, _ = run(capsys, "simulate", fx("stable_4.json"), fx("zero_controller.json"),
                       "--x0", "1,0,0,0", "--dt", 0.1, "--t-final", 1, "--env-order", 0)
    assert code == 0
    rows = out.strip().splitlines()
    assert len(rows) == 12 and rows[1].split(",")[:5] == ["0.0", "1.0", "0.0", "0.0", "0.0"]


def test_simulate_bad_arguments(capsys):
    base = ("simulate", fx("stable_4.json"), fx("zero_controller.json"))
    assert run(capsys, *base, "--x0", "1,2")[0] == 1
    assert run(capsys, *base, "--dt", 0.3, "--t-final", 1)[0] == 1


def test_simulate_divergence_exit_code(capsys, tmp_path):
    ctrl = tmp_path / "hot.json"
    write_controller(ctrl, Realization.gain([[1000.0, 1000.0]]))
    code, _, err = run(capsys, "simulate", fx("stable_4.json"), ctrl, "--dt", 0.01, "--t-final", 10)
    assert code == 4 and "diverged at t=" in err


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "retrofitctl", "analyze", fx("stable_4.json")],
                            capture_output=True, text=True, check=False)
    assert result.returncode == 0 and "relative degrees" in result.stdout

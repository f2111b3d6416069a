"""Command-line front end: exit codes, output files, subcommand wiring."""

import csv
import json

import numpy as np
import pytest

from foregame import build_crosswalk, load_trajectory_frames
from foregame.cli import main
from foregame.scenarios import generate_intersection_fixture


def test_unknown_scenario_is_bad_input(capsys):
    assert main(["solve", "--scenario", "roundabout"]) == 3
    assert "bad input" in capsys.readouterr().err


def test_missing_game_file_is_bad_input(capsys):
    assert main(["solve", "--game", "/nonexistent/game.json"]) == 3
    assert "bad input" in capsys.readouterr().err


def test_malformed_tracks_is_bad_input(tmp_path, capsys):
    bad = tmp_path / "tracks.csv"
    bad.write_text("not,a,trajectory\n1,2,3\n")
    assert main(["solve", "--scenario", "intersection",
                 "--tracks", str(bad)]) == 3
    assert "bad input" in capsys.readouterr().err


def test_infer_needs_ground_truth(tmp_path, capsys):
    # the corridor scenario is built from data and carries no generating
    # parameters, so there is nothing to simulate observations from
    path = tmp_path / "tracks.csv"
    generate_intersection_fixture(path)
    code = main(["infer", "--scenario", "intersection", "--tracks", str(path)])
    assert code == 3
    assert "ground truth" in capsys.readouterr().err


@pytest.mark.slow
def test_solve_writes_trajectory_trace_and_kkt(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    trace = tmp_path / "trace.csv"
    prefix = str(tmp_path / "kkt")
    code = main(["solve", "--scenario", "crosswalk", "--out", str(out),
                 "--trace", str(trace), "--dump-kkt", prefix])
    assert code == 0
    text = capsys.readouterr().out
    assert "status=converged" in text
    data, _ = load_trajectory_frames(out)
    game = build_crosswalk()
    assert sorted(data) == [0, 1]
    assert data[0].shape == (game.dims.horizon, 5)
    with open(trace, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "residual_inf", "step_length", "damping"]
    assert len(rows) > 2
    from scipy.io import mmread
    J = mmread(prefix + "_jac.mtx")
    assert J.shape[0] == J.shape[1]


@pytest.mark.slow
def test_solve_game_json_and_dedupe(tmp_path):
    path = tmp_path / "game.json"
    build_crosswalk().save(path)
    assert main(["solve", "--game", str(path), "--dedupe"]) == 0


@pytest.mark.slow
def test_infer_converges_and_logs(tmp_path, capsys):
    log = tmp_path / "log.csv"
    code = main(["infer", "--scenario", "crosswalk", "--seed", "0",
                 "--iters", "80", "--rate", "0.05", "--reg", "1e-3",
                 "--out", str(log)])
    text = capsys.readouterr().out
    assert code == 0, text
    assert "status=converged" in text
    assert "gamma_hat" in text
    with open(log, newline="") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "k"


@pytest.mark.slow
def test_infer_iteration_cap_is_nonconvergence(capsys):
    code = main(["infer", "--scenario", "crosswalk", "--iters", "1"])
    assert code == 2
    assert "status=max_iterations" in capsys.readouterr().out


@pytest.mark.slow
def test_infer_gamma_mode_one(capsys):
    code = main(["infer", "--scenario", "crosswalk", "--gamma-mode", "one",
                 "--iters", "2"])
    out = capsys.readouterr().out
    assert code == 2                     # two steps cannot finish the fit
    assert "gamma_hat = [1. 1.]" in out


@pytest.mark.slow
def test_montecarlo_writes_reports(tmp_path, capsys):
    prefix = str(tmp_path / "mc")
    code = main(["montecarlo", "--levels", "2", "--trials", "1",
                 "--iters", "2", "--out", prefix])
    assert code == 0
    out = capsys.readouterr().out
    assert "dominated at every level" in out
    with open(prefix + "_summary.json") as fh:
        summary = json.load(fh)
    assert set(summary["levels"]) == {"0", "1"}
    with open(prefix + "_records.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 2 * 1 * 2


@pytest.mark.slow
def test_rhplan_smoke(tmp_path, capsys):
    out = tmp_path / "states.csv"
    code = main(["rhplan", "--steps", "14", "--seed", "0",
                 "--out", str(out)])
    text = capsys.readouterr().out
    assert code in (0, 2)
    assert "min distance" in text
    states = np.loadtxt(out, delimiter=",", skiprows=1)
    assert states.shape == (15, 8)


@pytest.mark.slow
def test_check_grad_reports_small_error(capsys):
    code = main(["check-grad", "--points", "1", "--seed", "1", "--verbose"])
    text = capsys.readouterr().out
    assert code == 0
    worst = float(text.strip().rsplit(" ", 1)[-1])
    assert worst <= 1e-3
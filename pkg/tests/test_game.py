"""Game container: evaluation oracle, rollout feasibility, serialization."""

import numpy as np
import pytest

from foregame import GameDefinition, Trajectory, build_crosswalk
from foregame.discounting import stage_weights
from foregame.errors import GameConfigError, IngestionError
from foregame.game import load_trajectory_frames, save_trajectory_csv


def _random_traj(game, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    controls = [rng.normal(size=(game.dims.horizon, m)) * scale
                for m in game.dims.control_dims]
    return game.rollout(controls)


def test_agent_cost_matches_naive_resummation():
    game = build_crosswalk(horizon=8)
    traj = _random_traj(game, 0)
    for i in range(2):
        obj = game.objectives[i]
        total = 0.0
        for t in range(game.dims.horizon):
            stage = 0.0
            for term in obj.terms:
                stage += term.value_batch(traj.states[t:t + 1],
                                          traj.controls[i][t:t + 1],
                                          game.theta)[0]
            total += obj.discount.gamma ** t * stage
        assert game.agent_total_cost(traj, i) == pytest.approx(total, rel=1e-12)


def test_agent_cost_accepts_override_parameters():
    game = build_crosswalk(horizon=6)
    traj = _random_traj(game, 1)
    base = game.agent_total_cost(traj, 0)
    # overriding with the stored values changes nothing
    assert game.agent_total_cost(traj, 0, theta=game.theta,
                                 gamma=game.objectives[0].gamma) == pytest.approx(base)
    # gamma = 0 keeps only the stage-0 cost
    myopic = game.agent_total_cost(traj, 0, gamma=0.0)
    w = stage_weights(0.0, game.dims.horizon)
    assert w[0] == 1.0 and not w[1:].any()
    assert myopic < base or myopic != base  # differs from the discounted total


def test_unsmoothed_cost_uses_exact_hinge():
    game = build_crosswalk(horizon=8, collision_weight=5.0)
    # force the agents close together so the hinge is active
    controls = [np.zeros((8, 2)), np.zeros((8, 2))]
    game2 = GameDefinition(
        dims=game.dims, dynamics=game.dynamics, objectives=game.objectives,
        constraints=game.constraints,
        x1=np.array([0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]),
        theta=game.theta, ground_truth=None)
    traj = game2.rollout(controls)
    smooth = game2.agent_total_cost(traj, 0)
    exact = game2.agent_total_cost(traj, 0, smoothed=False)
    assert smooth != exact
    assert smooth >= exact - 1e-12  # softplus upper-bounds the hinge


def test_rollout_satisfies_dynamics_exactly():
    game = build_crosswalk(horizon=10)
    traj = _random_traj(game, 2, scale=3.0)
    defect = game.dynamics_residual(traj.states, traj.controls)
    assert np.abs(defect).max() == 0.0
    dyn, h_min = game.feasibility_report(traj)
    assert dyn == 0.0
    assert np.isfinite(h_min)


def test_rollout_hand_check_single_step():
    game = build_crosswalk(horizon=4, dt=0.5)
    controls = [np.ones((4, 2)), np.zeros((4, 2))]
    traj = game.rollout(controls)
    # agent 0 velocity integrates the unit accel, position integrates velocity
    np.testing.assert_allclose(traj.states[1, 2:4], [0.5, 0.5])
    np.testing.assert_allclose(traj.states[2, 0:2],
                               traj.states[1, 0:2] + 0.5 * traj.states[1, 2:4])
    # agent 1 coasts in place
    np.testing.assert_allclose(traj.states[:, 4:6], np.tile([5.0, 5.5], (4, 1)))


def test_rollout_rejects_bad_control_shape():
    game = build_crosswalk(horizon=5)
    with pytest.raises(GameConfigError):
        game.rollout([np.zeros((4, 2)), np.zeros((5, 2))])


def test_constraint_values_feasible_rollout_positive():
    game = build_crosswalk(horizon=10)
    traj = game.rollout()  # zero controls, agents drift apart: all slack
    h = game.constraint_values(traj)
    assert h.size > 0
    assert h.min() > 0.0


def test_json_round_trip_preserves_evaluation():
    game = build_crosswalk(horizon=7, gamma=(0.65, 0.85))
    clone = GameDefinition.from_dict(game.to_dict())
    traj = _random_traj(game, 3)
    for i in range(2):
        assert clone.agent_total_cost(traj, i) == pytest.approx(
            game.agent_total_cost(traj, i), rel=1e-15)
    np.testing.assert_array_equal(clone.x1, game.x1)
    np.testing.assert_array_equal(clone.theta, game.theta)
    assert clone.ground_truth == game.ground_truth
    h1 = game.constraint_values(traj)
    h2 = clone.constraint_values(traj)
    np.testing.assert_array_equal(h1, h2)


def test_save_load_file_round_trip(tmp_path):
    game = build_crosswalk(horizon=6)
    p = tmp_path / "game.json"
    game.save(p)
    clone = GameDefinition.load(p)
    traj = _random_traj(game, 4)
    assert clone.agent_total_cost(traj, 1) == pytest.approx(
        game.agent_total_cost(traj, 1), rel=1e-15)


def test_infinite_bounds_survive_round_trip():
    from foregame import ControlBox
    game = build_crosswalk(horizon=5)
    game.constraints[0] = ControlBox(owner=0, low=(-1.0, -np.inf),
                                     high=(np.inf, 1.0))
    clone = GameDefinition.from_dict(game.to_dict())
    blk = clone.constraints[0]
    assert blk.low == (-1.0, -np.inf)
    assert blk.high == (np.inf, 1.0)
    assert blk.rows_per_stage == 2


def test_validation_catches_mismatches():
    game = build_crosswalk(horizon=5)
    d = game.to_dict()
    bad = dict(d)
    bad["x1"] = [0.0, 0.0]
    with pytest.raises(GameConfigError):
        GameDefinition.from_dict(bad)
    bad = dict(d)
    bad["dynamics"] = d["dynamics"][:1]
    with pytest.raises(GameConfigError):
        GameDefinition.from_dict(bad)
    bad = dict(d)
    bad["constraints"] = [dict(c) for c in d["constraints"]]
    bad["constraints"][0]["owner"] = 7
    with pytest.raises(GameConfigError):
        GameDefinition.from_dict(bad)
    bad = dict(d)
    bad["constraints"] = [dict(c) for c in d["constraints"]]
    bad["constraints"][0]["kind"] = "Nonsense"
    with pytest.raises(GameConfigError):
        GameDefinition.from_dict(bad)


def test_trajectory_csv_round_trip(tmp_path):
    game = build_crosswalk(horizon=6)
    traj = _random_traj(game, 5)
    p = tmp_path / "traj.csv"
    save_trajectory_csv(p, game, traj)
    by_agent, frames = load_trajectory_frames(p)
    assert frames == list(range(6))
    assert sorted(by_agent) == [0, 1]
    for i in (0, 1):
        sl = game.dims.state_slice(i)
        np.testing.assert_allclose(by_agent[i][:, 0:2], traj.states[:, sl][:, 0:2],
                                   rtol=0.0, atol=0.0)
        np.testing.assert_allclose(by_agent[i][:, 2:4], traj.states[:, sl][:, 2:4],
                                   rtol=0.0, atol=0.0)


def test_trajectory_csv_rejects_malformed_files(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("frame,agent_id,x_m\n0,0,1.0\n")
    with pytest.raises(IngestionError) as exc:
        load_trajectory_frames(p)
    assert "row 1" in str(exc.value)

    p.write_text("frame,agent_id,x_m,y_m,vx_mps,vy_mps,heading_rad\n"
                 "0,0,1.0,2.0,0.0,0.0\n")
    with pytest.raises(IngestionError) as exc:
        load_trajectory_frames(p)
    assert "row 2" in str(exc.value)

    p.write_text("frame,agent_id,x_m,y_m,vx_mps,vy_mps,heading_rad\n"
                 "0,0,1.0,2.0,0.0,nan,0.0\n")
    with pytest.raises(IngestionError):
        load_trajectory_frames(p)

    # agent 1 missing frame 1
    p.write_text("frame,agent_id,x_m,y_m,vx_mps,vy_mps,heading_rad\n"
                 "0,0,1.0,2.0,0.0,0.0,0.0\n"
                 "1,0,1.0,2.0,0.0,0.0,0.0\n"
                 "0,1,1.0,2.0,0.0,0.0,0.0\n")
    with pytest.raises(IngestionError):
        load_trajectory_frames(p)


def test_dimension_validation():
    from foregame import GameDimensions
    with pytest.raises(GameConfigError):
        GameDimensions(num_agents=0, horizon=5, dt=0.1, state_dims=(), control_dims=())
    with pytest.raises(GameConfigError):
        GameDimensions(num_agents=1, horizon=1, dt=0.1, state_dims=(4,), control_dims=(2,))
    with pytest.raises(GameConfigError):
        GameDimensions(num_agents=1, horizon=5, dt=0.0, state_dims=(4,), control_dims=(2,))
    with pytest.raises(GameConfigError):
        GameDimensions(num_agents=2, horizon=5, dt=0.1, state_dims=(4,), control_dims=(2, 2))


def test_gamma_vector_and_position_indices():
    game = build_crosswalk(gamma=(0.6, 0.9))
    np.testing.assert_array_equal(game.gammas(), [0.6, 0.9])
    assert game.agent_pos_idx(0) == (0, 1)
    assert game.agent_pos_idx(1) == (4, 5)

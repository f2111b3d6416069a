"""Outer-loop parameter fitting: projected gradient descent over (theta, gamma)."""

import csv

import numpy as np
import pytest

from foregame import (
    AgentObjective,
    ControlQuadratic,
    DiscountSpec,
    DoubleIntegrator2D,
    GameDefinition,
    GameDimensions,
    GoalQuadratic,
    full_state_model,
    observe,
    solve_micp,
    transcribe,
)
from foregame.errors import GameConfigError, NonConvergence
from foregame.inverse import (
    InverseConfig,
    _anchored_start,
    infer,
    regularized_objective,
)
from foregame.micp import SolverConfig

GAMMA_TRUE = 0.6
THETA_TRUE = np.array([3.0, -1.0])


def _goal_game(gamma=GAMMA_TRUE):
    """One double integrator steering toward a theta-linked goal; tiny horizon
    so each equilibrium solve is cheap."""
    dims = GameDimensions(num_agents=1, horizon=4, dt=0.5,
                          state_dims=(4,), control_dims=(2,))
    obj = AgentObjective(
        discount=DiscountSpec(gamma=gamma, horizon=4),
        terms=[GoalQuadratic(weight=1.0, goal=(0.0, 0.0), pos_idx=(0, 1),
                             theta_index=0),
               ControlQuadratic(weight=0.1)])
    return GameDefinition(dims=dims, dynamics=[DoubleIntegrator2D()],
                          objectives=[obj], constraints=[],
                          x1=np.zeros(4), theta=THETA_TRUE.copy())


def _observations(game, gamma=GAMMA_TRUE):
    prob = transcribe(game)
    sol = solve_micp(prob, gamma=np.array([gamma]),
                     config=SolverConfig(residual_tolerance=1e-12))
    assert sol.converged
    states = prob.extract_trajectory(sol.v).states
    model = full_state_model(game, noise_variance=0.0)
    return observe(model, states, seed=0)


def test_fixed_point_at_truth():
    game = _goal_game()
    obs = _observations(game)
    fit = infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([GAMMA_TRUE]))
    assert fit.status == "converged"
    assert fit.converged
    assert fit.iterations <= 3
    assert fit.objective <= 1e-8
    np.testing.assert_allclose(fit.gamma, [GAMMA_TRUE], atol=1e-3)
    np.testing.assert_allclose(fit.theta, THETA_TRUE, atol=1e-3)


def test_recovers_discount_from_offset_start():
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(max_iterations=200, learning_rate=0.05)
    fit = infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([0.25]),
                config=cfg)
    assert fit.status == "converged"
    assert abs(fit.gamma[0] - GAMMA_TRUE) <= 1e-2
    assert fit.objective < 1e-4


def test_objective_never_ends_above_start():
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(max_iterations=25, learning_rate=0.05)
    fit = infer(game, obs, theta0=THETA_TRUE + [0.5, -0.5],
                gamma0=np.array([0.9]), config=cfg)
    first = fit.history[0]
    assert fit.regularized_objective <= first[2] + 1e-12


def test_gamma_one_mode_freezes_gamma():
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(max_iterations=30, gamma_mode="one")
    fit = infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([0.2]), config=cfg)
    np.testing.assert_array_equal(fit.gamma, [1.0])
    for row in fit.history:
        assert row[3] == 1.0


def test_gamma_fixed_mask_pins_component():
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(max_iterations=10, gamma_fixed_mask=(True,))
    fit = infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([0.37]), config=cfg)
    np.testing.assert_array_equal(fit.gamma, [0.37])


def test_gamma_iterates_stay_in_bounds():
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(max_iterations=40, learning_rate=0.5, gamma_max=2.0,
                        adapt_step=False)
    fit = infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([0.05]), config=cfg)
    for row in fit.history:
        assert 0.0 <= row[3] <= 2.0
    assert 0.0 <= fit.gamma[0] <= 2.0


def test_dedupe_reaches_same_estimate():
    game = _goal_game()
    obs = _observations(game)
    fits = []
    for dd in (False, True):
        cfg = InverseConfig(max_iterations=120, learning_rate=0.05, dedupe=dd)
        fits.append(infer(game, obs, theta0=THETA_TRUE,
                          gamma0=np.array([0.4]), config=cfg))
    np.testing.assert_allclose(fits[0].gamma, fits[1].gamma, atol=1e-4)
    np.testing.assert_allclose(fits[0].theta, fits[1].theta, atol=1e-4)


def test_regularized_objective_values():
    assert regularized_objective(1.0, [0.5], 1e-3) == pytest.approx(1.00025)
    assert regularized_objective(2.5, [0.3, 1.0], 0.0) == 2.5
    # two components, c=1: 2.5 + (1-0.3)^2 + 0 = 2.99
    assert regularized_objective(2.5, [0.3, 1.0], 1.0) == pytest.approx(2.99)


def test_anchored_start_copies_observed_states():
    game = _goal_game()
    obs = _observations(game)
    prob = transcribe(game)
    v = _anchored_start(prob, obs)
    L = prob.layout
    xs = v[L.x_slice()].reshape(L.T - 1, L.n)
    np.testing.assert_array_equal(xs, np.asarray(obs.values)[1:])
    # everything past the state block matches the plain initial iterate
    v0 = prob.initial_point()
    np.testing.assert_array_equal(v[L.x_slice().stop:], v0[L.x_slice().stop:])


def test_iteration_log_roundtrip(tmp_path):
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(max_iterations=5, learning_rate=0.05)
    fit = infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([0.3]), config=cfg)
    path = tmp_path / "log.csv"
    fit.save_iteration_log(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "objective", "regularized_objective", "gamma_0",
                       "grad_theta_norm", "grad_gamma_norm",
                       "inner_iterations", "step"]
    assert len(rows) == 1 + len(fit.history)
    ks = [int(r[0]) for r in rows[1:]]
    assert ks == sorted(ks)
    assert float(rows[1][1]) == pytest.approx(fit.history[0][1])


def test_first_solve_failure_raises():
    game = _goal_game()
    obs = _observations(game)
    cfg = InverseConfig(solver=SolverConfig(max_iterations=3,
                                            residual_tolerance=1e-30))
    with pytest.raises(NonConvergence):
        infer(game, obs, theta0=THETA_TRUE, gamma0=np.array([0.5]), config=cfg)


def test_bad_inputs_rejected():
    game = _goal_game()
    obs = _observations(game)
    with pytest.raises(GameConfigError):
        InverseConfig(gamma_mode="sometimes")
    with pytest.raises(GameConfigError):
        InverseConfig(max_iterations=0)
    with pytest.raises(GameConfigError):
        InverseConfig(learning_rate=0.0)
    with pytest.raises(GameConfigError):
        infer(game, obs, theta0=np.zeros(3))
    with pytest.raises(GameConfigError):
        infer(game, obs, gamma0=np.array([0.1, 0.2]))
    with pytest.raises(GameConfigError):
        infer(game, obs, gamma0=np.array([-0.1]))
    with pytest.raises(GameConfigError):
        infer(game, obs, gamma0=np.array([0.5]),
              config=InverseConfig(gamma_fixed_mask=(True, False)))

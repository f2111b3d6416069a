"""Complementarity solver: FB function, analytic fixtures, solver behavior."""

import csv

import numpy as np
import pytest

from foregame import (
    AgentObjective,
    ControlBox,
    ControlQuadratic,
    DiscountSpec,
    DoubleIntegrator2D,
    GameDefinition,
    GameDimensions,
    GoalQuadratic,
    VelocityTracking,
    build_crosswalk,
    solve_micp,
    transcribe,
)
from foregame.micp import (
    SolverConfig,
    fb_jacobian_coefficients,
    fischer_burmeister,
    multiplier_floor,
    warm_start,
)


def test_fischer_burmeister_hand_values():
    assert fischer_burmeister(0.0, 0.0) == 0.0
    assert fischer_burmeister(3.0, 4.0) == pytest.approx(2.0)
    assert fischer_burmeister(0.0, 5.0) == 0.0
    assert fischer_burmeister(5.0, 0.0) == 0.0
    assert fischer_burmeister(-1.0, 0.0) == pytest.approx(-2.0)
    # zero exactly on the complementarity set, nonzero off it
    assert fischer_burmeister(1.0, 1.0) == pytest.approx(2.0 - np.sqrt(2.0))


def test_fischer_burmeister_zero_iff_complementary():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.01, 5.0, 50)
    b = rng.uniform(0.01, 5.0, 50)
    vals = fischer_burmeister(a, b)
    assert np.all(np.abs(vals) > 1e-12)  # both positive: never a root
    assert np.all(fischer_burmeister(a, np.zeros(50)) == 0.0)
    assert np.all(fischer_burmeister(np.zeros(50), b) == 0.0)


def test_fb_smoothing_parameter():
    assert fischer_burmeister(0.0, 0.0, eps=1e-3) == pytest.approx(-1e-3)
    assert fischer_burmeister(3.0, 4.0, eps=1e-3) == pytest.approx(
        7.0 - np.sqrt(25.0 + 1e-6))


def test_fb_jacobian_coefficients_match_finite_differences():
    rng = np.random.default_rng(1)
    a = rng.normal(size=30) * 2.0
    b = rng.normal(size=30) * 2.0
    da, db = fb_jacobian_coefficients(a, b)
    h = 1e-7
    fd_a = (fischer_burmeister(a + h, b) - fischer_burmeister(a - h, b)) / (2 * h)
    fd_b = (fischer_burmeister(a, b + h) - fischer_burmeister(a, b - h)) / (2 * h)
    np.testing.assert_allclose(da, fd_a, atol=1e-6)
    np.testing.assert_allclose(db, fd_b, atol=1e-6)


def test_fb_coefficients_at_origin_use_unit_element():
    da, db = fb_jacobian_coefficients(np.zeros(1), np.zeros(1))
    assert da[0] == 1.0 and db[0] == 1.0


def test_multiplier_floor_scales_with_tolerance():
    assert multiplier_floor(1e-8) == -1e-9
    assert multiplier_floor(1e-6) == -1e-7
    assert multiplier_floor(1e-12) == -1e-12  # absolute floor


def _speed_limited_game(gamma):
    """One double integrator pushed toward a high cruise speed against a
    control box: the upper accel bound is active with a hand-computable
    multiplier."""
    dims = GameDimensions(num_agents=1, horizon=2, dt=1.0,
                          state_dims=(4,), control_dims=(2,))
    obj = AgentObjective(
        discount=DiscountSpec(gamma=gamma, horizon=2),
        terms=[VelocityTracking(weight=1.0, target=10.0, v_idx=2),
               ControlQuadratic(weight=0.1)])
    return GameDefinition(
        dims=dims,
        dynamics=[DoubleIntegrator2D()],
        objectives=[obj],
        constraints=[ControlBox(owner=0, low=(-1.0, -1.0), high=(1.0, 1.0))],
        x1=np.zeros(4),
        theta=np.zeros(0),
    )


@pytest.mark.parametrize("gamma,lam_expected", [
    # stationarity in u0x at the active bound: 0.2*u + 2*gamma*(u - 10) + lam_hi
    # terms with u = 1 give lam = 0.2 + 18*gamma - 0.4... worked by hand:
    # mu_vx = 2*gamma*(1 - 10), lam_hi = -0.2*1 - mu_vx
    (1.0, 17.8),
    (0.5, 8.8),
])
def test_active_bound_solution_matches_hand_kkt(gamma, lam_expected):
    game = _speed_limited_game(gamma)
    prob = transcribe(game)
    sol = solve_micp(prob, config=SolverConfig(residual_tolerance=1e-12))
    assert sol.converged
    L = prob.layout
    traj = prob.extract_trajectory(sol.v)
    np.testing.assert_allclose(traj.states[1], [0.0, 0.0, 1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(traj.controls[0][0], [1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(traj.controls[0][1], [0.0, 0.0], atol=1e-9)
    z = sol.v[L.eta_r:]
    # box rows per stage: x-low, x-high, y-low, y-high
    np.testing.assert_allclose(z[1], lam_expected, atol=1e-8)
    mask = np.ones(8, bool)
    mask[1] = False
    np.testing.assert_allclose(z[mask], 0.0, atol=1e-9)
    h = prob.residual_h(sol.v)
    np.testing.assert_allclose(h[1], 0.0, atol=1e-9)  # bound is tight


def _lq_game(horizon=6):
    dims = GameDimensions(num_agents=1, horizon=horizon, dt=0.2,
                          state_dims=(4,), control_dims=(2,))
    obj = AgentObjective(
        discount=DiscountSpec(gamma=1.0, horizon=horizon),
        terms=[GoalQuadratic(weight=1.0, goal=(3.0, 2.0), pos_idx=(0, 1)),
               ControlQuadratic(weight=0.1)])
    return GameDefinition(dims=dims, dynamics=[DoubleIntegrator2D()],
                          objectives=[obj], constraints=[],
                          x1=np.zeros(4), theta=np.zeros(0))


def test_unconstrained_lq_matches_dense_linear_oracle():
    game = _lq_game()
    prob = transcribe(game)
    n = prob.layout.total
    assert prob.layout.eta_z == 0  # no inequality rows at all
    v0 = np.zeros(n)
    F0 = prob.residual_F(v0)
    # independent oracle: the KKT map is affine, so build its matrix by
    # finite differences and solve the linear system directly
    h = 1e-6
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (prob.residual_F(v0 + e) - prob.residual_F(v0 - e)) / (2 * h)
    v_star = np.linalg.solve(J, -F0)
    # affinity check: the residual is exactly linear in v
    rng = np.random.default_rng(2)
    v_probe = rng.normal(size=n)
    np.testing.assert_allclose(prob.residual_F(v_probe), F0 + J @ v_probe,
                               atol=1e-7)
    sol = solve_micp(prob, config=SolverConfig(residual_tolerance=1e-12))
    assert sol.converged
    traj = prob.extract_trajectory(sol.v)
    oracle = prob.extract_trajectory(v_star)
    assert np.abs(traj.states - oracle.states).max() <= 1e-6
    assert np.abs(traj.controls[0] - oracle.controls[0]).max() <= 1e-6


def test_crosswalk_solve_certifies_kkt():
    game = build_crosswalk(horizon=8)
    prob = transcribe(game)
    sol = solve_micp(prob)
    assert sol.converged
    assert sol.status == "converged"
    assert sol.residual_inf <= 1e-8
    c = prob.residual_c(sol.v)
    h = prob.residual_h(sol.v)
    z = sol.v[prob.layout.eta_r:]
    assert np.abs(c).max() <= 1e-6
    assert np.abs(np.minimum(z, h)).max() <= 1e-5
    assert z.min() >= multiplier_floor(1e-8)


def test_solver_is_deterministic():
    game = build_crosswalk(horizon=8)
    prob = transcribe(game)
    a = solve_micp(prob)
    b = solve_micp(prob)
    assert np.array_equal(a.v, b.v)
    assert a.iterations == b.iterations
    assert a.residual_inf == b.residual_inf


def test_warm_start_reuses_nearby_solution():
    game = build_crosswalk(horizon=10)
    prob = transcribe(game)
    base = solve_micp(prob)
    assert base.converged
    gamma_near = np.array([0.71, 0.8])
    cold = solve_micp(prob, gamma=gamma_near)
    warm = solve_micp(prob, gamma=gamma_near, v0=warm_start(prob, base))
    assert warm.converged
    assert warm.iterations <= cold.iterations


def test_warm_start_clips_negative_multipliers_and_checks_shape():
    game = build_crosswalk(horizon=5)
    prob = transcribe(game)
    v = prob.initial_point()
    v[prob.layout.eta_r:] = -3.0
    w = warm_start(prob, v)
    assert (w[prob.layout.eta_r:] == 0.0).all()
    np.testing.assert_array_equal(w[:prob.layout.eta_r], v[:prob.layout.eta_r])
    with pytest.raises(ValueError):
        warm_start(prob, np.zeros(3))


def test_iteration_budget_reports_max_iterations():
    game = build_crosswalk(horizon=8)
    prob = transcribe(game)
    sol = solve_micp(prob, config=SolverConfig(max_iterations=2))
    assert not sol.converged
    assert sol.status == "max_iterations"
    assert sol.iterations == 2


def test_stall_watchdog_leaves_converging_solves_untouched():
    prob = transcribe(build_crosswalk(horizon=10), dedupe=True)
    plain = solve_micp(prob, config=SolverConfig(residual_tolerance=1e-10))
    watched = solve_micp(prob, config=SolverConfig(residual_tolerance=1e-10,
                                                   stall_window=15))
    assert plain.converged and watched.converged
    assert watched.iterations == plain.iterations
    np.testing.assert_array_equal(watched.v, plain.v)


def test_stall_watchdog_cuts_runs_making_no_progress():
    prob = transcribe(build_crosswalk(horizon=8))
    # an unreachable tolerance parks the run at the float floor; the
    # watchdog must then cut it far short of the iteration budget
    sol = solve_micp(prob, config=SolverConfig(residual_tolerance=1e-30,
                                               max_iterations=50,
                                               stall_window=3,
                                               stall_ratio=1e-12))
    assert sol.status == "stalled"
    assert not sol.converged
    assert 3 <= sol.iterations < 50
    it = sol.iterations
    assert sol.trace[it][1] > 1e-12 * sol.trace[it - 3][1]


def test_trace_file_records_iterations(tmp_path):
    game = build_crosswalk(horizon=6)
    prob = transcribe(game)
    path = tmp_path / "trace.csv"
    sol = solve_micp(prob, config=SolverConfig(trace_file=str(path)))
    assert sol.converged
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "residual_inf", "step_length", "damping"]
    body = rows[1:]
    assert len(body) == len(sol.trace) >= 2
    its = [int(r[0]) for r in body]
    assert its == sorted(its)
    residuals = [float(r[1]) for r in body]
    assert residuals[-1] <= 1e-8 or not sol.converged


def test_smoothed_fb_solve_still_converges():
    game = build_crosswalk(horizon=6)
    prob = transcribe(game)
    sol = solve_micp(prob, config=SolverConfig(fb_epsilon=1e-10))
    assert sol.converged
    assert prob.kkt_residual(sol.v).max <= 1e-7


def test_solution_at_overridden_parameters_stays_at_those_parameters():
    game = build_crosswalk(horizon=6)
    prob = transcribe(game)
    gamma = np.array([0.55, 0.95])
    theta = game.theta * 1.05
    sol = solve_micp(prob, theta=theta, gamma=gamma)
    assert sol.converged
    # the residual at the override parameters is small, at the nominal ones not
    assert prob.kkt_residual(sol.v, theta=theta, gamma=gamma).max <= 1e-7
    assert prob.kkt_residual(sol.v).max > 1e-4

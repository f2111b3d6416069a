"""Command-line front end.

Exit codes: 0 on success, 2 when an equilibrium or inverse solve does not
converge, 3 on bad input (unknown scenario, malformed file, invalid value).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import GameConfigError, IngestionError, NonConvergence
from .game import GameDefinition, save_trajectory_csv
from .harness import (ExperimentConfig, fd_inverse_gradient, monte_carlo,
                      trajectory_error)
from .inverse import InverseConfig, infer
from .micp import SolverConfig, solve_micp
from .observation import observe, position_only_model
from .replan import RhConfig, run_receding_horizon
from .scenarios import build_crosswalk, build_intersection
from .sensitivity import inverse_gradient
from .transcription import transcribe


def _load_game(args):
    """Game definition plus an optional state anchor for the solver start
    (the intersection scenario anchors on its ingested tracks)."""
    if getattr(args, "game", None):
        return GameDefinition.load(args.game), None
    name = args.scenario
    if name == "crosswalk":
        return build_crosswalk(), None
    if name == "intersection":
        scen = build_intersection(csv_path=getattr(args, "tracks", None))
        return scen.game, scen.states
    raise GameConfigError(f"unknown scenario {name!r}")


def _cmd_solve(args):
    game, anchor = _load_game(args)
    problem = transcribe(game, dedupe=args.dedupe)
    cfg = SolverConfig(trace_file=args.trace)
    sol = solve_micp(problem, v0=problem.initial_point(anchor), config=cfg)
    kkt = problem.kkt_residual(sol.v)
    print(f"status={sol.status} iterations={sol.iterations} "
          f"residual={sol.residual_inf:.3e}")
    print(f"stationarity+dynamics={kkt.stationarity_inf:.3e} "
          f"complementarity={kkt.complementarity_inf:.3e}")
    if args.out:
        save_trajectory_csv(args.out, game, problem.extract_trajectory(sol.v))
        print(f"trajectory written to {args.out}")
    if args.dump_kkt:
        problem.dump_matrix_market(sol.v, args.dump_kkt)
        print(f"KKT system written to {args.dump_kkt}_*.mtx")
    return 0 if sol.converged else 2


def _cmd_infer(args):
    game, _ = _load_game(args)
    truth = game.ground_truth
    if not truth:
        print("scenario has no embedded ground truth to generate "
              "observations from", file=sys.stderr)
        return 3
    problem = transcribe(game)
    base = solve_micp(problem, theta=np.asarray(truth["theta"], float),
                      gamma=np.asarray(truth["gamma"], float))
    if not base.converged:
        print("ground-truth solve failed", file=sys.stderr)
        return 2
    states = problem.extract_trajectory(base.v).states
    model = position_only_model(game, noise_variance=args.noise)
    obs = observe(model, states, seed=args.seed)
    n = game.dims.num_agents
    gamma0 = np.random.default_rng(args.seed).uniform(0.0, 1.0, n)
    cfg = InverseConfig(max_iterations=args.iters, learning_rate=args.rate,
                        gamma_mode=args.gamma_mode,
                        gamma_regularizer=args.reg)
    fit = infer(game, obs, theta0=obs.values[-1].copy(), gamma0=gamma0,
                config=cfg)
    err = trajectory_error(
        problem.extract_trajectory(fit.solution.v).states, states)
    print(f"status={fit.status} iterations={fit.iterations} "
          f"objective={fit.objective:.6e}")
    print("gamma_hat = " + np.array2string(fit.gamma, precision=6))
    print("theta_hat = " + np.array2string(fit.theta, precision=6))
    print(f"trajectory error vs truth = {err:.6e}")
    if args.out:
        fit.save_iteration_log(args.out)
        print(f"iteration log written to {args.out}")
    return 0 if fit.status == "converged" else 2


def _cmd_montecarlo(args):
    levels = tuple(np.linspace(0.0, args.max_noise, args.levels))
    cfg = ExperimentConfig(noise_levels=levels, trials=args.trials,
                           master_seed=args.seed,
                           inverse_iterations=args.iters,
                           gamma_regularizer=args.reg)
    result = monte_carlo(cfg)
    result.save_csv(args.out + "_records.csv")
    result.save_summary(args.out + "_summary.json")
    s = result.summary
    print(f"dominated at every level: {s['dominated_every_level']}")
    print(f"overall error reduction:  {s['overall_reduction']:.1%}")
    print(f"written to {args.out}_records.csv / {args.out}_summary.json")
    return 0


def _cmd_rhplan(args):
    cfg = RhConfig(steps=args.steps, noise_std=args.noise)
    res = run_receding_horizon(seed=args.seed, config=cfg)
    print(f"min distance          = {res.min_distance:.3f}")
    print(f"goal distance initial = {res.initial_goal_distance:.3f}")
    print(f"goal distance final   = {res.final_goal_distance:.3f}")
    print(f"plan failures = {res.plan_failures}, "
          f"estimation failures = {res.estimation_failures}")
    if args.out:
        np.savetxt(args.out, np.hstack([res.ego_states, res.other_states]),
                   delimiter=",",
                   header="ego_x,ego_y,ego_vx,ego_vy,oth_x,oth_y,oth_vx,oth_vy")
        print(f"state log written to {args.out}")
    safe = res.min_distance >= cfg.d_min and \
        res.final_goal_distance < res.initial_goal_distance
    return 0 if safe else 2


def _cmd_check_grad(args):
    game = build_crosswalk()
    truth = game.ground_truth
    problem = transcribe(game)
    theta = np.asarray(truth["theta"], float)
    gamma = np.asarray(truth["gamma"], float)
    base = solve_micp(problem, theta=theta, gamma=gamma)
    if not base.converged:
        print("base solve failed", file=sys.stderr)
        return 2
    states = problem.extract_trajectory(base.v).states
    obs = observe(position_only_model(game), states, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.points):
        th = theta + rng.uniform(-0.3, 0.3, len(theta))
        gm = np.clip(gamma + rng.uniform(-0.1, 0.1, len(gamma)), 0.05, 1.5)
        sol = solve_micp(problem, theta=th, gamma=gm,
                         config=SolverConfig(residual_tolerance=1e-10))
        if not sol.converged:
            print("perturbed solve failed", file=sys.stderr)
            return 2
        grad, _ = inverse_gradient(problem, sol.v, obs, theta=th, gamma=gm)
        ref = fd_inverse_gradient(problem, obs, th, gm, base=sol)
        rel = np.linalg.norm(grad - ref) / max(np.linalg.norm(ref), 1e-12)
        worst = max(worst, float(rel))
        if args.verbose:
            print(f"relative gradient error {rel:.3e}")
    print(f"worst relative gradient error over {args.points} points: "
          f"{worst:.3e}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="foregame",
        description="Dynamic-game equilibria and parameter recovery")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve a scenario's equilibrium")
    sp.add_argument("--scenario", default="crosswalk")
    sp.add_argument("--game", help="game description JSON (overrides scenario)")
    sp.add_argument("--tracks", help="trajectory CSV for the intersection")
    sp.add_argument("--out", help="write the solution trajectory CSV here")
    sp.add_argument("--dump-kkt", help="matrix-market dump prefix")
    sp.add_argument("--trace", help="per-iteration trace CSV")
    sp.add_argument("--dedupe", action="store_true",
                    help="per-agent dynamics blocks instead of a shared copy")
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("infer", help="recover parameters from observations")
    sp.add_argument("--scenario", default="crosswalk")
    sp.add_argument("--game")
    sp.add_argument("--tracks")
    sp.add_argument("--noise", type=float, default=0.0,
                    help="observation noise variance")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--iters", type=int, default=200)
    sp.add_argument("--rate", type=float, default=0.05)
    sp.add_argument("--gamma-mode", choices=("learn", "one"), default="learn")
    sp.add_argument("--reg", type=float, default=0.0,
                    help="discount regularizer weight")
    sp.add_argument("--out", help="iteration log CSV")
    sp.set_defaults(func=_cmd_infer)

    mc_defaults = ExperimentConfig()
    sp = sub.add_parser("montecarlo", help="noise sweep vs undiscounted baseline")
    sp.add_argument("--levels", type=int, default=len(mc_defaults.noise_levels))
    sp.add_argument("--trials", type=int, default=mc_defaults.trials)
    sp.add_argument("--max-noise", type=float,
                    default=float(mc_defaults.noise_levels[-1]))
    sp.add_argument("--seed", type=int, default=mc_defaults.master_seed)
    sp.add_argument("--iters", type=int, default=mc_defaults.inverse_iterations)
    sp.add_argument("--reg", type=float, default=mc_defaults.gamma_regularizer)
    sp.add_argument("--out", default="montecarlo")
    sp.set_defaults(func=_cmd_montecarlo)

    sp = sub.add_parser("rhplan", help="receding-horizon run with online "
                                       "intent estimation")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--noise", type=float, default=0.1,
                    help="observation noise std dev")
    sp.add_argument("--out", help="state log CSV")
    sp.set_defaults(func=_cmd_rhplan)

    sp = sub.add_parser("check-grad", help="implicit gradient vs finite "
                                           "differences")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--points", type=int, default=3)
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=_cmd_check_grad)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return 2
    except (GameConfigError, IngestionError, FileNotFoundError, ValueError) as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

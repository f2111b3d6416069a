"""Discounted dynamic games: equilibrium solving, differentiable solutions,
and recovery of cost parameters and discount factors from observed play."""

from .constraints import (CircleBound, CollisionSeparation, ControlBox,
                          RoadRegion, SigmoidWall, VelocityBox)
from .costs import (CollisionHinge, ControlQuadratic, GoalQuadratic,
                    LaneCenterQuadratic, VelocityTracking, softplus)
from .discounting import (DiscountSpec, discount_weight, effective_horizon,
                          stage_weight_gradients, stage_weights)
from .dynamics import DoubleIntegrator2D, KinematicBicycle
from .errors import (GameConfigError, IngestionError, NonConvergence,
                     SensitivityFailure, StageIndexError)
from .game import (AgentObjective, GameDefinition, GameDimensions, Trajectory,
                   load_trajectory_frames, save_trajectory_csv)
from .harness import (ExperimentConfig, MonteCarloResult, bootstrap_summary,
                      fd_inverse_gradient, monte_carlo, trajectory_error)
from .inverse import InverseConfig, InverseResult, infer, regularized_objective
from .micp import (MicpSolution, SolverConfig, fischer_burmeister, solve_micp,
                   warm_start)
from .observation import (ObservationModel, ObservationSequence,
                          full_state_model, load_observations, observe,
                          position_only_model, save_observations)
from .replan import RhConfig, RhResult, run_receding_horizon
from .scenarios import (IntersectionScenario, build_crosswalk,
                        build_intersection, fit_lane_centerline,
                        generate_intersection_fixture)
from .sensitivity import (ActiveSetPartition, SensitivityResult,
                          inverse_gradient, inverse_objective,
                          partition_active, solution_sensitivity)
from .transcription import MicpProblem, VariableLayout, build_layout, transcribe

__version__ = "0.1.0"

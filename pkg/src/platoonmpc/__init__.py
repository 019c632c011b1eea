"""Platoon-centered car-following MPC with fully distributed solvers.

The package covers the whole pipeline: platoon physics and error
coordinates (``core``), per-step assembly of the constrained program
(``problem``), splitting of the coupled Hessian into per-vehicle blocks
(``decomposition``), the consensus subspace and simulated message fabric
(``consensus``), distributed operator-splitting solvers with a centralized
reference (``solvers``), closed-loop stability analysis and weight design
(``stability``), and scenario simulation (``harness``).
"""

from .consensus import (AugmentedLayout, AugmentedVar, MessageFabric, SimulationFault,
                        VehicleGraph, exchange_round, fabric_project, project_consensus)
from .core import (ErrorState, LeaderProfile, PlatoonConfig, PlatoonState, WeightSchedule,
                   accel_gaps, error_coords, error_step, first_diff, gaps_to_accel,
                   initial_state, prefix_sum, prefix_sum_matrix, reference_config,
                   step_dynamics)
from .decomposition import (LocalHessian, LocalObjective, PdDecomposition, StageBlocks,
                            decompose_pd, decompose_psd, local_objectives, stage_blocks)
from .harness import (NoiseSpec, SafetyViolation, ScenarioSpec, SimResult, emit_results,
                      run_scenario, scenario_builtin)
from .problem import (MembershipReport, QcqpProblem, SafetyQuadratic, build_qcqp,
                      check_membership, eval_objective)
from .solvers import (LocalAgentProblem, ProxSolveError, SolveReport, SolverParams,
                      build_local_problems, default_params_for_horizon, prox_local,
                      project_local, solve_centralized, solve_dr, solve_three_op,
                      solve_three_op_accel, solve_variant, warmup_initial_guess)
from .stability import (ClosedLoopModel, SchurMarginResult, build_closed_loop,
                        default_weight_schedule, eigen_bounds_check, gen_weight_schedule,
                        schur_margin, stability_report_json)

__version__ = "0.1.0"

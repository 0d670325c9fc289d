"""Solver toolkit for constrained discrete-time dynamic potential games.

Verify the potential property of a game numerically, construct the
potential by line integration, solve the equivalent control problem
(Riccati recursion, finite-horizon trajectory optimization, or grid
value iteration), and certify that the solution is a Nash equilibrium.
"""

from .errors import (ConditioningError, DpgError, FeasibilityError,
                     InstabilityError, NonConvergenceError,
                     NumericalDomainError, SpecificationError, ValidationError)
from .game import (DynamicGameSpec, FeasibilityReport, MocpSpec, Trajectory,
                   check_feasibility, evaluate_potential_return,
                   evaluate_returns, rollout)
from .lq import (LqGameParams, LqProblem, LqSimulation, RiccatiSolution,
                 augment_lq, dare_residual, lq_best_response, lq_optimal_gain,
                 lq_simulate, lq_verify_ne, riccati_fixed_point)
from .potential import (ConservativityReport, PotentialFn, SamplePlan,
                        build_potential_line_integral,
                        check_potential_conditions,
                        verify_potential_gradients)
from .scenarios import (SCENARIOS, ScenarioBundle, ScenarioConfig,
                        build_equal_rate, build_mac, build_network_flow,
                        build_prop_fair, build_scenario, build_smart_grid)
from .trajopt import (FiniteHorizonProblem, NeReport, SolveResult,
                      SolverOptions, best_response_deviation,
                      solve_finite_horizon, trajectory_gradient, verify_ne)
from .valueiter import (Grid, GridSpec, GreedyRollout, PolicyTable,
                        ValueTable, augment_time, build_grid,
                        greedy_policy_rollout, value_iterate)

__version__ = "0.1.0"

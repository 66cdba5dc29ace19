"""Linear-quadratic control of mean-field SDEs with conditional expectations.

Solvers for the pre-committed and equilibrium Riccati systems, the
feedback strategies they induce, Monte Carlo simulation of the closed
loops, partition-based constructions, and numerical verification checks.
"""
from .game import (
    ConvergenceReport,
    Partition,
    PartitionSolution,
    game_convergence_study,
    multiperson_game_solve,
    naive_convergence_study,
    naive_partition_rollout,
)
from .problem_model import (
    Deterministic,
    Gaussian,
    InitialPair,
    Problem,
    ProblemError,
    TimeGrid,
    build_problem,
    load_problem,
    validate_assumptions,
)
from .riccati import (
    EquilibriumTriple,
    LyapunovInput,
    RiccatiTriple,
    closed_loop_cost_quadratic,
    closed_loop_lyapunov_input,
    solve_equilibrium_riccati,
    solve_lyapunov_quadruple,
    solve_precommitted_riccati,
)
from .simulate import SimConfig, estimate_cost, simulate_closed_loop, simulate_perturbed
from .strategies import GainSchedule, equilibrium_gains, naive_gains, precommitted_gains
from .verify import (
    CheckReport,
    check_convexity_perturbation,
    check_equilibrium_local_optimality,
    check_reductions,
    check_representation,
    check_stationarity,
)

__all__ = [
    "SimConfig",
    "estimate_cost",
    "simulate_closed_loop",
    "simulate_perturbed",
    "GainSchedule",
    "equilibrium_gains",
    "naive_gains",
    "precommitted_gains",
    "ConvergenceReport",
    "Partition",
    "PartitionSolution",
    "game_convergence_study",
    "multiperson_game_solve",
    "naive_convergence_study",
    "naive_partition_rollout",
    "Deterministic",
    "Gaussian",
    "InitialPair",
    "Problem",
    "ProblemError",
    "TimeGrid",
    "build_problem",
    "load_problem",
    "validate_assumptions",
    "EquilibriumTriple",
    "LyapunovInput",
    "RiccatiTriple",
    "closed_loop_cost_quadratic",
    "closed_loop_lyapunov_input",
    "solve_equilibrium_riccati",
    "solve_lyapunov_quadruple",
    "solve_precommitted_riccati",
    "CheckReport",
    "check_convexity_perturbation",
    "check_equilibrium_local_optimality",
    "check_reductions",
    "check_representation",
    "check_stationarity",
]

__version__ = "0.1.0"

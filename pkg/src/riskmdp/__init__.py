"""Risk-sensitive cost minimization on finite controlled Markov chains.

Solves for the optimal growth rate of the exponentiated cumulative cost by
reformulating the problem as a single-controller zero-sum ergodic game and
solving its linear programs over dyadic kernel grids, with independent
spectral and enumeration oracles plus dynamic-programming certification.
"""

from .certify import (
    AnalyticExample,
    DpCertificate,
    analytic_example,
    build_certificate,
    build_partition,
    check_dp,
    check_twisted,
    hat_kernel,
    poisson_insolvability,
    two_state_model,
)
from .errors import GuardError, ModelError
from .game import (
    ConvergenceReport,
    GameSolution,
    build_dual,
    build_primal,
    solve_congen,
    solve_game,
    solve_sequence,
)
from .grid import GridSpec, build_grid, enumerate_rows
from .lp import LinearProgram, LpError, LpSolution
from .model import (
    KernelMatrix,
    MdpModel,
    PurePolicy,
    StationaryPolicy,
    apply_policy,
    load_model,
    parse_model,
    union_support,
)
from .oracle import (
    BruteForceResult,
    GrowthRates,
    PayoffVector,
    brute_force_lambda_star,
    cesaro_limit,
    game_payoff,
    growth_rate,
    kl_divergence,
    tilde_cost,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

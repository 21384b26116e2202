"""Small dense complex-Hermitian semidefinite programming for the SDR stage."""

from .ipm import BlockProblem, IpmSolution, embed_real, solve_block_sdp
from .sdr import (
    CovariancePool,
    InfeasibleDesignError,
    RepairResult,
    SdrProblem,
    SolverFailureError,
    TraceConstraint,
    rank_one_extract,
    repair_feasibility,
    solve_linear_sdp,
    solve_sdr,
)

__all__ = [
    "BlockProblem",
    "IpmSolution",
    "embed_real",
    "solve_block_sdp",
    "CovariancePool",
    "InfeasibleDesignError",
    "RepairResult",
    "SdrProblem",
    "SolverFailureError",
    "TraceConstraint",
    "rank_one_extract",
    "repair_feasibility",
    "solve_linear_sdp",
    "solve_sdr",
]

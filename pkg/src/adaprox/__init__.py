"""Adaptive proximal method for abstract equilibrium problems."""
from .benchmarks import (
    AffineVI,
    FTSInstance,
    fts_reference_instance,
    fts_saddle,
    holder_vi,
    matrix_game,
    random_affine_vi,
    random_mixed_vi,
)
from .certificates import GapReport, equilibrium_residual, saddle_gap, vi_dual_gap
from .geometry import (
    Ball,
    Box,
    EntropySetup,
    EuclideanSetup,
    ProductSet,
    ProductSetup,
    ProxSolveError,
    Simplex,
    bregman,
    make_setup,
    solve_prox_subproblem,
)
from .models import (
    EquilibriumModel,
    SaddleModel,
    check_monotonicity,
    composite_saddle_model,
    lagrangian_saddle_model,
    mixed_vi_model,
    vi_model,
    with_injected_noise,
)
from .solver import (
    AdaptiveProxSolver,
    SmoothnessOverflowError,
    SolverConfig,
    SolverTrace,
    UncertifiedBoundWarning,
    prox_budget,
    run,
    theoretical_bound,
)

__version__ = "0.1.0"

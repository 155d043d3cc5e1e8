"""netfail: rare failure probabilities of LP-based distribution networks.

A network of nodes with fixed supplies and jointly Gaussian demands reaches
equilibrium by shedding unserved demand to neighbors; the shed cost is the
optimal value of a small linear program.  This package estimates the
probability that the shed cost exceeds a threshold by naive Monte Carlo,
importance sampling on a node-overflow mixture, and conditional Monte Carlo
over the radial part of the demand's polar decomposition, together with the
large-rarity decay rate of that probability.
"""

from .asymptotics import (
    LdRate,
    RateReport,
    RateRow,
    ld_rate,
    probability_sandwich,
    rate_sweep,
)
from .estimators import (
    METHODS,
    EstimatorConfig,
    ExperimentRow,
    MixtureWeights,
    RootFinderParams,
    RunStats,
    TailUnderflowError,
    cmc_replication,
    compare_methods,
    failure_radius_intervals,
    find_radial_root,
    is_replication,
    mixture_weights,
    naive_replication,
    rows_to_csv,
    run_estimator,
)
from .lp import (
    DualSolver,
    LpProblem,
    LpSolution,
    ShortfallCost,
    SolverNumericalError,
    SolverTolerances,
    build_dual,
    build_primal,
    enumerate_dual_vertices,
    shortfall_cost,
    solve_lp,
)
from .network import (
    AssumptionWarning,
    NetworkSpec,
    NetworkValidationError,
    ScaledInstance,
    ThresholdRule,
    ValidationReport,
    default_routing,
    load_network,
    save_network,
    scale_instance,
    spec_from_dict,
    spec_to_dict,
    validate_network,
)
from .presets import PRESET_NAMES, ExperimentPreset, preset
from .stochastic import (
    GaussianModel,
    NotPositiveDefiniteError,
    SamplerParams,
    chi_survival,
    factorize,
    normal_cdf,
    normal_quantile,
    normal_sf,
    sample_angle,
    sample_conditional_demand,
    sample_demand,
    sample_truncated_normal,
    stream,
)

__version__ = "0.1.0"

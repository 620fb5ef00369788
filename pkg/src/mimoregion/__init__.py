"""Pareto boundary computation for multicell MIMO downlink performance regions."""

__version__ = "0.1.0"

from .boundary import (
    BoundaryPoint,
    DualCertificate,
    DualExtractionError,
    FairnessProfile,
    duals_to_explicit,
    g_max_bound,
    profile_grid,
    trace_boundary,
    trace_point,
)
from .conic import (
    ClarabelBackend,
    FeasibilityProblem,
    FeasibilityResult,
    SocpAssembler,
    build_problem,
    solve,
)
from .explicit import (
    CorollarySignReport,
    ExplicitParams,
    ExplicitSweep,
    GridTooLargeError,
    InvalidStrategyError,
    ClosedFormResult,
    derivative_sign_check,
    psi_matrix,
    simplex_grid,
    closed_form_strategy,
    feasible_strategy,
    sweep_explicit,
)
from .metrics import MetricRangeError, PerformanceMetric, g, g_inverse
from .oracle import DominanceReport, OracleConfig, check_dominance, random_cloud
from .region import (
    FingerprintMismatchError,
    GapReport,
    RegionSample,
    boundary_gap,
    export,
    load_sample,
    merge_samples,
    pareto_filter,
    pareto_mask,
)
from .scenario import (
    BeamformingStrategy,
    PowerConstraint,
    Scenario,
    SelectionMatrices,
    build_selection,
    constraint_usage,
    distortion_covariance,
    evaluate_point,
    fingerprint,
    generate_scenario,
    load_scenario,
    mrt_strategy,
    per_antenna_constraints,
    per_bs_constraints,
    save_scenario,
    sinr,
    sinr_all,
    total_power_constraint,
    validate_strategy,
    zero_strategy,
)

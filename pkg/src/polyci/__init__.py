"""Confidence regions for linear functionals in constrained Gaussian linear
inverse problems, built by test inversion with Monte-Carlo calibrated
thresholds."""

from .calibration import (
    GlobalConstant,
    Provenance,
    QuantileEstimate,
    SlicedCandidateMax,
    estimate_chibar_weights,
    global_threshold,
    quantile_at,
    sample_Zx,
)
from .distributions import ChiBarMixture, chi2_cdf, chi2_quantile, chibar_cdf, chibar_quantile
from .harness import CoverageReport, ExperimentConfig, MethodDescriptor, run_coverage
from .problems import ProblemSpec
from .qp import (
    ActiveSetQp,
    Box,
    LinearInequality,
    NonNegative,
    PolyhedralCone,
    QpProblem,
    QpSolution,
    Status,
    feasibility_lp,
    min_unconstrained,
    recession_direction,
    solve_ls,
)
from .regions import (
    IntervalK,
    RegionSpec,
    area_2d,
    boundedness_report,
    bounding_box,
    contains,
    profile_roots,
    region_area,
    split_contains,
    split_region_build,
)
from .statistics import TestStatistic, eval_statistic, eval_translated

__version__ = "0.1.0"

__all__ = [
    "ActiveSetQp",
    "Box",
    "ChiBarMixture",
    "CoverageReport",
    "ExperimentConfig",
    "GlobalConstant",
    "IntervalK",
    "LinearInequality",
    "MethodDescriptor",
    "NonNegative",
    "PolyhedralCone",
    "ProblemSpec",
    "Provenance",
    "QpProblem",
    "QpSolution",
    "QuantileEstimate",
    "RegionSpec",
    "SlicedCandidateMax",
    "Status",
    "TestStatistic",
    "area_2d",
    "boundedness_report",
    "bounding_box",
    "chi2_cdf",
    "chi2_quantile",
    "chibar_cdf",
    "chibar_quantile",
    "contains",
    "estimate_chibar_weights",
    "eval_statistic",
    "eval_translated",
    "feasibility_lp",
    "global_threshold",
    "min_unconstrained",
    "profile_roots",
    "quantile_at",
    "recession_direction",
    "region_area",
    "run_coverage",
    "sample_Zx",
    "solve_ls",
    "split_contains",
    "split_region_build",
    "__version__",
]

"""Differentially private few-shot demonstration synthesis.

Synthesizes prompt demonstrations token by token by privately aggregating
next-token distributions from an LLM, with a data-adaptive clipping radius
and a Renyi-DP accountant that calibrates noise to a target (epsilon, delta).
"""

from .accountant import (
    DEFAULT_ALPHA_GRID,
    AmplificationOverflowError,
    DpBudget,
    LinearRdpCurve,
    MechanismProfile,
    SubsamplingContext,
    UnachievableBudgetError,
    binary_search_iterations,
    calibrate_sigma1,
    compose_iterations,
    gaussian_rdp,
    matched_baseline_sigma,
    per_iteration_curve,
    per_iteration_rdp,
    rdp_to_dp,
    subsample_amplify,
    total_epsilon,
)
from .aggregate import (
    AggregationConfig,
    AggregationTrace,
    adaptive_aggregate,
    baseline_aggregate,
    noisy_projected_mean,
    radius_coverage_check,
    select_token,
)
from .data import Example, PromptTemplate, build_prompt, load_dataset, partition_subsets
from .pipeline import (
    ConfigurationError,
    RunConfig,
    SyntheticDemo,
    audit_traces,
    generate_demo,
    generate_shots,
    measure_cluster_radius,
    report_privacy,
    resolve_run,
    run_utility_comparison,
)
from .providers import (
    HttpProvider,
    NextTokenBatch,
    ProviderError,
    ProviderSpec,
    SyntheticProvider,
    next_token_generation,
    restrict_topk,
)
from .radius import dp_binary_search, good_radius, l_function
from .rng import NoiseStreams, substream
from .simplex import (
    SIMPLEX_RADIUS,
    Ball,
    coverage_count,
    l2_distance,
    min_ball_radius_oracle,
    project_to_ball,
    project_to_simplex,
)

__version__ = "0.1.0"

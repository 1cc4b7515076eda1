"""Run orchestration: demo generation, radius measurement, privacy reports.

Everything here is driven by a RunConfig and a master seed.  Each noise or
sampling site draws from a named substream of that seed (label draw,
per-token subsample, per-token noise bundle), so outputs and trace files
are byte-stable for a fixed config.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accountant import (
    DpBudget,
    MechanismProfile,
    SubsamplingContext,
    binary_search_iterations,
    calibrate_sigma1,
    epsilon_at_order,
    matched_baseline_sigma,
    per_iteration_coefficient,
    total_epsilon,
)
from .aggregate import (
    AggregationConfig,
    adaptive_aggregate,
    baseline_aggregate,
    select_token,
)
from .data import Example, GENERIC_TEMPLATE, PromptTemplate, load_dataset
from .providers import ProviderSpec, next_token_generation
from .radius import good_radius
from .rng import NoiseStreams, substream
from .simplex import min_ball_radius_oracle


class ConfigurationError(ValueError):
    """The run configuration is inconsistent or incomplete."""


GAMMA_DATASET = "dataset"
GAMMA_LABEL = "label"


@dataclass(frozen=True)
class RunConfig:
    """Complete description of a synthesis run.

    Exactly one of sigma1 / epsilon must be set: a given sigma1 is used
    directly, a given epsilon target triggers calibration (delta defaults
    to 1/|dataset| when not set).
    """

    task: str = "task"
    dataset_path: str | None = None
    dataset_format: str | None = None
    labels: tuple[str, ...] = ()
    template_path: str | None = None
    provider: ProviderSpec = field(default_factory=lambda: ProviderSpec(kind="synthetic"))
    m: int = 10
    n: int = 1
    k: int = 100
    t_max: int = 20
    n_shots: int = 4
    lam: float = 0.2
    t_hat: int = 1
    mu: float = 0.55
    rho: float = 0.8
    theta: float = 0.1
    sigma0: float = 10.0
    sigma2: float = 3.0
    sigma1: float | None = None
    epsilon: float | None = None
    delta: float | None = None
    gamma_mode: str = GAMMA_DATASET
    alpha_max: int = 64
    seed: int = 0
    demos_path: str = "demos.jsonl"
    traces_path: str = "traces.jsonl"
    stop_tokens: tuple[str, ...] = ()
    radius_mode: str = "oracle"  # "oracle" | "goodradius"
    n_runs: int = 5
    n_trials: int = 500

    def __post_init__(self):
        if min(self.m, self.n, self.k, self.t_max, self.n_shots) < 1:
            raise ConfigurationError("m, n, k, t_max, n_shots must be positive")
        if self.gamma_mode not in (GAMMA_DATASET, GAMMA_LABEL):
            raise ConfigurationError(f"unknown gamma_mode {self.gamma_mode!r}")
        if self.radius_mode not in ("oracle", "goodradius"):
            raise ConfigurationError(f"unknown radius_mode {self.radius_mode!r}")
        if self.sigma1 is not None and self.epsilon is not None:
            raise ConfigurationError("set either sigma1 or a target epsilon, not both")

    @property
    def alpha_grid(self) -> tuple[int, ...]:
        return tuple(range(2, self.alpha_max + 1))

    def require_noise_source(self):
        if self.sigma1 is None and self.epsilon is None:
            raise ConfigurationError("one of sigma1 or a target epsilon is required")


@dataclass(frozen=True)
class TokenTrace:
    """Per-token audit record, serialized alongside the demos."""

    trace_id: str
    position: int
    label: str
    chosen_token: str
    support_size: int
    fallback_count: int
    target_radius: float
    radius_sequence: tuple[float, ...]
    coverage_checks: tuple[tuple[int, float], ...]
    break_reason: str
    degenerate_simplex_events: int
    mean_estimates: int
    goodradius_steps: tuple[dict, ...]

    def to_record(self) -> dict:
        record = dataclasses.asdict(self)
        record["radius_sequence"] = list(self.radius_sequence)
        record["coverage_checks"] = [[raw, noisy] for raw, noisy in self.coverage_checks]
        record["goodradius_steps"] = list(self.goodradius_steps)
        return record


@dataclass(frozen=True)
class SyntheticDemo:
    label: str
    text: str
    tokens: tuple[str, ...]
    trace_id: str
    stop_rule: str  # "t_max" | "stop_token"

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "text": self.text,
            "tokens": list(self.tokens),
            "token_count": len(self.tokens),
            "trace_id": self.trace_id,
            "stop_rule": self.stop_rule,
        }

    @classmethod
    def from_record(cls, record: dict) -> "SyntheticDemo":
        return cls(
            label=record["label"],
            text=record["text"],
            tokens=tuple(record["tokens"]),
            trace_id=record["trace_id"],
            stop_rule=record["stop_rule"],
        )


@dataclass
class ResolvedRun:
    """A RunConfig with dataset, template, provider, and sigma1 materialized."""

    config: RunConfig
    dataset: list[Example]
    labels: tuple[str, ...]
    template: PromptTemplate
    provider: object
    sigma1: float
    delta: float | None


def _placeholder_pool(labels, per_label: int) -> list[Example]:
    # The synthetic provider ignores prompt content; this pool only exists so
    # the subset-partitioning path runs unchanged.
    return [
        Example(text=f"synthetic corpus item {i}", label=label)
        for label in labels
        for i in range(per_label)
    ]


def resolve_run(config: RunConfig, provider=None) -> ResolvedRun:
    """Load data and template, infer labels, and settle sigma1.

    With an epsilon target, sigma1 is calibrated against the configured
    gamma interpretation; delta defaults to 1/|dataset|.
    """
    config.require_noise_source()
    if config.dataset_path is not None:
        dataset = load_dataset(
            config.dataset_path, config.dataset_format, config.labels or None
        )
        labels = config.labels or tuple(sorted({ex.label for ex in dataset}))
    else:
        if not config.labels:
            raise ConfigurationError("labels are required when no dataset file is given")
        labels = config.labels
        dataset = _placeholder_pool(labels, config.m * config.n)
    if not labels:
        raise ConfigurationError("the label set is empty")
    if config.n_shots > len(labels):
        raise ConfigurationError(
            f"n_shots={config.n_shots} exceeds the {len(labels)} available labels"
        )
    template = (
        PromptTemplate.from_file(config.template_path)
        if config.template_path
        else GENERIC_TEMPLATE
    )
    if provider is None:
        provider = config.provider.build()

    delta = config.delta
    sigma1 = config.sigma1
    if sigma1 is None:
        if delta is None:
            delta = 1.0 / len(dataset)
        ctx = _subsampling_context(config, len(dataset), _label_counts(dataset))
        profile = MechanismProfile(
            sigma0=config.sigma0, sigma1=None, sigma2=config.sigma2,
            t_hat=config.t_hat, theta=config.theta,
        )
        sigma1 = calibrate_sigma1(
            DpBudget(config.epsilon, delta), profile, ctx, config.t_max, config.alpha_grid
        )
    return ResolvedRun(
        config=config, dataset=dataset, labels=labels, template=template,
        provider=provider, sigma1=sigma1, delta=delta,
    )


def _label_counts(dataset) -> dict[str, int]:
    counts: dict[str, int] = {}
    for ex in dataset:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    return counts


def _subsampling_context(config: RunConfig, dataset_size: int, label_counts) -> SubsamplingContext:
    drawn = config.m * config.n
    if config.gamma_mode == GAMMA_LABEL:
        if not label_counts:
            raise ConfigurationError("per-label gamma needs label counts")
        population = min(label_counts.values())
    else:
        population = dataset_size
    return SubsamplingContext(m=drawn, n=population)


def _aggregation_config(config: RunConfig, sigma1: float, k: int) -> AggregationConfig:
    return AggregationConfig(
        m=config.m, k=k, lam=config.lam, t_hat=config.t_hat,
        sigma0=config.sigma0, sigma1=sigma1, sigma2=config.sigma2,
        mu=config.mu, rho=config.rho, theta=config.theta,
    )


def generate_demo(run: ResolvedRun, label: str, demo_index: int) -> tuple[SyntheticDemo, list[TokenTrace]]:
    """Generate one demonstration token by token, recording a trace per token."""
    config = run.config
    trace_id = f"demo-{demo_index:04d}"
    prefix = ""
    tokens: list[str] = []
    traces: list[TokenTrace] = []
    stop_rule = "t_max"
    for position in range(config.t_max):
        draw_rng = substream(config.seed, "demo", demo_index, "token", position, "subsample")
        batch = next_token_generation(
            run.provider, run.dataset, label, config.m, config.n, config.k,
            run.template, prefix, draw_rng, position=position,
        )
        k_actual = len(batch.support)
        cfg = _aggregation_config(config, run.sigma1, k_actual)
        streams = NoiseStreams.from_seed(config.seed, "demo", demo_index, "token", position)
        vector, trace = adaptive_aggregate(batch.private_vectors, cfg, streams)
        token = select_token(vector, batch.support)
        tokens.append(token)
        prefix += token
        traces.append(
            TokenTrace(
                trace_id=trace_id,
                position=position,
                label=label,
                chosen_token=token,
                support_size=k_actual,
                fallback_count=len(batch.fallback_indices),
                target_radius=trace.target_radius,
                radius_sequence=tuple(trace.radius_sequence),
                coverage_checks=tuple(trace.coverage_checks),
                break_reason=trace.break_reason,
                degenerate_simplex_events=trace.degenerate_simplex_events,
                mean_estimates=trace.mean_estimates,
                goodradius_steps=tuple(dataclasses.asdict(s) for s in trace.radius_search_steps),
            )
        )
        if token in config.stop_tokens:
            stop_rule = "stop_token"
            break
    demo = SyntheticDemo(
        label=label, text="".join(tokens), tokens=tuple(tokens),
        trace_id=trace_id, stop_rule=stop_rule,
    )
    return demo, traces


def generate_shots(run: ResolvedRun) -> tuple[list[SyntheticDemo], list[TokenTrace]]:
    """Draw n_shots labels without replacement and generate one demo each."""
    config = run.config
    label_rng = substream(config.seed, "labels")
    order = label_rng.choice(len(run.labels), size=config.n_shots, replace=False)
    demos: list[SyntheticDemo] = []
    traces: list[TokenTrace] = []
    for demo_index, label_index in enumerate(order):
        demo, demo_traces = generate_demo(run, run.labels[int(label_index)], demo_index)
        demos.append(demo)
        traces.extend(demo_traces)
    return demos, traces


def write_outputs(demos, traces, demos_path, traces_path) -> None:
    """Write demo and trace JSONL files (deterministic byte-for-byte)."""
    for path, records in (
        (demos_path, (d.to_record() for d in demos)),
        (traces_path, (t.to_record() for t in traces)),
    ):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_demos(path) -> list[SyntheticDemo]:
    with open(path, encoding="utf-8") as fh:
        return [SyntheticDemo.from_record(json.loads(line)) for line in fh if line.strip()]


def audit_traces(traces, config: RunConfig) -> dict:
    """Compare noise events consumed in traces against the charged worst case."""
    search_iters = binary_search_iterations(config.theta)
    per_token_ok = all(
        t.mean_estimates <= config.t_hat + 1
        and len(t.coverage_checks) <= config.t_hat
        and len(t.goodradius_steps) == search_iters
        for t in traces
    )
    n_tokens = len(traces)
    consumed = {
        "mean_estimates": sum(t.mean_estimates for t in traces),
        "coverage_checks": sum(len(t.coverage_checks) for t in traces),
        "goodradius_draws": sum(2 * len(t.goodradius_steps) for t in traces),
    }
    charged = {
        "mean_estimates": n_tokens * (config.t_hat + 1),
        "coverage_checks": n_tokens * config.t_hat,
        "goodradius_draws": n_tokens * 2 * search_iters,
    }
    within = all(consumed[key] <= charged[key] for key in consumed)
    return {
        "tokens": n_tokens,
        "consumed": consumed,
        "charged": charged,
        "ok": bool(per_token_ok and within),
    }


def measure_cluster_radius(run: ResolvedRun) -> dict:
    """Covering-radius statistics of the private vectors along generation paths.

    Each of n_runs paths advances with the noiseless fixed-noise aggregator;
    at every position the 80%-coverage radius of the M vectors is measured
    either exactly (radius_mode="oracle") or with the private search
    (radius_mode="goodradius").  Reports per-position radii plus the overall
    mean and standard deviation.
    """
    config = run.config
    per_run: list[list[float]] = []
    labels_used: list[str] = []
    for run_idx in range(config.n_runs):
        label_rng = substream(config.seed, "radius", run_idx, "label")
        label = run.labels[int(label_rng.integers(len(run.labels)))]
        labels_used.append(label)
        prefix = ""
        radii: list[float] = []
        for position in range(config.t_max):
            draw_rng = substream(config.seed, "radius", run_idx, "token", position, "subsample")
            batch = next_token_generation(
                run.provider, run.dataset, label, config.m, config.n, config.k,
                run.template, prefix, draw_rng, position=position,
            )
            points = batch.private_vectors
            if config.radius_mode == "oracle":
                radius = min_ball_radius_oracle(points, config.rho)
            else:
                radius = good_radius(
                    points,
                    math.ceil(config.rho * config.m),
                    config.sigma0,
                    config.theta,
                    substream(config.seed, "radius", run_idx, "token", position, "goodradius"),
                )
            radii.append(radius)
            mean_vec = baseline_aggregate(
                points, 0.0, substream(config.seed, "radius", run_idx, "token", position, "path")
            )
            prefix += select_token(mean_vec, batch.support)
        per_run.append(radii)
    flat = np.array(per_run, dtype=float)
    return {
        "mode": config.radius_mode,
        "runs": config.n_runs,
        "positions": config.t_max,
        "labels": labels_used,
        "per_position_mean": flat.mean(axis=0).tolist(),
        "per_run_mean": flat.mean(axis=1).tolist(),
        "mean": float(flat.mean()),
        "std": float(flat.std()),
        "max": float(flat.max()),
    }


def run_utility_comparison(run: ResolvedRun) -> dict:
    """Agreement-with-consensus rates of both aggregators at matched privacy.

    Both aggregators see the same batches; the fixed-noise baseline gets the
    whole per-token budget on its single mean (matched_baseline_sigma).  The
    consensus token is the argmax of the exact mean of the private vectors.
    Reports rates, a 95% normal-approximation interval, and the discordant
    pair counts for a one-sided paired comparison.
    """
    config = run.config
    if min(config.sigma0, run.sigma1, config.sigma2) == 0.0:
        sigma_baseline = 0.0  # an infinite budget is matched by zero noise
    else:
        profile = MechanismProfile(
            sigma0=config.sigma0, sigma1=run.sigma1, sigma2=config.sigma2,
            t_hat=config.t_hat, theta=config.theta,
        )
        sigma_baseline = matched_baseline_sigma(profile)
    adaptive_hits = 0
    baseline_hits = 0
    only_adaptive = 0
    only_baseline = 0
    for trial in range(config.n_trials):
        label = run.labels[trial % len(run.labels)]
        draw_rng = substream(config.seed, "utility", trial, "subsample")
        batch = next_token_generation(
            run.provider, run.dataset, label, config.m, config.n, config.k,
            run.template, "", draw_rng, position=trial,
        )
        points = batch.private_vectors
        consensus = select_token(points.mean(axis=0), batch.support)
        cfg = _aggregation_config(config, run.sigma1, len(batch.support))
        vector, _ = adaptive_aggregate(
            points, cfg, NoiseStreams.from_seed(config.seed, "utility", trial, "adaptive")
        )
        adaptive_token = select_token(vector, batch.support)
        baseline_vec = baseline_aggregate(
            points, sigma_baseline, substream(config.seed, "utility", trial, "baseline")
        )
        baseline_token = select_token(baseline_vec, batch.support)
        a_hit = adaptive_token == consensus
        b_hit = baseline_token == consensus
        adaptive_hits += a_hit
        baseline_hits += b_hit
        only_adaptive += a_hit and not b_hit
        only_baseline += b_hit and not a_hit
    n = config.n_trials
    rate_a = adaptive_hits / n
    rate_b = baseline_hits / n

    def half_width(rate):
        return 1.96 * math.sqrt(max(rate * (1 - rate), 1e-12) / n)

    return {
        "trials": n,
        "matched_baseline_sigma": sigma_baseline,
        "adaptive_rate": rate_a,
        "baseline_rate": rate_b,
        "adaptive_ci95": [max(0.0, rate_a - half_width(rate_a)), min(1.0, rate_a + half_width(rate_a))],
        "baseline_ci95": [max(0.0, rate_b - half_width(rate_b)), min(1.0, rate_b + half_width(rate_b))],
        "only_adaptive_correct": only_adaptive,
        "only_baseline_correct": only_baseline,
    }


def report_privacy(config: RunConfig, dataset_size: int, label_counts=None) -> dict:
    """Privacy report: epsilon (or calibrated sigma1) with all tau components.

    Both gamma interpretations are reported when label counts are available;
    the per-label number uses the smallest label count (largest gamma).  An
    informational full-run epsilon composes n_shots * t_max positions.
    """
    config.require_noise_source()
    delta = config.delta if config.delta is not None else 1.0 / dataset_size
    drawn = config.m * config.n
    contexts = {GAMMA_DATASET: SubsamplingContext(drawn, dataset_size)}
    if label_counts:
        contexts[GAMMA_LABEL] = SubsamplingContext(drawn, min(label_counts.values()))

    report: dict = {
        "task": config.task,
        "delta": delta,
        "gamma_mode": config.gamma_mode,
        "t_max": config.t_max,
        "n_shots": config.n_shots,
        "sigma0": config.sigma0,
        "sigma2": config.sigma2,
        "t_hat": config.t_hat,
        "theta": config.theta,
        "alpha_grid": [config.alpha_grid[0], config.alpha_grid[-1]],
        "gamma": {mode: ctx.gamma for mode, ctx in contexts.items()},
    }

    if config.gamma_mode not in contexts:
        raise ConfigurationError("per-label gamma requested but no label counts available")

    if config.sigma1 is not None:
        sigma1 = config.sigma1
        report["sigma1"] = sigma1
    else:
        ctx = contexts[config.gamma_mode]
        profile = MechanismProfile(
            sigma0=config.sigma0, sigma1=None, sigma2=config.sigma2,
            t_hat=config.t_hat, theta=config.theta,
        )
        sigma1 = calibrate_sigma1(
            DpBudget(config.epsilon, delta), profile, ctx, config.t_max, config.alpha_grid
        )
        report["sigma1"] = sigma1
        report["calibration"] = {"target_epsilon": config.epsilon, "gamma_mode": config.gamma_mode}

    profile = MechanismProfile(
        sigma0=config.sigma0, sigma1=sigma1, sigma2=config.sigma2,
        t_hat=config.t_hat, theta=config.theta,
    )
    search_iters = binary_search_iterations(config.theta)
    report["per_token_rdp"] = {
        "coefficient": per_iteration_coefficient(profile),
        "radius_search_coeff": search_iters / config.sigma0**2,
        "mean_estimate_coeff": (config.t_hat + 1) / (2.0 * sigma1**2),
        "coverage_check_coeff": config.t_hat / (2.0 * config.sigma2**2),
        "binary_search_iterations": search_iters,
    }

    epsilons = {}
    for mode, ctx in contexts.items():
        eps, alpha = total_epsilon(profile, ctx, config.t_max, delta, config.alpha_grid)
        coeffs = report["per_token_rdp"]
        entry = {
            "epsilon": eps,
            "best_alpha": alpha,
            "gamma": ctx.gamma,
            "tau_at_best_alpha": {
                "radius_search": coeffs["radius_search_coeff"] * alpha,
                "mean_estimates": coeffs["mean_estimate_coeff"] * alpha,
                "coverage_checks": coeffs["coverage_check_coeff"] * alpha,
                "per_token_total": coeffs["coefficient"] * alpha,
            },
        }
        eps_run, alpha_run = total_epsilon(
            profile, ctx, config.t_max * config.n_shots, delta, config.alpha_grid
        )
        entry["full_run_epsilon"] = eps_run
        entry["full_run_best_alpha"] = alpha_run
        excluded = []
        for a in config.alpha_grid:
            try:
                epsilon_at_order(profile, ctx, config.t_max, delta, a)
            except OverflowError:
                excluded.append(a)
        if excluded:
            entry["excluded_alphas"] = excluded
        epsilons[mode] = entry
    report["epsilon"] = epsilons
    return report

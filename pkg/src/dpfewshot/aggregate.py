"""DP aggregation of next-token probability vectors.

Two aggregators over the same M vectors:

* adaptive_aggregate - finds a private target radius, then iteratively
  shrinks the clipping radius toward it, re-centering with noisy projected
  means whose noise scales with the current radius.  Noise therefore adapts
  to how tightly the vectors cluster.
* baseline_aggregate - one noisy mean at the fixed simplex-wide
  sensitivity, no adaptation.

Noise sites draw from named substreams (goodradius / mean / check) so a
data-dependent early break never shifts draws consumed elsewhere.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .radius import RadiusSearchStep, good_radius
from .rng import NoiseStreams, resolve_streams, substream
from .simplex import SIMPLEX_RADIUS, Ball, coverage_count, project_to_ball, project_to_simplex_flagged

BREAK_MAX_ITERS = "max_iters"
BREAK_COVERAGE_FAILED = "coverage_failed"
BREAK_RADIUS_FLOOR = "radius_floor"


@dataclass(frozen=True)
class AggregationConfig:
    """Knobs of the adaptive aggregator for M vectors of dimension K.

    lam scales the coverage-check margin; t_hat bounds the inner loop; mu is
    the fraction the noisy check must cover; rho the fraction the radius
    search targets.  sigma0/sigma1/sigma2 are the noise multipliers of the
    radius search, mean estimate, and coverage check (0 disables noise at
    that site but still consumes its draws).
    """

    m: int
    k: int
    lam: float
    t_hat: int
    sigma0: float
    sigma1: float
    sigma2: float
    mu: float = 0.55
    rho: float = 0.8
    theta: float = 0.1

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise ValueError("m and k must be positive")
        if self.t_hat < 1:
            raise ValueError("t_hat must be a positive integer")
        if self.lam < 0 or min(self.sigma0, self.sigma1, self.sigma2) < 0:
            raise ValueError("lam and noise multipliers must be nonnegative")
        if not 0.0 < self.mu <= 1.0 or not 0.0 < self.rho <= 1.0:
            raise ValueError("mu and rho must lie in (0, 1]")
        if not 0.0 < self.theta <= SIMPLEX_RADIUS:
            raise ValueError("theta must lie in (0, sqrt(2)/2]")
        coeff = self.lam * self.sigma1 * math.sqrt(self.k) / self.m
        if coeff >= 0.5:
            warnings.warn(
                f"margin coefficient 2*lam*sigma1*sqrt(k)/m = {2 * coeff:.3f} >= 1; "
                "the radius update cannot shrink and the loop will stop at the floor check",
                stacklevel=2,
            )

    def margin(self, current_radius: float) -> float:
        """Check-radius padding absorbing the noise in the current center."""
        return 2.0 * self.lam * current_radius * self.sigma1 * math.sqrt(self.k) / self.m

    @property
    def coverage_target(self) -> int:
        """Ball volume the radius search aims for: ceil(rho * m)."""
        return math.ceil(self.rho * self.m)


@dataclass
class AggregationTrace:
    """Audit record of one adaptive aggregation call."""

    target_radius: float
    radius_sequence: list[float]
    coverage_checks: list[tuple[int, float]]
    break_reason: str
    degenerate_simplex_events: int
    mean_estimates: int
    radius_search_steps: list[RadiusSearchStep] = field(default_factory=list)

    @property
    def coverage_check_count(self) -> int:
        return len(self.coverage_checks)


def noisy_mean_raw(
    points: np.ndarray, radius: float, sigma1: float, rng: np.random.Generator
) -> np.ndarray:
    """Gaussian-noised mean: (sum + N(0, (2*radius*sigma1)^2 I)) / M, no remap."""
    points = np.asarray(points, dtype=float)
    m, k = points.shape
    noise = 2.0 * radius * sigma1 * rng.standard_normal(k)
    return (points.sum(axis=0) + noise) / m


def noisy_projected_mean(
    points: np.ndarray, radius: float, sigma1: float, rng: np.random.Generator
) -> np.ndarray:
    """Noisy mean mapped back onto the probability simplex."""
    out, _ = _noisy_mean_step(points, radius, sigma1, rng)
    return out


def _noisy_mean_step(points, radius, sigma1, rng) -> tuple[np.ndarray, bool]:
    return project_to_simplex_flagged(noisy_mean_raw(points, radius, sigma1, rng))


def radius_coverage_check(
    points: np.ndarray,
    center: np.ndarray,
    target_radius: float,
    current_radius: float,
    cfg: AggregationConfig,
    rng: np.random.Generator,
) -> tuple[bool, int, float]:
    """Noisy test that enough original vectors sit near the current center.

    Counts points within target_radius + margin(current_radius) of the
    center, adds N(0, sigma2^2), and compares against mu * M.  Consumes
    exactly one Gaussian draw.
    """
    check_radius = target_radius + cfg.margin(current_radius)
    raw = coverage_count(points, Ball(center, check_radius))
    noisy = raw + cfg.sigma2 * rng.standard_normal()
    return noisy >= cfg.mu * cfg.m, raw, noisy


def adaptive_aggregate(
    points: np.ndarray, cfg: AggregationConfig, rng
) -> tuple[np.ndarray, AggregationTrace]:
    """Aggregate M probability vectors with iterative radius reduction.

    rng is a NoiseStreams bundle or an int master seed.  Returns the final
    simplex-mapped center and a trace recording the target radius, every
    radius update, raw/noisy coverage counts, and why the loop ended.
    """
    points = np.asarray(points, dtype=float)
    if points.shape != (cfg.m, cfg.k):
        raise ValueError(f"expected points of shape {(cfg.m, cfg.k)}, got {points.shape}")
    streams: NoiseStreams = resolve_streams(rng)

    search_steps: list[RadiusSearchStep] = []
    target_r = good_radius(
        points, cfg.coverage_target, cfg.sigma0, cfg.theta, streams.goodradius, search_steps
    )

    current_r = SIMPLEX_RADIUS
    radius_sequence = [current_r]
    center, degenerate = _noisy_mean_step(points, current_r, cfg.sigma1, streams.mean)
    degenerate_events = int(degenerate)
    mean_estimates = 1
    checks: list[tuple[int, float]] = []
    break_reason = BREAK_MAX_ITERS

    for _ in range(cfg.t_hat):
        passed, raw, noisy = radius_coverage_check(
            points, center, target_r, current_r, cfg, streams.check
        )
        checks.append((raw, noisy))
        if not passed:
            break_reason = BREAK_COVERAGE_FAILED
            break
        if current_r < target_r + cfg.margin(current_r):
            break_reason = BREAK_RADIUS_FLOOR
            break
        current_r = target_r + cfg.margin(current_r)
        radius_sequence.append(current_r)
        ball = Ball(center, current_r)
        projected = np.stack([project_to_ball(p, ball) for p in points])
        center, degenerate = _noisy_mean_step(projected, current_r, cfg.sigma1, streams.mean)
        degenerate_events += int(degenerate)
        mean_estimates += 1

    trace = AggregationTrace(
        target_radius=target_r,
        radius_sequence=radius_sequence,
        coverage_checks=checks,
        break_reason=break_reason,
        degenerate_simplex_events=degenerate_events,
        mean_estimates=mean_estimates,
        radius_search_steps=search_steps,
    )
    return center, trace


def baseline_aggregate(points: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Fixed-noise mean at simplex-wide sensitivity: (sum + N(0, 2 sigma^2 I)) / M.

    No simplex remap; token selection takes the argmax of this raw vector.
    """
    points = np.asarray(points, dtype=float)
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng), "baseline")
    m, k = points.shape
    noise = math.sqrt(2.0) * sigma * rng.standard_normal(k)
    return (points.sum(axis=0) + noise) / m


def select_token(p: np.ndarray, support):
    """Element of support at the maximal coordinate; ties take the earliest."""
    p = np.asarray(p, dtype=float)
    if len(p) != len(support):
        raise ValueError(f"vector length {len(p)} != support length {len(support)}")
    return support[int(np.argmax(p))]

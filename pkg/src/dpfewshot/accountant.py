"""Renyi-DP accounting for the full synthesis run.

The per-token mechanism is a fixed composition of Gaussian mechanisms:
one radius search (2 * binary_search_iterations(theta) noisy counts at
noise std 2*sigma0, sensitivity 2), at most t_hat + 1 projected mean
estimates (noise std 2*R*sigma1 on a sum of sensitivity 2R, so the R
cancels), and at most t_hat coverage checks (noise std sigma2 on a count
of sensitivity 1).  Every primitive therefore has an exactly linear RDP
curve tau(alpha) = c * alpha.

Accounting pipeline, evaluated per integer order alpha and minimized over
a grid:

    per-token curve -> without-replacement subsampling amplification
                    -> multiply by the t_max token positions
                    -> convert to (epsilon, delta)

The amplification bound is evaluated in log space because its j-th term
carries a factor e^{(j-1) tau(j)} that overflows double precision for
moderate tau.

Charging is worst-case over the data: the inner loop is always billed for
t_hat + 1 mean estimates and t_hat checks even when it breaks early, so a
data-dependent early stop can never reduce the charged budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

SIMPLEX_RADIUS = math.sqrt(2.0) / 2.0

#: Integer Renyi orders scanned by default.  The subsampling theorem is
#: stated for integer orders only; 64 covers every regime this package
#: calibrates (extending the grid can only tighten epsilon).
DEFAULT_ALPHA_GRID: tuple[int, ...] = tuple(range(2, 65))

CALIBRATION_BRACKET = (1e-3, 1e3)
CALIBRATION_REL_TOL = 1e-4


class AmplificationOverflowError(OverflowError):
    """The subsampling bound exceeded representable range even in log space."""


class UnachievableBudgetError(ValueError):
    """The target epsilon lies outside the calibration bracket."""


@dataclass(frozen=True)
class LinearRdpCurve:
    """An RDP curve of the form tau(alpha) = coeff * alpha."""

    coeff: float
    label: str = ""

    def __call__(self, alpha: float) -> float:
        if alpha <= 1:
            raise ValueError(f"RDP order must be > 1, got {alpha}")
        return self.coeff * alpha


@dataclass(frozen=True)
class MechanismProfile:
    """Noise multipliers and loop bound of the per-token mechanism.

    sigma1 may be left None for profiles that are inputs to calibration;
    any cost evaluation will then raise until it is filled in.
    """

    sigma0: float
    sigma1: float | None
    sigma2: float
    t_hat: int
    theta: float = 0.1

    def __post_init__(self):
        if self.sigma0 <= 0 or self.sigma2 <= 0:
            raise ValueError("noise multipliers must be positive")
        if self.sigma1 is not None and self.sigma1 <= 0:
            raise ValueError("sigma1 must be positive when set")
        if self.t_hat < 0 or int(self.t_hat) != self.t_hat:
            raise ValueError(f"t_hat must be a nonnegative integer, got {self.t_hat}")
        if not 0.0 < self.theta < SIMPLEX_RADIUS:
            raise ValueError(f"theta must lie in (0, sqrt(2)/2), got {self.theta}")


@dataclass(frozen=True)
class SubsamplingContext:
    """Per-token without-replacement draw of m records from a population of n."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if self.m > self.n:
            raise ValueError(f"cannot draw {self.m} from a population of {self.n}")

    @property
    def gamma(self) -> float:
        return self.m / self.n


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


def binary_search_iterations(theta: float) -> int:
    """Iterations of the radius binary search: ceil(log2(sqrt(2) / (2 theta)))."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    return max(0, math.ceil(math.log2(math.sqrt(2.0) / (2.0 * theta))))


def gaussian_rdp(sensitivity: float, noise_std: float, alpha: float) -> float:
    """RDP cost of a Gaussian mechanism: alpha * sensitivity^2 / (2 noise_std^2)."""
    if sensitivity <= 0 or noise_std <= 0:
        raise ValueError("sensitivity and noise_std must be positive")
    if alpha <= 1:
        raise ValueError(f"RDP order must be > 1, got {alpha}")
    return alpha * sensitivity**2 / (2.0 * noise_std**2)


def per_iteration_coefficient(profile: MechanismProfile) -> float:
    """Linear coefficient c of the per-token curve tau(alpha) = c * alpha."""
    if profile.sigma1 is None:
        raise ValueError("profile has no sigma1; calibrate or set it first")
    radius_c = binary_search_iterations(profile.theta) / profile.sigma0**2
    mean_c = 1.0 / (2.0 * profile.sigma1**2)
    check_c = 1.0 / (2.0 * profile.sigma2**2)
    return radius_c + (profile.t_hat + 1) * mean_c + profile.t_hat * check_c


def per_iteration_rdp(profile: MechanismProfile, alpha: float) -> float:
    """Worst-case per-token RDP: radius search + (t_hat+1) means + t_hat checks."""
    if alpha <= 1:
        raise ValueError(f"RDP order must be > 1, got {alpha}")
    return per_iteration_coefficient(profile) * alpha


def per_iteration_curve(profile: MechanismProfile) -> LinearRdpCurve:
    return LinearRdpCurve(per_iteration_coefficient(profile), label="per-token")


def _log_expm1(t: float) -> float:
    """log(e^t - 1), stable for large t; -inf at t == 0."""
    if t <= 0.0:
        if t == 0.0:
            return -math.inf
        raise ValueError("expected a nonnegative RDP value")
    if t > 1e-8:
        return t + math.log1p(-math.exp(-t))
    return math.log(math.expm1(t))


def _logsumexp(terms: list[float]) -> float:
    peak = max(terms)
    if peak == -math.inf:
        return -math.inf
    return peak + math.log(math.fsum(math.exp(t - peak) for t in terms))


def subsample_amplify(curve, ctx: SubsamplingContext, alpha: int) -> float:
    """Amplified RDP of the subsampled mechanism at integer order alpha >= 2.

    Implements the without-replacement bound

        tau'(alpha) <= 1/(alpha-1) * log(1
            + gamma^2 C(alpha,2) min{4(e^{tau(2)} - 1), 2 e^{tau(2)}}
            + sum_{j=3..alpha} gamma^j C(alpha,j) e^{(j-1) tau(j)} * 2)

    where the inner min{2, (e^{tau(inf)} - 1)^j} factors are already
    resolved to 2 because every composed primitive here is Gaussian
    (tau(inf) = inf).  The sum is accumulated in log space.
    """
    if int(alpha) != alpha:
        raise ValueError(f"subsampling amplification needs an integer order, got {alpha}")
    alpha = int(alpha)
    if alpha < 2:
        raise ValueError(f"order must be >= 2, got {alpha}")
    gamma = ctx.gamma
    log_gamma = math.log(gamma)
    tau2 = curve(2)
    pair_term = min(math.log(4.0) + _log_expm1(tau2), math.log(2.0) + tau2)
    terms = [0.0, 2.0 * log_gamma + math.log(math.comb(alpha, 2)) + pair_term]
    for j in range(3, alpha + 1):
        terms.append(
            j * log_gamma
            + math.lgamma(alpha + 1) - math.lgamma(j + 1) - math.lgamma(alpha - j + 1)
            + (j - 1) * curve(j)
            + math.log(2.0)
        )
    if not all(t < math.inf and not math.isnan(t) for t in terms):
        raise AmplificationOverflowError(
            f"amplification bound not representable at alpha={alpha}, gamma={gamma}"
        )
    return _logsumexp(terms) / (alpha - 1)


def compose_iterations(tau_prime_at, t_max: int, alpha: float) -> float:
    """Sequential composition across the t_max token positions."""
    if t_max < 1:
        raise ValueError("t_max must be positive")
    return t_max * tau_prime_at(alpha)


def rdp_to_dp(alpha: float, tau: float, delta: float) -> float:
    """Convert an (alpha, tau)-RDP guarantee to epsilon at the given delta.

    epsilon = tau + log((alpha-1)/alpha) - (log delta + log alpha)/(alpha-1).
    The value may be negative for extreme alpha/delta combinations and is
    returned as-is; callers clamp for reporting.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if alpha <= 1:
        raise ValueError(f"RDP order must be > 1, got {alpha}")
    if tau < 0:
        raise ValueError("RDP value must be nonnegative")
    return tau + math.log((alpha - 1) / alpha) - (math.log(delta) + math.log(alpha)) / (alpha - 1)


def epsilon_at_order(
    profile: MechanismProfile,
    ctx: SubsamplingContext,
    t_max: int,
    delta: float,
    alpha: int,
) -> float:
    """The full pipeline evaluated at a single order."""
    curve = per_iteration_curve(profile)
    amplified = subsample_amplify(curve, ctx, alpha)
    total = compose_iterations(lambda _: amplified, t_max, alpha)
    return rdp_to_dp(alpha, total, delta)


def total_epsilon(
    profile: MechanismProfile,
    ctx: SubsamplingContext,
    t_max: int,
    delta: float,
    alpha_grid: tuple[int, ...] = DEFAULT_ALPHA_GRID,
) -> tuple[float, int]:
    """(epsilon, best order) minimized over the grid; ties go to the smaller order.

    Orders at which the amplification bound overflows are excluded from the
    minimization; if every order overflows the error propagates.
    """
    if not alpha_grid:
        raise ValueError("alpha_grid must be non-empty")
    best_eps = math.inf
    best_alpha = None
    last_error: AmplificationOverflowError | None = None
    for alpha in sorted(alpha_grid):
        try:
            eps = epsilon_at_order(profile, ctx, t_max, delta, alpha)
        except AmplificationOverflowError as err:
            last_error = err
            continue
        if eps < best_eps:
            best_eps = eps
            best_alpha = alpha
    if best_alpha is None:
        raise last_error if last_error is not None else ValueError("empty minimization")
    return best_eps, best_alpha


def calibrate_sigma1(
    target: DpBudget,
    profile: MechanismProfile,
    ctx: SubsamplingContext,
    t_max: int,
    alpha_grid: tuple[int, ...] = DEFAULT_ALPHA_GRID,
) -> float:
    """Solve for the sigma1 whose total epsilon meets the target budget.

    Bisection over sigma1 in CALIBRATION_BRACKET, exploiting that epsilon is
    monotone decreasing in sigma1; converges to relative tolerance
    CALIBRATION_REL_TOL on epsilon.
    """
    lo, hi = CALIBRATION_BRACKET

    def eps_at(s1: float) -> float:
        return total_epsilon(replace(profile, sigma1=s1), ctx, t_max, target.delta, alpha_grid)[0]

    eps_hi = eps_at(lo)   # small sigma1 -> large epsilon
    eps_lo = eps_at(hi)   # large sigma1 -> small epsilon
    if not eps_lo < target.epsilon < eps_hi:
        raise UnachievableBudgetError(
            f"target epsilon {target.epsilon} outside achievable range: "
            f"sigma1={hi} gives {eps_lo:.6g}, sigma1={lo} gives {eps_hi:.6g}"
        )
    tol = CALIBRATION_REL_TOL * target.epsilon
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        eps_mid = eps_at(mid)
        if abs(eps_mid - target.epsilon) <= tol:
            return mid
        if eps_mid > target.epsilon:
            lo = mid
        else:
            hi = mid
    raise UnachievableBudgetError(
        f"calibration did not converge to {target.epsilon} within tolerance"
    )


def matched_baseline_sigma(profile: MechanismProfile) -> float:
    """Noise multiplier granting a single-mean baseline the same per-token curve.

    Both aggregators have linear curves, so matching the coefficient matches
    the entire curve: alpha / (2 sigma^2) = c * alpha  =>  sigma = sqrt(1/(2c)).
    """
    return math.sqrt(1.0 / (2.0 * per_iteration_coefficient(profile)))

"""Reference distributions: chi-squared, chi-bar-squared mixtures, and the
quantile-gap comparator between the fixed and random calibration radii.

The chi-squared CDF is the regularized lower incomplete gamma function; a
zero degree of freedom stands for a point mass at the origin.  Everything
here is stateless and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaincinv, ndtr, ndtri

from .rng import normal_stream


class DomainError(ValueError):
    """Argument outside the mathematical domain of the function."""


class AtomError(ValueError):
    """Quantile level does not exceed the point mass at zero."""


def chi2_cdf(df: int, t: float) -> float:
    """CDF of the chi-squared law with ``df`` degrees of freedom.

    ``df = 0`` is the point mass at zero: the CDF is 1 for ``t >= 0``.
    """
    if df < 0:
        raise DomainError("degrees of freedom must be >= 0")
    if df == 0:
        return 1.0 if t >= 0.0 else 0.0
    if t <= 0.0:
        return 0.0
    return float(gammainc(0.5 * df, 0.5 * t))


def chi2_quantile(df: int, q: float) -> float:
    """Quantile of the chi-squared law with ``df`` degrees of freedom."""
    if df < 0:
        raise DomainError("degrees of freedom must be >= 0")
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {q}")
    if df == 0:
        return 0.0
    return float(2.0 * gammaincinv(0.5 * df, q))


def normal_cdf(x: float) -> float:
    return float(ndtr(x))


def normal_quantile(q: float) -> float:
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {q}")
    return float(ndtri(q))


@dataclass(frozen=True)
class ChiBarMixture:
    """Finite mixture of chi-squared laws indexed by degrees of freedom.

    ``weights[j]`` is the mass on ``j`` degrees of freedom; ``weights[0]``
    contributes a point mass at zero.  Weights must be non-negative and sum
    to one (to 1e-9).
    """

    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d sequence")
        if np.any(w < -1e-12):
            raise ValueError("mixture weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {w.sum()}, expected 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @property
    def zero_mass(self) -> float:
        return self.weights[0]

    @property
    def max_df(self) -> int:
        return len(self.weights) - 1


def chibar_cdf(mix: ChiBarMixture, t: float) -> float:
    return float(sum(w * chi2_cdf(j, t) for j, w in enumerate(mix.weights) if w > 0.0))


def chibar_quantile(mix: ChiBarMixture, q: float, tol: float = 1e-9) -> float:
    """Quantile of a chi-bar-squared mixture by bisection on the CDF.

    Raises
    ------
    AtomError
        If ``q`` does not exceed the point mass at zero (the quantile would
        sit on the atom).
    """
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must be in (0, 1), got {q}")
    if q <= mix.zero_mass:
        raise AtomError(
            f"level {q} does not exceed the mass {mix.zero_mass} at the zero atom"
        )
    hi = 1.0
    while chibar_cdf(mix, hi) < q:
        hi *= 2.0
        if hi > 1e12:  # pragma: no cover - mixture CDFs reach any q < 1 quickly
            raise RuntimeError("failed to bracket the mixture quantile")
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if chibar_cdf(mix, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class QuantileGapReport:
    """Comparison of the fixed full-dimension radius against the random one.

    ``delta`` is the gap between the chi-squared quantiles at ``n`` and ``r``
    degrees of freedom, ``p_exact_mc`` the exact probability that a
    chi-squared with ``n - r`` degrees of freedom exceeds the gap (the event
    that the fixed radius wins), and ``p_approx`` its normal-theory
    approximation ``1 - Phi(z_{1-alpha} * (1 - sqrt(rho)) / sqrt(1 - rho))``
    with ``rho = r / n``.
    """

    n: int
    r: int
    alpha: float
    delta: float
    p_exact_mc: float
    p_approx: float


def quantile_gap_report(
    n: int, r: int, alpha: float, mc_samples: int = 0, seed: int = 0
) -> QuantileGapReport:
    """Quantile-gap comparator between the two calibration radii.

    ``p_exact_mc`` is computed analytically from the chi-squared tail; when
    ``mc_samples > 0`` a Monte-Carlo draw of the same tail probability is
    used purely as a sanity cross-check of the analytic value.
    """
    if not 1 <= r < n:
        raise DomainError(f"need 1 <= r < n, got r={r}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1), got {alpha}")
    delta = chi2_quantile(n, 1.0 - alpha) - chi2_quantile(r, 1.0 - alpha)
    p_exact = 1.0 - chi2_cdf(n - r, delta)
    rho = r / n
    c_rho = 1.0 if rho == 0.0 else (1.0 - math.sqrt(rho)) / math.sqrt(1.0 - rho)
    p_approx = 1.0 - normal_cdf(normal_quantile(1.0 - alpha) * c_rho)
    if mc_samples > 0:
        draws = normal_stream(seed, 0, (mc_samples, n - r))
        tail = float(np.mean(np.sum(draws * draws, axis=1) >= delta))
        se = math.sqrt(max(p_exact * (1.0 - p_exact), 1e-12) / mc_samples)
        if abs(tail - p_exact) > 6.0 * se + 1e-6:
            raise RuntimeError(
                f"Monte-Carlo cross-check disagrees with the analytic tail: "
                f"{tail} vs {p_exact} (n={n}, r={r})"
            )
    return QuantileGapReport(
        n=n, r=r, alpha=alpha, delta=delta, p_exact_mc=p_exact, p_approx=p_approx
    )


def gap_win_probability_c(rho: float) -> float:
    """The shrink factor ``c(rho) = (1 - sqrt(rho)) / sqrt(1 - rho)``."""
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"rho must be in [0, 1), got {rho}")
    if rho == 0.0:
        return 1.0
    return (1.0 - math.sqrt(rho)) / math.sqrt(1.0 - rho)

"""Monte-Carlo calibration of null quantiles and global thresholds.

The null law of a statistic at base point ``x`` is sampled by drawing noise
``eps_i`` from counter-based streams (seed, index) and evaluating the
translated statistic; chunked or multi-process execution therefore cannot
change the values.  Thresholds come from four routes:

* ``origin``      -- quantile at the apex for cone constraints (where the
                     quantile function is maximized),
* ``vertices``    -- maximum quantile over the extreme points of a polytope,
* ``chisq-n``     -- the full-dimension chi-squared bound,
* ``chisq-rank``  -- the design-rank chi-squared bound.

The two-term constrained statistic admits no optimal calibration theory, so
only the chi-squared presets are allowed for it.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Optional, Union

import numpy as np

from .distributions import ChiBarMixture, chi2_cdf, chi2_quantile, normal_cdf, normal_quantile
from .linalg import matrix_rank, nullspace_basis
from .problems import ProblemSpec
from .qp import (
    ActiveSetQp,
    Box,
    ConstraintSet,
    LinearInequality,
    NonNegative,
    PolyhedralCone,
    constraint_rows,
)
from .rng import normal_stream
from .statistics import StatisticWorkspace, TestStatistic, workspace_for

_Z975 = 1.959963984540054


class UnsupportedStatisticError(ValueError):
    """The requested calibration route has no theory for this statistic."""


class UnsupportedConstraintError(ValueError):
    """The requested calibration route does not apply to this constraint set."""


class BracketError(RuntimeError):
    """Root bracketing failed; indicates a parameter-domain bug."""


class SamplingError(RuntimeError):
    """Solver failure inside a sampling loop; carries the sample index."""

    def __init__(self, index: int, original: Exception):
        super().__init__(f"sample {index}: {original}")
        self.index = index
        self.original = original


# --- null sampling -----------------------------------------------------------

def _sample_range(spec: ProblemSpec, stat: TestStatistic, x: np.ndarray,
                  seed: int, lo: int, hi: int) -> np.ndarray:
    ws = StatisticWorkspace(spec)
    n_obs = spec.n_obs
    out = np.empty(hi - lo)
    for i in range(lo, hi):
        eps = normal_stream(seed, i, n_obs)
        try:
            out[i - lo] = ws.translated(stat, x, eps)
        except Exception as exc:  # pragma: no cover - solver failures are rare
            raise SamplingError(i, exc) from exc
    return out


def sample_Zx(spec: ProblemSpec, stat: TestStatistic, x, n: int, seed: int,
              eps_stream=None, workers: Optional[int] = None) -> np.ndarray:
    """``n`` draws of the null statistic at base point ``x``.

    ``eps_stream`` (an ``(n, n_obs)`` array) overrides the noise source; it
    exists for tests that need to force specific noise realizations.
    Results are bit-identical for a given seed regardless of ``workers``.
    """
    x = np.asarray(x, dtype=float)
    ws = workspace_for(spec)
    if ws.has_ineq:
        viol = float(np.max(ws.g_mat @ x - ws.g_rhs))
        if viol > 1e-8:
            raise ValueError(f"base point violates the constraints by {viol:.3e}")
    if eps_stream is not None:
        eps_stream = np.asarray(eps_stream, dtype=float)
        if eps_stream.shape != (n, spec.n_obs):
            raise ValueError("eps_stream must have shape (n, n_obs)")
        out = np.empty(n)
        for i in range(n):
            try:
                out[i] = ws.translated(stat, x, eps_stream[i])
            except Exception as exc:
                raise SamplingError(i, exc) from exc
        return out
    if workers and workers > 1 and n >= 4 * workers:
        chunk = max(1000, -(-n // (workers * 8)))
        ranges = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(_sample_range,
                         *zip(*[(spec, stat, x, seed, lo, hi) for lo, hi in ranges]))
            )
        return np.concatenate(parts)
    return _sample_range(spec, stat, x, seed, 0, n)


def empirical_quantile(samples: np.ndarray, alpha: float) -> tuple:
    """Order-statistic quantile estimate at level ``1 - alpha``.

    Returns ``(value, order_index, stderr)`` where the index is the
    conservative ``ceil((1 - alpha) n)`` (1-based) and the standard error is
    derived from the binomial bracket of order statistics at
    ``index +- z_0.975 sqrt(n alpha (1 - alpha))``.
    """
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.shape[0]
    idx = int(math.ceil((1.0 - alpha) * n))
    idx = min(max(idx, 1), n)
    half = _Z975 * math.sqrt(n * alpha * (1.0 - alpha))
    lo = min(max(int(math.floor(idx - half)), 1), n)
    hi = min(max(int(math.ceil(idx + half)), 1), n)
    stderr = (s[hi - 1] - s[lo - 1]) / (2.0 * _Z975)
    return float(s[idx - 1]), idx, float(stderr)


@dataclass(frozen=True)
class QuantileEstimate:
    """Monte-Carlo quantile with its order-statistic index and stderr."""

    value: float
    alpha: float
    n_samples: int
    order_index: int
    stderr: float
    seed: int


def quantile_at(spec: ProblemSpec, stat: TestStatistic, x, alpha: float,
                n: int, seed: int, workers: Optional[int] = None) -> QuantileEstimate:
    """Null-quantile estimate at base point ``x`` (recommend ``n >= 1000``)."""
    samples = sample_Zx(spec, stat, x, n, seed, workers=workers)
    value, idx, stderr = empirical_quantile(samples, alpha)
    return QuantileEstimate(value=value, alpha=alpha, n_samples=n,
                            order_index=idx, stderr=stderr, seed=seed)


# --- threshold rules ---------------------------------------------------------

class Provenance(Enum):
    CHI_SQ_N = "chisq-n"
    CHI_SQ_RANK = "chisq-rank"
    QUANTILE_AT_ORIGIN = "origin"
    EXTREME_POINT_MAX = "vertices"
    USER_SUPPLIED = "user"


@dataclass(frozen=True)
class GlobalConstant:
    """A single threshold valid for every tested value."""

    delta: float
    provenance: Provenance
    stderr: Optional[float] = None
    n_samples: Optional[int] = None
    budget_exceeded: bool = False

    def delta_at(self, mu) -> float:
        return self.delta


@dataclass
class SlicedCandidateMax:
    """Slice-dependent threshold for one non-negative functional.

    For a single functional under non-negativity the slice maximizer lives
    on the finite candidate set of scaled basis vectors, so the threshold at
    ``mu`` is the largest candidate quantile.  Only ``k = 1`` with
    non-negativity constraints is supported.
    """

    spec: ProblemSpec
    stat: TestStatistic
    alpha: float
    n_samples: int
    seed: int
    _cache: dict = field(default_factory=dict, repr=False)

    def delta_at(self, mu) -> float:
        mu_val = float(np.asarray(mu, dtype=float).reshape(-1)[0])
        key = round(mu_val, 12)
        if key in self._cache:
            return self._cache[key]
        best = 0.0
        for cand in sliced_candidates_k1(self.spec, mu_val):
            est = quantile_at(self.spec, self.stat, cand, self.alpha,
                              self.n_samples, self.seed)
            best = max(best, est.value)
        self._cache[key] = best
        return best


ThresholdRule = Union[GlobalConstant, SlicedCandidateMax]


def is_cone(cs: Optional[ConstraintSet]) -> bool:
    """Whether the constraint set is a closed convex cone containing 0."""
    if cs is None:
        return False
    if isinstance(cs, (NonNegative, PolyhedralCone)):
        return True
    if isinstance(cs, Box):
        lo_ok = np.all((cs.lo == 0.0) | np.isneginf(cs.lo))
        up_ok = np.all((cs.up == 0.0) | np.isposinf(cs.up))
        return bool(lo_ok and up_ok)
    if isinstance(cs, LinearInequality):
        return bool(np.all(cs.b == 0.0))
    return False


def enumerate_vertices(cs: ConstraintSet, budget: int = 100_000):
    """Extreme points of a polyhedron by active-set combinations.

    Lexicographic over row subsets of size ``dim``; at most ``budget``
    candidate bases are examined and the overflow flag reports truncation.
    """
    g, rhs = constraint_rows(cs)
    m, p = g.shape
    if m < p:
        return [], False
    scale = 1.0 + (float(np.max(np.abs(rhs))) if rhs.size else 0.0)
    seen = {}
    examined = 0
    exceeded = False
    for combo in combinations(range(m), p):
        if examined >= budget:
            exceeded = True
            break
        examined += 1
        sub = g[list(combo)]
        x, residual, rank, _ = np.linalg.lstsq(sub, rhs[list(combo)], rcond=None)
        if rank < p:
            continue
        if np.max(np.abs(sub @ x - rhs[list(combo)])) > 1e-9 * scale:
            continue
        if np.max(g @ x - rhs) > 1e-9 * scale:
            continue
        seen[tuple(np.round(x, 9))] = x
    return list(seen.values()), exceeded


def global_threshold(spec: ProblemSpec, stat: TestStatistic, alpha: float,
                     method: str, budget: int = 100_000, n_samples: int = 100_000,
                     seed: int = 0, workers: Optional[int] = None) -> GlobalConstant:
    """Global threshold by the requested calibration route.

    ``origin`` and ``vertices`` are the optimal routes (cones and polytopes
    respectively) and exist only for the ``l1``/``l2u`` statistics; the
    chi-squared presets are valid, conservative fallbacks for everything.
    """
    if method == "chisq-n":
        return GlobalConstant(chi2_quantile(spec.n_obs, 1.0 - alpha), Provenance.CHI_SQ_N)
    if method == "chisq-rank":
        r = matrix_rank(spec.forward)
        return GlobalConstant(chi2_quantile(r, 1.0 - alpha), Provenance.CHI_SQ_RANK)
    if stat is TestStatistic.L2C:
        raise UnsupportedStatisticError(
            "no optimal calibration exists for the constrained two-term statistic; "
            "use the chisq-n or chisq-rank presets"
        )
    if method == "origin":
        if not is_cone(spec.constraints):
            raise UnsupportedConstraintError(
                "origin calibration requires cone constraints"
            )
        est = quantile_at(spec, stat, np.zeros(spec.n_param), alpha, n_samples,
                          seed, workers=workers)
        return GlobalConstant(est.value, Provenance.QUANTILE_AT_ORIGIN,
                              stderr=est.stderr, n_samples=n_samples)
    if method == "vertices":
        if not isinstance(spec.constraints, (LinearInequality, Box)):
            raise UnsupportedConstraintError(
                "vertex calibration requires linear-inequality or box constraints"
            )
        vertices, exceeded = enumerate_vertices(spec.constraints, budget=budget)
        if not vertices:
            raise UnsupportedConstraintError("no vertices found (unbounded polyhedron?)")
        best, best_err = -np.inf, None
        for v in vertices:
            est = quantile_at(spec, stat, v, alpha, n_samples, seed, workers=workers)
            if est.value > best:
                best, best_err = est.value, est.stderr
        return GlobalConstant(best, Provenance.EXTREME_POINT_MAX, stderr=best_err,
                              n_samples=n_samples, budget_exceeded=exceeded)
    raise ValueError(f"unknown calibration method {method!r}")


def sliced_candidates_k1(spec: ProblemSpec, mu: float) -> list:
    """Candidate slice maximizers for one functional under non-negativity.

    These are the scaled basis vectors ``(mu / h_i) e_i`` for coordinates
    with ``mu / h_i > 0``; the zero slice maps to the origin alone.
    """
    if spec.n_func != 1:
        raise UnsupportedConstraintError("sliced candidates require a single functional")
    if not isinstance(spec.constraints, NonNegative):
        raise UnsupportedConstraintError("sliced candidates require non-negativity constraints")
    h = spec.functionals[0]
    p = spec.n_param
    if mu == 0.0:
        return [np.zeros(p)]
    out = []
    for i in range(p):
        if h[i] != 0.0 and mu / h[i] > 0.0:
            e = np.zeros(p)
            e[i] = mu / h[i]
            out.append(e)
    return out


# --- chi-bar-squared weights via conic face sampling --------------------------

@dataclass(frozen=True)
class ChiBarEstimate:
    """Sampled mixture weights with the raw face-dimension counts."""

    mixture: ChiBarMixture
    face_counts: tuple
    n_samples: int
    degenerate: bool = False


def _image_cone_is_zero(spec: ProblemSpec) -> bool:
    """Whether the constrained null-slice cone maps to {0} under the design."""
    from scipy.optimize import linprog

    K, H = spec.forward, spec.functionals
    g, _ = constraint_rows(spec.constraints, dim=spec.n_param)
    p = spec.n_param
    for i in range(K.shape[0]):
        for sgn in (+1.0, -1.0):
            res = linprog(
                -sgn * K[i],
                A_ub=g if g.shape[0] else None,
                b_ub=np.zeros(g.shape[0]) if g.shape[0] else None,
                A_eq=H,
                b_eq=np.zeros(H.shape[0]),
                bounds=[(-1, 1)] * p,
                method="highs",
            )
            if res.success and -res.fun > 1e-9:
                return False
    return True


def estimate_chibar_weights(spec: ProblemSpec, stat: TestStatistic, n: int,
                            seed: int) -> ChiBarEstimate:
    """Estimate the chi-bar-squared mixture of the null law at the cone apex.

    Each noise draw is projected (a QP) onto the image, under the design, of
    the cone of null-slice directions; the dimension of the minimal face
    containing the projection is recorded.  The face-dimension frequencies
    are the mixture weights, shifted into degrees of freedom by the design
    rank for ``l2u`` and by the observation dimension for ``l1``.
    """
    if stat not in (TestStatistic.L1, TestStatistic.L2U):
        raise UnsupportedStatisticError("mixture laws exist only for l1 and l2u")
    if not is_cone(spec.constraints):
        raise UnsupportedConstraintError("chi-bar weights require cone constraints")
    K, H = spec.forward, spec.functionals
    n_obs = spec.n_obs
    r = matrix_rank(K)
    ambient = r if stat is TestStatistic.L2U else n_obs
    g, _ = constraint_rows(spec.constraints, dim=spec.n_param)
    g_norms = np.linalg.norm(g, axis=1) if g.shape[0] else np.zeros(0)
    gn = g / np.where(g_norms > 0, g_norms, 1.0)[:, None] if g.shape[0] else g
    counts = np.zeros(ambient + 1, dtype=int)
    if _image_cone_is_zero(spec):
        counts[0] = n
        weights = np.zeros(ambient + 1)
        weights[ambient] = 1.0
        return ChiBarEstimate(mixture=ChiBarMixture(tuple(weights)),
                              face_counts=tuple(int(c) for c in counts),
                              n_samples=n, degenerate=True)
    solver = ActiveSetQp(K, C=H, G=gn if gn.shape[0] else None)
    zeros_g = np.zeros(gn.shape[0])
    z0 = np.zeros(spec.n_param)
    face_dim_cache: dict = {}
    for i in range(n):
        eps = normal_stream(seed, i, n_obs)
        sol = solver.solve(eps, d=np.zeros(spec.n_func),
                           g=zeros_g if gn.shape[0] else None, x0=z0)
        z = sol.x
        if gn.shape[0]:
            active = tuple(int(j) for j in np.flatnonzero(gn @ z >= -1e-7))
        else:
            active = ()
        j = face_dim_cache.get(active)
        if j is None:
            rows = [H] + ([gn[list(active)]] if active else [])
            basis = nullspace_basis(np.vstack(rows))
            j = matrix_rank(K @ basis) if basis.shape[1] else 0
            face_dim_cache[active] = j
        counts[j] += 1
    weights = np.zeros(ambient + 1)
    for j, c in enumerate(counts):
        if c:
            weights[ambient - j] += c / n
    return ChiBarEstimate(mixture=ChiBarMixture(tuple(weights)),
                          face_counts=tuple(int(c) for c in counts),
                          n_samples=n)


# --- special calibrations ------------------------------------------------------

def lambda2c_1d_threshold(mu: float, sigma: float, alpha: float) -> float:
    """Per-point threshold for the 1-d non-negative constrained two-term test.

    The model is a single non-negative scalar observed with noise standard
    deviation ``sigma``; ``mu`` is the base point.  The threshold is in the
    unit-variance scale of the normalized statistic.  Far from the boundary
    the chi-squared(1) quantile applies; otherwise the threshold is the
    unique non-negative root of

        F(t) = Phi(sqrt(t)) - Phi((-m^2 - t) / (2 m)) - (1 - alpha)

    with ``m = mu / sigma``, found by bisection to 1e-9.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    m = mu / sigma
    target = 1.0 - alpha
    chi1 = chi2_quantile(1, target)
    if target < chi2_cdf(1, m * m):
        return chi1

    def func(t: float) -> float:
        first = normal_cdf(math.sqrt(t)) if t > 0 else 0.5
        second = 0.0 if m == 0.0 else normal_cdf((-m * m - t) / (2.0 * m))
        return first - second - target

    if func(0.0) >= 0.0:
        # the quantile sits on the atom at zero
        return 0.0
    hi = 10.0 * chi1 + m * m
    if func(hi) < 0.0:
        raise BracketError(
            f"no sign change on [0, {hi}] for mu={mu}, sigma={sigma}, alpha={alpha}"
        )
    lo = 0.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if func(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BurrusCheck:
    """Empirical quantile of the constrained two-term null versus chi-squared(1)."""

    empirical: QuantileEstimate
    chi1_quantile: float


def burrus_counterexample_check(M: float, alpha: float, n: int, seed: int,
                                workers: Optional[int] = None) -> BurrusCheck:
    """Sample the constrained two-term null on the 2-d identity instance with
    difference functional and base point ``(0, M)``, and report its empirical
    quantile next to the chi-squared(1) quantile it was conjectured to obey."""
    if M < 0:
        raise ValueError("M must be >= 0")
    spec = ProblemSpec(forward=np.eye(2), functionals=np.array([[1.0, -1.0]]),
                       constraints=NonNegative(2))
    est = quantile_at(spec, TestStatistic.L2C, np.array([0.0, M]), alpha, n, seed,
                      workers=workers)
    return BurrusCheck(empirical=est, chi1_quantile=chi2_quantile(1, 1.0 - alpha))

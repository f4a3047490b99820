"""Confidence-region construction and queries.

A region is the set of functional values whose slice test passes at the
stored threshold.  Membership is one constrained least-squares solve;
per-coordinate intervals come from root-finding on the convex profile
function; two-dimensional areas use polar quadrature against the membership
oracle.  Unbounded interval sides are resolved by recession linear programs
before any bisection starts, so bisection never chases an infinite root.

Region values are immutable; membership queries are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from .calibration import GlobalConstant, Provenance, ThresholdRule, global_threshold
from .distributions import chi2_quantile
from .linalg import as_vector, pseudoinverse, row_null_split, svd_factors
from .problems import ProblemSpec
from .qp import ActiveSetQp, constraint_rows, recession_direction
from .statistics import TestStatistic, workspace_for


class EmptyRegionError(RuntimeError):
    """The region contains no point for this observation."""


class NotTwoDimensionalError(ValueError):
    pass


class InteriorPointOutsideError(ValueError):
    pass


@dataclass(frozen=True)
class RegionSpec:
    """A test-inversion confidence region bound to one observation."""

    spec: ProblemSpec
    stat: TestStatistic
    threshold: ThresholdRule
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", as_vector(self.y))
        if self.y.shape[0] != self.spec.n_obs:
            raise ValueError("observation length differs from forward-model rows")


@dataclass(frozen=True)
class IntervalK:
    """Per-coordinate interval endpoints; entries may be +-inf."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d of equal length")
        finite = np.isfinite(lo) & np.isfinite(hi)
        if np.any(lo[finite] > hi[finite] + 1e-12):
            raise ValueError("interval requires lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, mu, slack: float = 1e-9) -> bool:
        mu = np.asarray(mu, dtype=float)
        return bool(np.all(mu >= self.lo - slack) and np.all(mu <= self.hi + slack))

    def box_area(self) -> float:
        widths = self.hi - self.lo
        return float(np.prod(widths))


def statistic_offset(stat: TestStatistic, spec: ProblemSpec, y: np.ndarray) -> float:
    """The data-dependent term subtracted by each statistic.

    Zero for the one-term statistic, the unconstrained optimum for ``l2u``,
    and the constrained optimum for ``l2c``.
    """
    ws = workspace_for(spec)
    if stat is TestStatistic.L1:
        return 0.0
    if stat is TestStatistic.L2U:
        return ws.unconstrained_min(np.asarray(y, dtype=float))
    if stat is TestStatistic.L2C:
        return ws.constrained_min(np.asarray(y, dtype=float))
    raise TypeError(f"unknown statistic {stat!r}")


def contains(region: RegionSpec, mu, slack: float = 1e-9) -> bool:
    """Whether ``mu`` passes the slice test at the region threshold."""
    mu = np.asarray(mu, dtype=float)
    value = workspace_for(region.spec).statistic(region.stat, mu, region.y)
    return value <= region.threshold.delta_at(mu) + slack


# --- profile function and interval endpoints ----------------------------------

def profile_value(spec: ProblemSpec, direction, phi: float, y) -> float:
    """``min ||K x - y||^2`` over the constraint set sliced at
    ``direction . x = phi`` (infinite when the slice is infeasible)."""
    return workspace_for(spec).profile_min(
        np.asarray(direction, dtype=float), float(phi), np.asarray(y, dtype=float)
    )


def profile_roots(spec: ProblemSpec, y, f_offset: float, delta: float, direction,
                  rel_tol: float = 1e-8) -> tuple:
    """Endpoints of ``{phi : L(phi) <= f_offset + delta}`` for the convex
    profile ``L``.

    Unbounded sides are detected first by recession programs and reported as
    infinities; finite endpoints are located by doubling expansion from the
    profile minimizer followed by bisection to ``rel_tol * max(1, |phi0|)``.

    Raises
    ------
    EmptyRegionError
        If the level set is empty (profile minimum above the target).
    """
    y = as_vector(y)
    h = as_vector(direction)
    target = f_offset + delta
    ws = workspace_for(spec)
    xhat = ws.constrained_minimizer(y)
    phi0 = float(h @ xhat)
    resid = spec.forward @ xhat - y
    l0 = float(resid @ resid)
    if l0 > target + 1e-9 * max(1.0, abs(target)):
        raise EmptyRegionError(
            f"profile minimum {l0:.6g} exceeds the target {target:.6g}"
        )
    tol = rel_tol * max(1.0, abs(phi0))
    up_free = recession_direction(spec.forward, spec.constraints, h, +1).direction_found
    down_free = recession_direction(spec.forward, spec.constraints, h, -1).direction_found

    def endpoint(sign: float) -> float:
        step = 0.5 * max(1.0, abs(phi0))
        inside = phi0
        for _ in range(200):
            probe = inside + sign * step
            if profile_value(spec, h, probe, y) > target:
                outside = probe
                break
            inside = probe
            step *= 2.0
        else:  # pragma: no cover - recession said this side is bounded
            raise RuntimeError("failed to bracket a bounded profile endpoint")
        while abs(outside - inside) > tol:
            mid = 0.5 * (inside + outside)
            if profile_value(spec, h, mid, y) > target:
                outside = mid
            else:
                inside = mid
        return 0.5 * (inside + outside)

    lo = -math.inf if down_free else endpoint(-1.0)
    hi = math.inf if up_free else endpoint(+1.0)
    return lo, hi


def bounding_box(region: RegionSpec) -> IntervalK:
    """Per-coordinate interval hull of the region (its product embedding)."""
    if not isinstance(region.threshold, GlobalConstant):
        raise ValueError("bounding boxes require a global constant threshold")
    f_off = statistic_offset(region.stat, region.spec, region.y)
    delta = region.threshold.delta
    los, his = [], []
    for row in region.spec.functionals:
        lo, hi = profile_roots(region.spec, region.y, f_off, delta, row)
        los.append(lo)
        his.append(hi)
    return IntervalK(lo=np.array(los), hi=np.array(his))


# --- coordinate-wise boundedness ----------------------------------------------

class BoundClass(Enum):
    """Interval shape of one coordinate of the compatibility region."""

    FINITE = "finite"
    UNBOUNDED_BELOW = "unbounded-below"   # (-inf, U]
    UNBOUNDED_ABOVE = "unbounded-above"   # [L, +inf)
    UNBOUNDED_BOTH = "unbounded-both"     # (-inf, +inf)


def boundedness_report(spec: ProblemSpec) -> list:
    """Classify every functional by recession-direction searches.

    A direction in the kernel of the design that stays in the constraint
    recession cone and moves the functional makes that side infinite; the
    classification needs two linear programs per row.
    """
    out = []
    for row in spec.functionals:
        up = recession_direction(spec.forward, spec.constraints, row, +1).direction_found
        down = recession_direction(spec.forward, spec.constraints, row, -1).direction_found
        if up and down:
            out.append(BoundClass.UNBOUNDED_BOTH)
        elif up:
            out.append(BoundClass.UNBOUNDED_ABOVE)
        elif down:
            out.append(BoundClass.UNBOUNDED_BELOW)
        else:
            out.append(BoundClass.FINITE)
    return out


# --- split regions (row-space ellipsoid + nullspace residual set) -------------

@dataclass
class SplitRegion:
    """Minkowski sum of a row-space ellipsoid and a nullspace region.

    The ellipsoid covers the observable part of the functionals at level
    ``1 - alpha1`` (pseudoinverse metric when its covariance is singular,
    with membership restricted to the covariance range); the nullspace part
    is a one-term region over the complement at level ``1 - alpha2``.
    """

    parallel_center: np.ndarray
    sigma_parallel: np.ndarray
    sigma_range: np.ndarray      # orthonormal columns spanning range(sigma)
    sigma_null: np.ndarray       # orthonormal columns spanning ker(sigma)
    whitener: np.ndarray         # rows map range(sigma) to unit covariance
    radius2: float
    alpha1: float
    perp: RegionSpec
    alpha2: float
    _solver_cache: dict = field(default_factory=dict, repr=False)

    @property
    def alpha(self) -> float:
        return self.alpha1 + self.alpha2


def _sigma_decomposition(sigma: np.ndarray):
    f = svd_factors(sigma)
    r = f.rank
    rng_basis = f.u[:, :r]
    null_basis = f.u[:, r:]
    whitener = (f.u[:, :r] / np.sqrt(f.singular_values[:r])).T
    return rng_basis, null_basis, whitener, r


def split_region_build(spec: ProblemSpec, y, alpha1: float, alpha2: float,
                       perp_threshold_method: str = "chisq-n",
                       n_samples: int = 100_000, seed: int = 0,
                       workers: Optional[int] = None,
                       solver_cache: Optional[dict] = None,
                       perp_rule: Optional[GlobalConstant] = None) -> SplitRegion:
    """Build the split region for one observation.

    ``perp_threshold_method`` selects the nullspace-part constant:
    ``"chisq-n"`` (the conservative full-dimension bound) or ``"origin"``
    (the Monte-Carlo quantile at the cone apex).  A precomputed
    ``perp_rule`` overrides the method (callers building many regions
    calibrate once and pass it in).
    """
    if not 0.0 < alpha1 + alpha2 < 1.0:
        raise ValueError("alpha1 + alpha2 must lie in (0, 1)")
    y = as_vector(y)
    split = row_null_split(spec.forward, spec.functionals)
    center = spec.functionals @ pseudoinverse(spec.forward) @ y
    rng_basis, null_basis, whitener, rank = _sigma_decomposition(split.sigma_parallel)
    radius2 = chi2_quantile(rank, 1.0 - alpha1) if rank > 0 else 0.0
    perp_spec = ProblemSpec(forward=spec.forward, functionals=split.h_perp,
                            constraints=spec.constraints)
    if perp_rule is not None:
        rule = perp_rule
    elif perp_threshold_method == "chisq-n":
        rule = GlobalConstant(chi2_quantile(spec.n_obs, 1.0 - alpha2), Provenance.CHI_SQ_N)
    elif perp_threshold_method == "origin":
        rule = global_threshold(perp_spec, TestStatistic.L1, alpha2, "origin",
                                n_samples=n_samples, seed=seed, workers=workers)
    else:
        raise ValueError(f"unknown perp threshold method {perp_threshold_method!r}")
    return SplitRegion(
        parallel_center=center,
        sigma_parallel=split.sigma_parallel,
        sigma_range=rng_basis,
        sigma_null=null_basis,
        whitener=whitener,
        radius2=radius2,
        alpha1=alpha1,
        perp=RegionSpec(spec=perp_spec, stat=TestStatistic.L1, threshold=rule, y=y),
        alpha2=alpha2,
        _solver_cache=solver_cache if solver_cache is not None else {},
    )


_SPLIT_GRID = 129


def split_contains(split: SplitRegion, mu) -> bool:
    """Membership in the Minkowski sum via its joint feasibility program.

    Feasibility of two convex quadratic constraints over the parameter
    polyhedron is decided through the concave dual scan
    ``max over lam of min over x of (1-lam)(f - a) + lam (g - b)``:
    the sum is nonempty at ``mu`` exactly when the maximum is nonpositive.
    The maximum over ``lam`` is located by ternary search on a fixed grid
    and each inner minimization is a constrained least-squares solve whose
    matrices depend only on ``lam``, so solvers are cached across calls.
    """
    mu = as_vector(mu)
    perp = split.perp
    spec = perp.spec
    y = perp.y
    delta_perp = perp.threshold.delta_at(mu)
    h_perp = spec.functionals
    target = mu - split.parallel_center
    # component outside the ellipsoid's covariance range must vanish
    lin_c = split.sigma_null.T @ h_perp if split.sigma_null.shape[1] else None
    lin_d = split.sigma_null.T @ target if split.sigma_null.shape[1] else None
    w_h = split.whitener @ h_perp
    w_t = split.whitener @ target
    g_mat, g_rhs = constraint_rows(spec.constraints, dim=spec.n_param)
    scale = 1e-9 * (1.0 + abs(delta_perp) + abs(split.radius2))

    evaluated: dict = {}

    def phi(idx: int) -> float:
        got = evaluated.get(idx)
        if got is not None:
            return got
        lam = idx / (_SPLIT_GRID - 1)
        solver = split._solver_cache.get(idx)
        if solver is None:
            rows = []
            if lam < 1.0:
                rows.append(math.sqrt(1.0 - lam) * spec.forward)
            if lam > 0.0 and w_h.shape[0]:
                rows.append(math.sqrt(lam) * w_h)
            stacked = np.vstack(rows) if rows else np.zeros((0, spec.n_param))
            solver = ActiveSetQp(
                stacked,
                C=lin_c,
                G=g_mat if g_mat.size else None,
            )
            split._solver_cache[idx] = solver
        rhs_parts = []
        if lam < 1.0:
            rhs_parts.append(math.sqrt(1.0 - lam) * y)
        if lam > 0.0 and w_h.shape[0]:
            rhs_parts.append(math.sqrt(lam) * w_t)
        rhs = np.concatenate(rhs_parts) if rhs_parts else np.zeros(0)
        sol = solver.solve(rhs, d=lin_d, g=g_rhs if g_mat.size else None)
        if sol.x is None:
            value = math.inf   # range condition unsatisfiable: outside
        else:
            value = sol.objective - ((1.0 - lam) * delta_perp + lam * split.radius2)
        evaluated[idx] = value
        return value

    if phi(0) > scale or phi(_SPLIT_GRID - 1) > scale:
        return False
    lo, hi = 0, _SPLIT_GRID - 1
    while hi - lo > 2:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if phi(m1) < phi(m2):
            lo = m1
        else:
            hi = m2
    best = max(phi(i) for i in range(lo, hi + 1))
    return best <= scale


# --- polar quadrature -----------------------------------------------------------

def _ray_radius(contains_fn: Callable, center: np.ndarray, u: np.ndarray,
                r_tol: float, r_init: float = 1.0) -> float:
    r_out = r_init
    r_in = 0.0
    for _ in range(80):
        if contains_fn(center + r_out * u):
            r_in = r_out
            r_out *= 2.0
        else:
            break
    else:
        raise RuntimeError("ray never left the region; is it bounded?")
    while r_out - r_in > r_tol:
        mid = 0.5 * (r_in + r_out)
        if contains_fn(center + mid * u):
            r_in = mid
        else:
            r_out = mid
    return 0.5 * (r_in + r_out)


def area_2d(contains_fn: Callable, interior_point, n_angles: int = 720,
            r_tol: float = 1e-6) -> float:
    """Area of a convex bounded planar region by polar quadrature.

    Shoots ``n_angles`` equally spaced rays from the interior point, finds
    each boundary radius by doubling expansion plus bisection to ``r_tol``,
    and sums the sector areas ``r^2 dtheta / 2``.
    """
    center = as_vector(interior_point)
    if center.shape[0] != 2:
        raise NotTwoDimensionalError("polar quadrature needs a planar region")
    if not contains_fn(center):
        raise InteriorPointOutsideError("quadrature center is outside the region")
    dtheta = 2.0 * math.pi / n_angles
    total = 0.0
    for i in range(n_angles):
        theta = i * dtheta
        u = np.array([math.cos(theta), math.sin(theta)])
        r = _ray_radius(contains_fn, center, u, r_tol)
        total += 0.5 * r * r * dtheta
    return total


def boundary_polyline(contains_fn: Callable, interior_point, n_angles: int = 720,
                      r_tol: float = 1e-6) -> np.ndarray:
    """Boundary points ``(theta, r, mu1, mu2)`` from the same ray machinery."""
    center = as_vector(interior_point)
    if center.shape[0] != 2:
        raise NotTwoDimensionalError("boundary tracing needs a planar region")
    if not contains_fn(center):
        raise InteriorPointOutsideError("trace center is outside the region")
    dtheta = 2.0 * math.pi / n_angles
    rows = np.empty((n_angles, 4))
    for i in range(n_angles):
        theta = i * dtheta
        u = np.array([math.cos(theta), math.sin(theta)])
        r = _ray_radius(contains_fn, center, u, r_tol)
        rows[i] = (theta, r, center[0] + r * u[0], center[1] + r * u[1])
    return rows


def region_interior_point(region: RegionSpec) -> np.ndarray:
    """An interior point of a nonempty region: the functional image of the
    constrained least-squares minimizer (which attains the statistic's
    minimum over all tested values).

    Raises
    ------
    EmptyRegionError
        If even that point fails the membership test.
    """
    ws = workspace_for(region.spec)
    xhat = ws.constrained_minimizer(region.y)
    mu0 = region.spec.functionals @ xhat
    if not contains(region, mu0):
        raise EmptyRegionError("region is empty for this observation")
    return mu0


def region_area(region: RegionSpec, n_angles: int = 720, r_tol: float = 1e-6) -> float:
    """Polar-quadrature area of a two-dimensional region."""
    if region.spec.n_func != 2:
        raise NotTwoDimensionalError("area is defined for two functionals")
    mu0 = region_interior_point(region)
    return area_2d(lambda mu: contains(region, mu), mu0, n_angles=n_angles, r_tol=r_tol)

"""Dimension reductions for full-column-rank (or row-space-compatible)
designs.

Each functional row is split into non-negative parts that live in the design
row space; plugging in the least-squares estimates of those parts yields a
small canonical problem (identity design, correlated noise, non-negative
parameters) whose thresholds are cheap to calibrate.  Constraint information
is deliberately weakened in the forward direction only: every parameter
satisfying the original constraints maps into the reduced constraint set.

A separate path handles box constraints through an affine normalization and
a fixed six-variable reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .calibration import GlobalConstant, Provenance, quantile_at
from .distributions import chi2_quantile
from .linalg import as_matrix, as_vector, in_row_space, pseudoinverse
from .problems import ProblemSpec
from .qp import Box, NonNegative, feasibility_lp
from .regions import IntervalK, RegionSpec, bounding_box
from .statistics import TestStatistic


class NotApplicableError(ValueError):
    """The reduction's row-space split does not exist for some functional."""


_SIGMA_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class TfmRowReport:
    """Whether one functional row admits a non-negative row-space split."""

    applicable: bool
    h_plus: Optional[np.ndarray] = None
    h_minus: Optional[np.ndarray] = None


def _componentwise_split(h: np.ndarray):
    return np.maximum(h, 0.0), np.maximum(-h, 0.0)


def tfm_applicable(k, h) -> list:
    """Per-row applicability of the reduction.

    A row qualifies when it can be written as a difference of two
    non-negative vectors in the design row space.  The componentwise split
    is tried first; otherwise a linear feasibility program searches for any
    valid split.
    """
    K = as_matrix(k)
    H = as_matrix(h)
    out = []
    for row in H:
        hp, hm = _componentwise_split(row)
        if in_row_space(hp, K) and in_row_space(hm, K):
            out.append(TfmRowReport(applicable=True, h_plus=hp, h_minus=hm))
            continue
        n = K.shape[0]
        # find v1, v2 with (v1 - v2)^T K = h, v1^T K >= 0, v2^T K >= 0
        a_eq = np.hstack([K.T, -K.T])
        a_ub = np.vstack([
            np.hstack([-K.T, np.zeros((K.shape[1], n))]),
            np.hstack([np.zeros((K.shape[1], n)), -K.T]),
        ])
        res = feasibility_lp(a_eq=a_eq, b_eq=row, a_ub=a_ub, b_ub=np.zeros(2 * K.shape[1]))
        if res.feasible:
            v1, v2 = res.witness[:n], res.witness[n:]
            out.append(TfmRowReport(applicable=True, h_plus=K.T @ v1, h_minus=K.T @ v2))
        else:
            out.append(TfmRowReport(applicable=False))
    return out


@dataclass(frozen=True)
class TfmReduced:
    """The canonical reduced problem.

    The reduced model is ``y_r = x_r + noise`` with ``noise ~ N(0, sigma)``
    and ``x_r >= 0``; ``tilde_k`` is therefore the identity.  ``tilde_h``
    recovers the original functionals: a ``(1, -1)`` block for each
    sign-split row followed by identity rows for the non-negative ones.
    ``y_map`` sends an observation to ``y_r``; ``row_order``/``row_signs``
    map reduced functional rows back to the original rows (a ``-1`` sign
    marks a row that was flipped to make it non-negative).
    """

    tilde_k: np.ndarray
    tilde_h: np.ndarray
    sigma: np.ndarray
    y_map: np.ndarray
    constraints: NonNegative
    expanded: tuple          # the split vectors, in reduced-coordinate order
    n_pairs: int             # number of sign-split rows (leading pairs)
    row_order: tuple         # reduced row index -> original row index
    row_signs: tuple

    @property
    def dim(self) -> int:
        return self.tilde_k.shape[1]

    def reduce_parameter(self, x) -> np.ndarray:
        """Image of an original parameter in reduced coordinates."""
        x = as_vector(x)
        return np.array([h @ x for h in self.expanded])

    def reduce_observation(self, y) -> np.ndarray:
        return self.y_map @ as_vector(y)

    def to_original_rows(self, values) -> np.ndarray:
        """Map reduced-row functional values back to the original row order
        (undoing the pairs-first sort and any sign flips)."""
        values = as_vector(values)
        out = np.empty_like(values)
        for j, (orig, sign) in enumerate(zip(self.row_order, self.row_signs)):
            out[orig] = sign * values[j]
        return out


def tfm_reduce(k, h, split_choices: Optional[list] = None) -> TfmReduced:
    """Build the reduced problem, sign-split pairs first.

    ``split_choices`` optionally supplies ``(h_plus, h_minus)`` per row
    (``None`` entries fall back to the default split).  Rows that are
    entirely non-positive are flipped and the sign recorded.
    """
    K = as_matrix(k)
    H = as_matrix(h)
    reports = tfm_applicable(K, H)
    splits = []
    for i, (row, rep) in enumerate(zip(H, reports)):
        chosen = split_choices[i] if split_choices and split_choices[i] is not None else None
        if chosen is not None:
            hp, hm = as_vector(chosen[0]), as_vector(chosen[1])
            if np.linalg.norm(hp - hm - row) > 1e-8 * max(1.0, np.linalg.norm(row)):
                raise NotApplicableError(f"supplied split for row {i} does not reproduce it")
            if np.any(hp < -1e-12) or np.any(hm < -1e-12):
                raise NotApplicableError(f"supplied split for row {i} has negative parts")
            if not (in_row_space(hp, K) and in_row_space(hm, K)):
                raise NotApplicableError(f"supplied split for row {i} leaves the row space")
        elif rep.applicable:
            hp, hm = rep.h_plus, rep.h_minus
        else:
            raise NotApplicableError(f"row {i} admits no non-negative row-space split")
        splits.append((hp, hm))

    scale = [max(np.linalg.norm(hp), np.linalg.norm(hm), 1e-300) for hp, hm in splits]
    pair_rows = [i for i, (hp, hm) in enumerate(splits)
                 if np.linalg.norm(hm) > 1e-12 * scale[i] and np.linalg.norm(hp) > 1e-12 * scale[i]]
    single_rows = [i for i in range(H.shape[0]) if i not in pair_rows]

    expanded: list = []
    row_order: list = []
    row_signs: list = []
    for i in pair_rows:
        hp, hm = splits[i]
        expanded.extend([hp, hm])
        row_order.append(i)
        row_signs.append(1)
    for i in single_rows:
        hp, hm = splits[i]
        if np.linalg.norm(hp) > 1e-12 * scale[i]:
            expanded.append(hp)
            row_signs.append(1)
        else:
            expanded.append(hm)   # non-positive row: represent -h, flip back later
            row_signs.append(-1)
        row_order.append(i)

    k1, k2 = len(pair_rows), len(single_rows)
    d = 2 * k1 + k2
    tilde_h = np.zeros((k1 + k2, d))
    for j in range(k1):
        tilde_h[j, 2 * j] = 1.0
        tilde_h[j, 2 * j + 1] = -1.0
    for j in range(k2):
        tilde_h[k1 + j, 2 * k1 + j] = 1.0
    kp = pseudoinverse(K)
    gram_pinv = kp @ kp.T   # equals (K^T K)^+
    e = np.array(expanded)
    sigma = e @ gram_pinv @ e.T
    sigma = 0.5 * (sigma + sigma.T)
    y_map = e @ kp
    return TfmReduced(
        tilde_k=np.eye(d),
        tilde_h=tilde_h,
        sigma=sigma,
        y_map=y_map,
        constraints=NonNegative(d),
        expanded=tuple(e),
        n_pairs=k1,
        row_order=tuple(row_order),
        row_signs=tuple(row_signs),
    )


def _pseudo_whitener(sigma: np.ndarray):
    """Rows mapping the covariance range to unit covariance; flags rank loss."""
    sym = 0.5 * (sigma + sigma.T)
    evals, evecs = np.linalg.eigh(sym)
    floor = _SIGMA_EIG_FLOOR * max(float(np.trace(sym)), 1e-300)
    keep = evals > floor
    w = (evecs[:, keep] / np.sqrt(evals[keep])).T
    return w, bool(not np.all(keep))


@dataclass(frozen=True)
class TfmResult:
    """Calibrated reduced-space region with its back-mapping metadata."""

    region: RegionSpec
    interval: Optional[IntervalK]
    delta: float
    row_order: tuple
    row_signs: tuple
    singular_sigma: bool


def tfm_calibrate_and_solve(reduced: TfmReduced, y, alpha: float, seed: int,
                            method: str = "improved", n_samples: int = 100_000,
                            workers: Optional[int] = None) -> TfmResult:
    """Calibrate the reduced problem and solve for the interval/region.

    ``method="improved"`` uses the one-term statistic with its Monte-Carlo
    quantile at the reduced origin (the cone maximizer); ``"original"``
    keeps the historical two-term constrained form with the chi-squared
    preset at the reduced dimension.  Singular reduced covariances switch
    to the pseudoinverse metric and set a flag.
    """
    y_r = reduced.reduce_observation(y)
    w, singular = _pseudo_whitener(reduced.sigma)
    spec_r = ProblemSpec(forward=w, functionals=reduced.tilde_h,
                         constraints=reduced.constraints)
    y_w = w @ y_r
    if method == "improved":
        est = quantile_at(spec_r, TestStatistic.L1, np.zeros(reduced.dim), alpha,
                          n_samples, seed, workers=workers)
        rule = GlobalConstant(est.value, Provenance.QUANTILE_AT_ORIGIN,
                              stderr=est.stderr, n_samples=n_samples)
        stat = TestStatistic.L1
    elif method == "original":
        rule = GlobalConstant(chi2_quantile(w.shape[0], 1.0 - alpha), Provenance.CHI_SQ_N)
        stat = TestStatistic.L2C
    else:
        raise ValueError(f"unknown method {method!r}")
    region = RegionSpec(spec=spec_r, stat=stat, threshold=rule, y=y_w)
    box = bounding_box(region)
    lo = np.where(np.array(reduced.row_signs) > 0, box.lo, -box.hi)
    hi = np.where(np.array(reduced.row_signs) > 0, box.hi, -box.lo)
    order = np.argsort(np.array(reduced.row_order))
    interval = IntervalK(lo=lo[order], hi=hi[order])
    return TfmResult(region=region, interval=interval, delta=rule.delta,
                     row_order=reduced.row_order, row_signs=reduced.row_signs,
                     singular_sigma=singular)


# --- box-constraint normalization and six-variable reduction -------------------

@dataclass(frozen=True)
class BoxTransform:
    """Affine normalization ``z = diag(t) x + offset`` of box constraints.

    Two-sided coordinates land in ``[0, 1]``, one-sided ones become
    non-negative (upper-only bounds are flipped), free coordinates are
    untouched.  ``k_prime`` is the design in ``z`` coordinates and
    ``y_shift`` the additive observation correction (``K' z = K x + y_shift``).
    """

    k_prime: np.ndarray
    t_diag: np.ndarray
    offset: np.ndarray
    y_shift: np.ndarray
    two_sided: tuple
    one_sided: tuple
    free: tuple

    def to_z(self, x) -> np.ndarray:
        return self.t_diag * as_vector(x) + self.offset

    def functional_to_z(self, h) -> np.ndarray:
        """Row ``h'`` with ``h . x = h' . z - h' . offset``."""
        return as_vector(h) / self.t_diag


def box_normalize(k, lo, up) -> BoxTransform:
    K = as_matrix(k)
    lo = np.asarray(lo, dtype=float)
    up = np.asarray(up, dtype=float)
    if np.any(lo > up):
        raise ValueError("box requires lo <= up")
    p = K.shape[1]
    t = np.ones(p)
    off = np.zeros(p)
    two, one, free = [], [], []
    for i in range(p):
        lo_f, up_f = np.isfinite(lo[i]), np.isfinite(up[i])
        if lo_f and up_f:
            width = up[i] - lo[i]
            if width <= 0:
                raise ValueError(f"coordinate {i} has empty or degenerate bounds")
            t[i] = 1.0 / width
            off[i] = -lo[i] / width
            two.append(i)
        elif lo_f:
            off[i] = -lo[i]
            one.append(i)
        elif up_f:
            t[i] = -1.0
            off[i] = up[i]
            one.append(i)
        else:
            free.append(i)
    k_prime = K / t[None, :]
    y_shift = k_prime @ off
    return BoxTransform(k_prime=k_prime, t_diag=t, offset=off, y_shift=y_shift,
                        two_sided=tuple(two), one_sided=tuple(one), free=tuple(free))


_BOX_TILDE_K = np.array([
    [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
])
_BOX_TILDE_H = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0])


@dataclass(frozen=True)
class BoxReduced:
    """Six-variable reduction of a box-constrained single functional.

    Variables are the split functional applied to the two-sided, one-sided,
    and free coordinate groups; the two-sided sums are bounded by
    ``m_plus`` / ``m_minus``.  ``candidates`` lists the four base points
    whose quantiles calibrate the threshold (free/one-sided entries pinned
    at zero, where the law does not depend on them).
    """

    k_tilde: np.ndarray
    h_tilde: np.ndarray
    sigma: np.ndarray
    y_map: np.ndarray
    y_shift: np.ndarray
    constraints: Box
    m_plus: float
    m_minus: float
    candidates: tuple
    functional_offset: float

    @property
    def dim(self) -> int:
        return 6


def box_reduce_k1(transform: BoxTransform, h) -> BoxReduced:
    """Reduce one functional over normalized box constraints to six variables."""
    h = as_vector(h)
    kp = transform.k_prime
    h_z = transform.functional_to_z(h)
    hp, hm = _componentwise_split(h_z)
    if not (in_row_space(hp, kp) and in_row_space(hm, kp)):
        raise NotApplicableError(
            "functional split leaves the design row space; the box reduction "
            "needs full column rank or row-space-compatible parts"
        )
    m_plus = float(np.sum(hp[list(transform.two_sided)])) if transform.two_sided else 0.0
    m_minus = float(np.sum(hm[list(transform.two_sided)])) if transform.two_sided else 0.0
    kpp = pseudoinverse(kp)
    gram_pinv = kpp @ kpp.T
    e = np.array([hp, hm])
    sigma = e @ gram_pinv @ e.T
    sigma = 0.5 * (sigma + sigma.T)
    y_map = e @ kpp
    lo = np.array([0.0, 0.0, -np.inf, 0.0, 0.0, -np.inf])
    up = np.array([m_plus, np.inf, np.inf, m_minus, np.inf, np.inf])
    cands = (
        np.zeros(6),
        np.array([m_plus, 0, 0, 0, 0, 0.0]),
        np.array([0, 0, 0, m_minus, 0, 0.0]),
        np.array([m_plus, 0, 0, m_minus, 0, 0.0]),
    )
    return BoxReduced(
        k_tilde=_BOX_TILDE_K.copy(),
        h_tilde=_BOX_TILDE_H.copy(),
        sigma=sigma,
        y_map=y_map,
        y_shift=transform.y_shift.copy(),
        constraints=Box(lo=lo, up=up),
        m_plus=m_plus,
        m_minus=m_minus,
        candidates=cands,
        functional_offset=float(h_z @ transform.offset),
    )


@dataclass(frozen=True)
class BoxResult:
    interval: IntervalK
    region: RegionSpec
    delta: float
    singular_sigma: bool


def box_calibrate_and_solve(reduced: BoxReduced, y, alpha: float, seed: int,
                            n_samples: int = 50_000,
                            workers: Optional[int] = None) -> BoxResult:
    """Calibrate over the four candidate base points and solve the interval.

    The threshold is the largest Monte-Carlo quantile of the one-term
    statistic over the candidates; the returned interval is for the original
    functional (the affine normalization offset is undone).
    """
    y_r = reduced.y_map @ (as_vector(y) + reduced.y_shift)
    w, singular = _pseudo_whitener(reduced.sigma)
    spec_r = ProblemSpec(forward=w @ reduced.k_tilde,
                         functionals=reduced.h_tilde[None, :],
                         constraints=reduced.constraints)
    best = -math.inf
    best_err = None
    for i, cand in enumerate(reduced.candidates):
        est = quantile_at(spec_r, TestStatistic.L1, cand, alpha, n_samples,
                          seed + i, workers=workers)
        if est.value > best:
            best, best_err = est.value, est.stderr
    rule = GlobalConstant(best, Provenance.EXTREME_POINT_MAX, stderr=best_err,
                          n_samples=n_samples)
    region = RegionSpec(spec=spec_r, stat=TestStatistic.L1, threshold=rule, y=w @ y_r)
    box = bounding_box(region)
    interval = IntervalK(lo=box.lo - reduced.functional_offset,
                         hi=box.hi - reduced.functional_offset)
    return BoxResult(interval=interval, region=region, delta=best,
                     singular_sigma=singular)

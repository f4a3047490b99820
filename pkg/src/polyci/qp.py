"""Constrained least-squares solver and linear-programming helpers.

The central problem shape is

    minimize    || K x - y ||^2
    subject to  C x = d            (equality slice, optional)
                G x <= g           (polyhedral constraints, optional)

solved by a primal active-set method.  Problem matrices are fixed per solver
instance while right-hand sides vary, which is exactly the access pattern of
Monte-Carlo calibration: the solver therefore caches the factorization
(nullspace basis, pseudoinverses) of every working set it visits, making
repeated solves a handful of small mat-vecs.

Infeasibility is certified by an explicit phase-1 linear program (total
constraint violation minimized with HiGHS) rather than by heuristics.

Solver instances hold a mutable factorization cache and are single-threaded;
distinct instances may run concurrently.  Problems and solutions are
immutable values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from scipy.optimize import linprog

from .linalg import as_matrix, as_vector, matrix_to_json, svd_factors


class Status(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class DimensionMismatchError(ValueError):
    """Problem pieces have inconsistent shapes."""


class IterationLimitError(RuntimeError):
    """Active-set iteration cap hit; carries the best iterate found."""

    def __init__(self, message: str, best: Optional["QpSolution"] = None):
        super().__init__(message)
        self.best = best


# --- constraint sets ---------------------------------------------------------

@dataclass(frozen=True)
class NonNegative:
    """The non-negative orthant ``x >= 0`` in ``dim`` variables."""

    dim: int


@dataclass(frozen=True)
class LinearInequality:
    """General linear constraints ``A x <= b``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", as_matrix(self.a))
        object.__setattr__(self, "b", as_vector(self.b))
        if self.a.shape[0] != self.b.shape[0]:
            raise DimensionMismatchError("row counts of a and b differ")


@dataclass(frozen=True)
class Box:
    """Componentwise bounds ``lo <= x <= up``; entries may be +-inf."""

    lo: np.ndarray
    up: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        up = np.asarray(self.up, dtype=float)
        if lo.shape != up.shape or lo.ndim != 1:
            raise DimensionMismatchError("lo and up must be 1-d of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > up):
            raise ValueError("box requires lo <= up componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "up", up)


@dataclass(frozen=True)
class PolyhedralCone:
    """The homogeneous cone ``{x : A x <= 0}``."""

    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", as_matrix(self.a))


ConstraintSet = Union[NonNegative, LinearInequality, Box, PolyhedralCone]


def constraint_dim(cs: ConstraintSet) -> int:
    if isinstance(cs, NonNegative):
        return cs.dim
    if isinstance(cs, LinearInequality):
        return cs.a.shape[1]
    if isinstance(cs, Box):
        return cs.lo.shape[0]
    if isinstance(cs, PolyhedralCone):
        return cs.a.shape[1]
    raise TypeError(f"unknown constraint set {type(cs)!r}")


def constraint_rows(cs: Optional[ConstraintSet], dim: Optional[int] = None):
    """Normalize a constraint set to ``(G, g)`` with meaning ``G x <= g``.

    Infinite box endpoints contribute no rows.  ``None`` yields zero rows.
    """
    if cs is None:
        if dim is None:
            raise ValueError("dim is required when no constraint set is given")
        return np.zeros((0, dim)), np.zeros(0)
    p = constraint_dim(cs)
    if isinstance(cs, NonNegative):
        return -np.eye(p), np.zeros(p)
    if isinstance(cs, LinearInequality):
        return cs.a.copy(), cs.b.copy()
    if isinstance(cs, Box):
        rows, rhs = [], []
        for i in range(p):
            if np.isfinite(cs.lo[i]):
                e = np.zeros(p)
                e[i] = -1.0
                rows.append(e)
                rhs.append(-cs.lo[i])
            if np.isfinite(cs.up[i]):
                e = np.zeros(p)
                e[i] = 1.0
                rows.append(e)
                rhs.append(cs.up[i])
        if not rows:
            return np.zeros((0, p)), np.zeros(0)
        return np.array(rows), np.array(rhs)
    if isinstance(cs, PolyhedralCone):
        return cs.a.copy(), np.zeros(cs.a.shape[0])
    raise TypeError(f"unknown constraint set {type(cs)!r}")


def recession_rows(cs: Optional[ConstraintSet], dim: Optional[int] = None) -> np.ndarray:
    """Rows ``G_rec`` so the recession cone is ``{d : G_rec d <= 0}``."""
    g, _ = constraint_rows(cs, dim)
    return g


def constraint_violation(cs: Optional[ConstraintSet], x) -> float:
    """Largest violation of the constraints at ``x`` (0 when feasible)."""
    if cs is None:
        return 0.0
    g, rhs = constraint_rows(cs)
    if g.shape[0] == 0:
        return 0.0
    return float(max(0.0, np.max(g @ np.asarray(x, dtype=float) - rhs)))


def feasible_point(cs: Optional[ConstraintSet]) -> Optional[np.ndarray]:
    """A cheap witness when one is obvious, otherwise ``None``."""
    if cs is None:
        return None
    if isinstance(cs, (NonNegative, PolyhedralCone)):
        return np.zeros(constraint_dim(cs))
    if isinstance(cs, Box):
        return np.clip(np.zeros(cs.lo.shape[0]), cs.lo, cs.up)
    return None


def translate_constraint(cs: ConstraintSet, x) -> ConstraintSet:
    """The shifted set ``{z : z + x in cs}`` (same rows, moved right-hand side)."""
    x = as_vector(x)
    if isinstance(cs, NonNegative):
        if x.shape[0] != cs.dim:
            raise DimensionMismatchError("shift dimension mismatch")
        return Box(lo=-x, up=np.full(cs.dim, np.inf))
    if isinstance(cs, Box):
        return Box(lo=cs.lo - x, up=cs.up - x)
    if isinstance(cs, LinearInequality):
        return LinearInequality(a=cs.a, b=cs.b - cs.a @ x)
    if isinstance(cs, PolyhedralCone):
        return LinearInequality(a=cs.a, b=-(cs.a @ x))
    raise TypeError(f"unknown constraint set {type(cs)!r}")


def constraints_to_json(cs: Optional[ConstraintSet]) -> Optional[dict]:
    if cs is None:
        return None
    if isinstance(cs, NonNegative):
        return {"type": "nonnegative", "dim": cs.dim}
    if isinstance(cs, LinearInequality):
        return {"type": "linear_inequality", "a": matrix_to_json(cs.a), "b": list(map(float, cs.b))}
    if isinstance(cs, Box):
        def enc(v):
            return [None if not np.isfinite(x) else float(x) for x in v]

        return {"type": "box", "lo": enc(cs.lo), "up": enc(cs.up)}
    if isinstance(cs, PolyhedralCone):
        return {"type": "cone", "a": matrix_to_json(cs.a)}
    raise TypeError(f"unknown constraint set {type(cs)!r}")


def constraints_from_json(obj: Optional[dict]) -> Optional[ConstraintSet]:
    from .linalg import matrix_from_json

    if obj is None:
        return None
    kind = obj["type"]
    if kind == "nonnegative":
        return NonNegative(dim=int(obj["dim"]))
    if kind == "linear_inequality":
        return LinearInequality(a=matrix_from_json(obj["a"]), b=np.asarray(obj["b"], dtype=float))
    if kind == "box":
        def dec(v, sign):
            return np.array([sign * np.inf if x is None else float(x) for x in v])

        return Box(lo=dec(obj["lo"], -1.0), up=dec(obj["up"], +1.0))
    if kind == "cone":
        return PolyhedralCone(a=matrix_from_json(obj["a"]))
    raise ValueError(f"unknown constraint type {kind!r}")


# --- problems and solutions --------------------------------------------------

@dataclass(frozen=True)
class QpProblem:
    """Least-squares problem with an optional equality slice and constraints."""

    K: np.ndarray
    y: np.ndarray
    equality: Optional[tuple] = None  # (H, mu)
    constraints: Optional[ConstraintSet] = None

    def __post_init__(self):
        K = as_matrix(self.K)
        y = as_vector(self.y)
        if K.shape[0] != y.shape[0]:
            raise DimensionMismatchError("K and y row counts differ")
        if self.equality is not None:
            h, mu = self.equality
            h = as_matrix(h)
            mu = as_vector(mu)
            if h.shape[1] != K.shape[1] or h.shape[0] != mu.shape[0]:
                raise DimensionMismatchError("equality slice shapes inconsistent")
            object.__setattr__(self, "equality", (h, mu))
        if self.constraints is not None and constraint_dim(self.constraints) != K.shape[1]:
            raise DimensionMismatchError("constraint dimension differs from variable count")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "y", y)

    def to_json(self) -> dict:
        obj = {
            "K": matrix_to_json(self.K),
            "y": list(map(float, self.y)),
            "constraints": constraints_to_json(self.constraints),
        }
        if self.equality is not None:
            h, mu = self.equality
            obj["equality"] = {"h": matrix_to_json(h), "mu": list(map(float, mu))}
        return obj


@dataclass(frozen=True)
class QpSolution:
    """Solver outcome with KKT residuals.

    ``primal_residual`` is the largest constraint violation, ``dual_residual``
    the stationarity residual of the Lagrangian gradient, ``complementarity``
    the largest ``|multiplier * slack|`` product.  ``active_set`` indexes the
    inequality rows tight at the solution.
    """

    status: Status
    x: Optional[np.ndarray]
    objective: float
    primal_residual: float
    dual_residual: float
    complementarity: float
    active_set: tuple
    iterations: int


_FEAS_TOL = 1e-8
_DUAL_TOL = 1e-9


class ActiveSetQp:
    """Primal active-set solver bound to fixed matrices ``(K, C, G)``.

    Right-hand sides ``(y, d, g)`` vary per :meth:`solve` call.  Working-set
    factorizations are cached, so the amortized cost of a solve inside a
    sampling loop is a few small matrix-vector products.
    """

    def __init__(self, K, C=None, G=None, max_iter: Optional[int] = None, cache_limit: int = 512):
        self.K = np.ascontiguousarray(as_matrix(K))
        p = self.K.shape[1]
        C = np.zeros((0, p)) if C is None else np.ascontiguousarray(as_matrix(C))
        G = np.zeros((0, p)) if G is None else np.ascontiguousarray(as_matrix(G))
        if C.shape[1] != p or G.shape[1] != p:
            raise DimensionMismatchError("constraint matrices do not match variable count")
        # unit-normalize constraint rows so tolerances are scale-free
        c_norms = np.linalg.norm(C, axis=1) if C.shape[0] else np.zeros(0)
        c_norms = np.where(c_norms > 1e-300, c_norms, 1.0)
        self.C = C / c_norms[:, None] if C.shape[0] else C
        self.d_scale = c_norms
        g_norms = np.linalg.norm(G, axis=1) if G.shape[0] else np.zeros(0)
        g_norms = np.where(g_norms > 1e-300, g_norms, 1.0)
        self.G = G / g_norms[:, None] if G.shape[0] else G
        self.g_scale = g_norms
        self.n_eq = self.C.shape[0]
        self.n_ineq = self.G.shape[0]
        self.n_var = p
        # reference scale for rank decisions on products of K with orthonormal
        # bases: singular values below eps * this are cancellation noise
        self.k_scale = float(np.linalg.norm(self.K, 2)) if self.K.size else 0.0
        self.max_iter = max_iter or (60 + 12 * (self.n_ineq + p))
        self._cache: dict = {}
        self._cache_limit = cache_limit
        self._phase1: Optional[ActiveSetQp] = None

    # -- factorizations --------------------------------------------------

    def _factors(self, wkey: tuple):
        fac = self._cache.get(wkey)
        if fac is not None:
            return fac
        rows = [self.C] if self.n_eq else []
        if wkey:
            rows.append(self.G[list(wkey)])
        if rows:
            a = np.vstack(rows)
        else:
            a = np.zeros((0, self.n_var))
        if a.shape[0]:
            # full SVD: the nullspace rows of vt are needed for wide blocks
            u, s, vt = np.linalg.svd(a, full_matrices=True)
            tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
            r = int(np.sum(s > tol))
            pinv_a = (vt[:r].T / s[:r]) @ u[:, :r].T
            z = vt[r:].T.copy()
        else:
            pinv_a = np.zeros((self.n_var, 0))
            z = np.eye(self.n_var)
        kz = self.K @ z
        if kz.size:
            uk, sk, vtk = np.linalg.svd(kz, full_matrices=False)
            ref = max(sk[0] if sk.size else 0.0, self.k_scale)
            tolk = max(kz.shape) * np.finfo(float).eps * ref
            rk = int(np.sum(sk > tolk))
            pinv_kz = (vtk[:rk].T / sk[:rk]) @ uk[:, :rk].T
        else:
            pinv_kz = np.zeros((z.shape[1], self.K.shape[0]))
        nt = np.hstack([self.C.T] + ([self.G[list(wkey)].T] if wkey else [])) if (self.n_eq or wkey) else np.zeros((self.n_var, 0))
        if nt.size:
            fn = svd_factors(nt)
            rn = fn.rank
            pinv_nt = (fn.vt[:rn].T / fn.singular_values[:rn]) @ fn.u[:, :rn].T
        else:
            pinv_nt = np.zeros((0, self.n_var))
        fac = (pinv_a, z, kz, pinv_kz, pinv_nt)
        if len(self._cache) >= self._cache_limit:
            self._cache.pop(next(iter(self._cache)))
        self._cache[wkey] = fac
        return fac

    def _eqls(self, wkey: tuple, y, rhs):
        pinv_a, z, kz, pinv_kz, _ = self._factors(wkey)
        xp = pinv_a @ rhs if rhs.size else np.zeros(self.n_var)
        v = pinv_kz @ (y - self.K @ xp)
        return xp + (z @ v if v.size else 0.0)

    # -- phase 1 ----------------------------------------------------------

    def _phase1_solver(self) -> "ActiveSetQp":
        if self._phase1 is None:
            p, m, ne = self.n_var, self.n_ineq, self.n_eq
            top = np.hstack([self.C, np.zeros((ne, m))]) if ne else np.zeros((0, p + m))
            bottom = np.hstack([self.G, np.eye(m)])
            k1 = np.vstack([top, bottom]) if ne else bottom
            g1 = np.hstack([np.zeros((m, p)), -np.eye(m)])
            self._phase1 = ActiveSetQp(k1, C=None, G=g1)
        return self._phase1

    def _feasible_start(self, d, g):
        """Find a feasible point, or report certified infeasibility."""
        m = self.n_ineq
        y1 = np.concatenate([d, g]) if self.n_eq else g
        s0 = np.maximum(g, 0.0)
        x01 = np.concatenate([np.zeros(self.n_var), s0])
        sol = self._phase1_solver().solve(y1, g=np.zeros(m), x0=x01)
        x = sol.x[: self.n_var]
        eq_viol = float(np.max(np.abs(self.C @ x - d))) if self.n_eq else 0.0
        in_viol = float(max(0.0, np.max(self.G @ x - g))) if m else 0.0
        scale = 1.0 + max(
            float(np.max(np.abs(d))) if d.size else 0.0,
            float(np.max(np.abs(g))) if g.size else 0.0,
        )
        # the residual-norm test also rejects systems that are infeasible by
        # about the tolerance, which no exactly-feasible iterate could serve
        resid_norm = math.sqrt(max(sol.objective, 0.0))
        if max(eq_viol, in_viol, resid_norm) <= _FEAS_TOL * scale:
            return x, None
        # Certify with the phase-1 LP (deterministic total-violation optimum).
        lp_value = self._phase1_lp_value(d, g)
        return None, max(lp_value, eq_viol, in_viol)

    def _phase1_lp_value(self, d, g) -> float:
        p, m, ne = self.n_var, self.n_ineq, self.n_eq
        n_art = m + 2 * ne
        c = np.concatenate([np.zeros(p), np.ones(n_art)])
        a_ub = np.hstack([self.G, -np.eye(m), np.zeros((m, 2 * ne))]) if m else None
        b_ub = g if m else None
        a_eq = np.hstack([self.C, np.zeros((ne, m)), np.eye(ne), -np.eye(ne)]) if ne else None
        b_eq = d if ne else None
        bounds = [(None, None)] * p + [(0, None)] * n_art
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
        if not res.success:  # pragma: no cover - phase-1 LP is always feasible
            raise RuntimeError(f"phase-1 LP failed: {res.message}")
        return float(res.fun)

    # -- main solve -------------------------------------------------------

    def solve(self, y, d=None, g=None, x0=None) -> QpSolution:
        """Solve for the given right-hand sides.

        ``g`` is in the original (unnormalized) row scaling of ``G``.
        ``x0``, when given, must already satisfy the constraints (up to
        ~1e-6); the translated-statistic callers pass the origin.
        """
        y = np.asarray(y, dtype=float)
        d_in = np.zeros(0) if d is None else np.asarray(d, dtype=float)
        if d_in.shape[0] != self.n_eq:
            raise DimensionMismatchError("equality right-hand side has wrong length")
        g_in = np.zeros(0) if g is None else np.asarray(g, dtype=float)
        if g_in.shape[0] != self.n_ineq:
            raise DimensionMismatchError("inequality right-hand side has wrong length")
        d = d_in / self.d_scale if self.n_eq else d_in
        gn = g_in / self.g_scale if self.n_ineq else g_in

        if self.n_ineq == 0:
            return self._solve_equality_only(y, d)

        # Fast path: the slice optimum ignoring inequalities, when feasible.
        x_free = self._eqls((), y, d)
        if self.n_eq:
            eq_resid = float(np.max(np.abs(self.C @ x_free - d)))
            d_ref = 1.0 + (float(np.max(np.abs(d))) if d.size else 0.0)
            if eq_resid > _FEAS_TOL * d_ref:
                lp_value = self._phase1_lp_value(d, gn)
                return QpSolution(Status.INFEASIBLE, None, np.inf, max(eq_resid, lp_value),
                                  0.0, 0.0, (), 0)
        if float(np.max(self.G @ x_free - gn)) <= _FEAS_TOL:
            return self._finalize(y, d, gn, x_free, (), 1)

        if x0 is not None:
            x = np.asarray(x0, dtype=float).copy()
            start_viol = float(max(0.0, np.max(self.G @ x - gn)))
            if self.n_eq and d.size:
                start_viol = max(start_viol, float(np.max(np.abs(self.C @ x - d))))
            if start_viol > 1e-6:
                x = None
        else:
            x = None
        if x is None:
            x, certificate = self._feasible_start(d, gn)
            if x is None:
                return QpSolution(Status.INFEASIBLE, None, np.inf, certificate, 0.0, 0.0, (), 0)

        active_tol = _FEAS_TOL * (1.0 + np.abs(gn))
        w = tuple(int(i) for i in np.flatnonzero(self.G @ x >= gn - active_tol))
        iters = 0
        zero_steps = 0
        zero_step_cap = 2 * (self.n_ineq + self.n_var) + 4
        while iters < self.max_iter:
            iters += 1
            rhs = np.concatenate([d, gn[list(w)]]) if (self.n_eq or w) else np.zeros(0)
            xhat = self._eqls(w, y, rhs)
            slack_hat = gn - self.G @ xhat
            if float(np.min(slack_hat)) >= -_FEAS_TOL:
                x = xhat
                grad = 2.0 * (self.K.T @ (self.K @ x - y))
                if not (self.n_eq or w):
                    return self._finalize(y, d, gn, x, w, iters)
                _, _, _, _, pinv_nt = self._factors(w)
                mult = pinv_nt @ (-grad)
                lam = mult[self.n_eq :]
                tol = _DUAL_TOL * max(1.0, float(np.max(np.abs(grad))) if grad.size else 1.0)
                if lam.size == 0 or float(np.min(lam)) >= -tol:
                    return self._finalize(y, d, gn, x, w, iters, mult)
                drop = int(np.argmin(lam))
                w = tuple(v for j, v in enumerate(w) if j != drop)
                continue
            delta = xhat - x
            gd = self.G @ delta
            slack = gn - self.G @ x
            mask = np.ones(self.n_ineq, dtype=bool)
            if w:
                mask[list(w)] = False
            mask &= gd > 1e-13 * (1.0 + np.abs(gd))
            if not np.any(mask):  # pragma: no cover - numerical corner
                return self._finalize(y, d, gn, x, w, iters)
            ratios = np.full(self.n_ineq, np.inf)
            ratios[mask] = slack[mask] / gd[mask]
            blocking = int(np.argmin(ratios))
            alpha = max(0.0, min(1.0, float(ratios[blocking])))
            if alpha <= 1e-14:
                # degenerate step; cap these to break add/drop cycles that can
                # only arise from tolerance-level infeasibility
                zero_steps += 1
                if zero_steps > zero_step_cap:
                    return self._finalize(y, d, gn, x, w, iters)
            x = x + alpha * delta
            w = tuple(sorted(set(w) | {blocking}))
        best = self._finalize(y, d, gn, x, w, iters)
        raise IterationLimitError(
            f"active-set iteration cap {self.max_iter} reached", best=best
        )

    def _solve_equality_only(self, y, d) -> QpSolution:
        x = self._eqls((), y, d)
        if self.n_eq:
            eq_resid = float(np.max(np.abs(self.C @ x - d)))
            scale = 1.0 + (float(np.max(np.abs(d))) if d.size else 0.0)
            if eq_resid > _FEAS_TOL * scale:
                return QpSolution(Status.INFEASIBLE, None, np.inf, eq_resid, 0.0, 0.0, (), 0)
        return self._finalize(y, d, np.zeros(0), x, (), 1)

    def _finalize(self, y, d, gn, x, w, iters, mult=None) -> QpSolution:
        resid = self.K @ x - y
        objective = float(resid @ resid)
        primal = 0.0
        if self.n_eq:
            primal = float(np.max(np.abs(self.C @ x - d) * self.d_scale))
        if self.n_ineq:
            # violation reported against the original row scaling
            primal = max(primal, float(max(0.0, np.max((self.G @ x - gn) * self.g_scale))))
        grad = 2.0 * (self.K.T @ resid)
        comp = 0.0
        if self.n_eq or w:
            if mult is None:
                _, _, _, _, pinv_nt = self._factors(tuple(w))
                mult = pinv_nt @ (-grad)
            nt_cols = [self.C.T] if self.n_eq else []
            if w:
                nt_cols.append(self.G[list(w)].T)
            nt = np.hstack(nt_cols)
            dual = float(np.max(np.abs(grad + nt @ mult)))
            lam = mult[self.n_eq :]
            if lam.size:
                comp = float(np.max(np.abs(lam * (self.G[list(w)] @ x - gn[list(w)]))))
        else:
            dual = float(np.max(np.abs(grad))) if grad.size else 0.0
        return QpSolution(
            status=Status.OPTIMAL,
            x=x,
            objective=objective,
            primal_residual=primal,
            dual_residual=dual,
            complementarity=comp,
            active_set=tuple(int(i) for i in w),
            iterations=iters,
        )


def solve_ls(problem: QpProblem, dump_path: Optional[str] = None) -> QpSolution:
    """Solve a :class:`QpProblem` (one-shot convenience wrapper).

    Hot loops should hold an :class:`ActiveSetQp` instance instead to reuse
    the factorization cache.  When ``dump_path`` is given the problem is
    serialized there before solving (debugging aid).
    """
    if dump_path is not None:
        with open(dump_path, "w") as fh:
            json.dump(problem.to_json(), fh, indent=2)
    p = problem.K.shape[1]
    g_mat, g_rhs = constraint_rows(problem.constraints, dim=p)
    if problem.equality is not None:
        h, mu = problem.equality
        solver = ActiveSetQp(problem.K, C=h, G=g_mat if g_mat.size else None)
        return solver.solve(problem.y, d=mu, g=g_rhs if g_mat.size else None)
    solver = ActiveSetQp(problem.K, C=None, G=g_mat if g_mat.size else None)
    x0 = feasible_point(problem.constraints)
    if x0 is not None and g_mat.size and np.max(g_mat @ x0 - g_rhs) > 0:
        x0 = None
    return solver.solve(problem.y, g=g_rhs if g_mat.size else None, x0=x0)


def min_unconstrained(K, y) -> float:
    """``min_x ||K x - y||^2`` computed from the column-space projector."""
    f = svd_factors(K)
    u = f.u[:, : f.rank]
    v = as_vector(y)
    proj = u.T @ v
    return float(max(0.0, v @ v - proj @ proj))


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    witness: Optional[np.ndarray]
    phase1_objective: float
    max_violation: float


def feasibility_lp(a_eq=None, b_eq=None, a_ub=None, b_ub=None, bounds=None) -> FeasibilityResult:
    """Linear feasibility with an explicit phase-1 certificate.

    Minimizes the total constraint violation; the system is declared feasible
    when the witness violates nothing by more than 1e-8 (relative), and the
    phase-1 optimum is reported either way.
    """
    a_eq = None if a_eq is None else as_matrix(a_eq)
    a_ub = None if a_ub is None else as_matrix(a_ub)
    ne = 0 if a_eq is None else a_eq.shape[0]
    m = 0 if a_ub is None else a_ub.shape[0]
    if ne == 0 and m == 0:
        raise ValueError("no constraints given")
    p = a_eq.shape[1] if a_eq is not None else a_ub.shape[1]
    b_eq = np.zeros(0) if b_eq is None else as_vector(b_eq)
    b_ub = np.zeros(0) if b_ub is None else as_vector(b_ub)
    n_art = m + 2 * ne
    c = np.concatenate([np.zeros(p), np.ones(n_art)])
    rows_ub = None
    if m:
        rows_ub = np.hstack([a_ub, -np.eye(m), np.zeros((m, 2 * ne))])
    rows_eq = None
    if ne:
        rows_eq = np.hstack([a_eq, np.zeros((ne, m)), np.eye(ne), -np.eye(ne)])
    var_bounds = list(bounds) if bounds is not None else [(None, None)] * p
    var_bounds += [(0, None)] * n_art
    res = linprog(c, A_ub=rows_ub, b_ub=b_ub if m else None,
                  A_eq=rows_eq, b_eq=b_eq if ne else None,
                  bounds=var_bounds, method="highs")
    if not res.success:  # pragma: no cover
        raise RuntimeError(f"phase-1 LP failed: {res.message}")
    x = res.x[:p]
    viol = 0.0
    if m:
        viol = max(viol, float(np.max(a_ub @ x - b_ub)))
    if ne:
        viol = max(viol, float(np.max(np.abs(a_eq @ x - b_eq))))
    if bounds is not None:
        for i, (lo, up) in enumerate(bounds):
            if lo is not None:
                viol = max(viol, float(lo - x[i]))
            if up is not None:
                viol = max(viol, float(x[i] - up))
    scale = 1.0 + max(
        float(np.max(np.abs(b_eq))) if ne else 0.0,
        float(np.max(np.abs(b_ub))) if m else 0.0,
    )
    feasible = viol <= 1e-8 * scale
    return FeasibilityResult(
        feasible=feasible,
        witness=x if feasible else None,
        phase1_objective=float(res.fun),
        max_violation=float(max(viol, 0.0)),
    )


@dataclass(frozen=True)
class RecessionQuery:
    direction_found: bool
    d: Optional[np.ndarray]


def recession_direction(K, constraints: Optional[ConstraintSet], objective, sign: int = +1) -> RecessionQuery:
    """Search for ``d`` with ``K d = 0``, ``d`` in the constraint recession
    cone, and ``sign * objective . d > 0``.

    Existence of such a direction is exactly unboundedness of the functional
    over the compatibility set on that side.  The returned direction is
    normalized to unit sup-norm.
    """
    K = as_matrix(K)
    h = as_vector(objective)
    p = K.shape[1]
    if h.shape[0] != p:
        raise DimensionMismatchError("objective length differs from variable count")
    hn = h / max(np.linalg.norm(h), 1e-300)
    a_eq = np.vstack([K, sign * hn[None, :]])
    b_eq = np.zeros(K.shape[0] + 1)
    b_eq[-1] = 1.0
    g_rec = recession_rows(constraints, dim=p)
    res = linprog(
        np.zeros(p),
        A_ub=g_rec if g_rec.shape[0] else None,
        b_ub=np.zeros(g_rec.shape[0]) if g_rec.shape[0] else None,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(None, None)] * p,
        method="highs",
    )
    if res.status == 2:  # infeasible: no recession direction on this side
        return RecessionQuery(direction_found=False, d=None)
    if not res.success:  # pragma: no cover
        raise RuntimeError(f"recession LP failed: {res.message}")
    d = res.x
    d = d / np.max(np.abs(d))
    return RecessionQuery(direction_found=True, d=d)

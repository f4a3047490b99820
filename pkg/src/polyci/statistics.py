"""Test statistics for slice hypotheses and their noise-space translations.

Three statistics are supported, named by their optimization structure:

* ``l1``   -- the slice optimum alone,
* ``l2u``  -- slice optimum minus the unconstrained optimum,
* ``l2c``  -- slice optimum minus the constrained optimum (a scaled
  log-likelihood-ratio).

A statistic value of ``+inf`` means the slice is infeasible under the
constraints, which rejects the tested value outright.  Negative values can
only arise from roundoff in the difference of two optima; they are clamped
to zero after checking they exceed ``-1e-6``.

All evaluations are pure functions of their inputs.  Per-spec solver
workspaces (factorization caches) are memoized but each call owns its own
right-hand sides, so batches over ``(mu, y, eps)`` parallelize freely across
processes.
"""

from __future__ import annotations

import math
import weakref
from enum import Enum

import numpy as np

from .problems import ProblemSpec
from .qp import ActiveSetQp, Status, constraint_rows
from .linalg import svd_factors


class TestStatistic(Enum):
    __test__ = False  # keep pytest from collecting this as a test class

    L1 = "l1"
    L2U = "l2u"
    L2C = "l2c"


class InfeasibleBasePointError(ValueError):
    """The translation base point violates the constraints."""


class NegativeStatisticError(ArithmeticError):
    """A two-term statistic came out below the roundoff floor."""


_CLAMP_FLOOR = -1e-6


class StatisticWorkspace:
    """Cached solvers and projectors for one problem spec.

    Holds one slice solver (equalities = functional rows) and one
    constrained solver (inequalities only), both with fixed matrices so the
    translated and direct statistic evaluations share factorizations.
    Instances are not thread-safe; use one per worker.
    """

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        K, H = spec.forward, spec.functionals
        g_mat, g_rhs = constraint_rows(spec.constraints, dim=spec.n_param)
        self.g_mat = g_mat
        self.g_rhs = g_rhs
        self.has_ineq = g_mat.shape[0] > 0
        self.slice_solver = ActiveSetQp(K, C=H, G=g_mat if self.has_ineq else None)
        self.constrained_solver = (
            ActiveSetQp(K, C=None, G=g_mat) if self.has_ineq else None
        )
        f = svd_factors(K)
        self._col_basis = f.u[:, : f.rank].copy()
        self.rank = f.rank
        self._last_y_key = None
        self._last_constrained = None
        self._row_solvers: dict = {}

    # -- building blocks ---------------------------------------------------

    def unconstrained_min(self, y: np.ndarray) -> float:
        proj = self._col_basis.T @ y
        return float(max(0.0, y @ y - proj @ proj))

    def constrained_min(self, y: np.ndarray, g_rhs=None, x0=None) -> float:
        """Constrained optimum; one-slot cache keyed by the y buffer."""
        if self.constrained_solver is None:
            return self.unconstrained_min(y)
        rhs = self.g_rhs if g_rhs is None else g_rhs
        key = (y.tobytes(), rhs.tobytes())
        if key == self._last_y_key:
            return self._last_constrained
        sol = self.constrained_solver.solve(y, g=rhs, x0=x0)
        self._last_y_key = key
        self._last_constrained = sol.objective
        return sol.objective

    def slice_min(self, mu: np.ndarray, y: np.ndarray, g_rhs=None, x0=None) -> float:
        sol = self.slice_solver.solve(
            y, d=mu, g=(self.g_rhs if g_rhs is None else g_rhs) if self.has_ineq else None, x0=x0
        )
        if sol.status is Status.INFEASIBLE:
            return math.inf
        return sol.objective

    def constrained_minimizer(self, y: np.ndarray) -> np.ndarray:
        if self.constrained_solver is None:
            # min-norm least squares point
            sol = ActiveSetQp(self.spec.forward).solve(y)
            return sol.x
        return self.constrained_solver.solve(y, g=self.g_rhs).x

    def profile_min(self, row: np.ndarray, phi: float, y: np.ndarray) -> float:
        """Slice optimum for a single functional row at value ``phi``."""
        key = row.tobytes()
        solver = self._row_solvers.get(key)
        if solver is None:
            solver = ActiveSetQp(
                self.spec.forward, C=row[None, :], G=self.g_mat if self.has_ineq else None
            )
            self._row_solvers[key] = solver
        sol = solver.solve(y, d=np.array([phi]), g=self.g_rhs if self.has_ineq else None)
        if sol.status is Status.INFEASIBLE:
            return math.inf
        return sol.objective

    # -- statistics ----------------------------------------------------------

    def statistic(self, stat: TestStatistic, mu: np.ndarray, y: np.ndarray) -> float:
        mu = np.asarray(mu, dtype=float)
        y = np.asarray(y, dtype=float)
        slice_val = self.slice_min(mu, y)
        if math.isinf(slice_val):
            return math.inf
        if stat is TestStatistic.L1:
            return slice_val
        if stat is TestStatistic.L2U:
            return _clamp(slice_val - self.unconstrained_min(y))
        if stat is TestStatistic.L2C:
            return _clamp(slice_val - self.constrained_min(y))
        raise TypeError(f"unknown statistic {stat!r}")

    def translated(self, stat: TestStatistic, x: np.ndarray, eps: np.ndarray) -> float:
        """Statistic under the null at base point ``x``, expressed in noise
        coordinates: the slice passes through the origin and the constraint
        right-hand side is shifted by ``x``."""
        x = np.asarray(x, dtype=float)
        eps = np.asarray(eps, dtype=float)
        zero = np.zeros(self.spec.n_func)
        if self.has_ineq:
            g_shift = self.g_rhs - self.g_mat @ x
            # the origin is feasible because x satisfies the constraints
            slice_val = self.slice_min(zero, eps, g_rhs=g_shift, x0=np.zeros(self.spec.n_param))
        else:
            slice_val = self.slice_min(zero, eps)
        if math.isinf(slice_val):  # pragma: no cover - origin is always feasible
            return math.inf
        if stat is TestStatistic.L1:
            return slice_val
        if stat is TestStatistic.L2U:
            return _clamp(slice_val - self.unconstrained_min(eps))
        if stat is TestStatistic.L2C:
            if self.constrained_solver is None:
                return _clamp(slice_val - self.unconstrained_min(eps))
            return _clamp(
                slice_val
                - self.constrained_min(
                    eps,
                    g_rhs=self.g_rhs - self.g_mat @ x,
                    x0=np.zeros(self.spec.n_param),
                )
            )
        raise TypeError(f"unknown statistic {stat!r}")


def _clamp(value: float) -> float:
    if value < _CLAMP_FLOOR:
        raise NegativeStatisticError(
            f"two-term statistic evaluated to {value}, below the roundoff floor"
        )
    return max(0.0, value)


_workspaces: "weakref.WeakKeyDictionary[ProblemSpec, StatisticWorkspace]" = (
    weakref.WeakKeyDictionary()
)


def workspace_for(spec: ProblemSpec) -> StatisticWorkspace:
    ws = _workspaces.get(spec)
    if ws is None:
        ws = StatisticWorkspace(spec)
        _workspaces[spec] = ws
    return ws


def eval_statistic(stat: TestStatistic, spec: ProblemSpec, mu, y) -> float:
    """Value of the test statistic at ``(mu, y)``; ``+inf`` when the slice is
    infeasible."""
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    if mu.shape[0] != spec.n_func:
        raise ValueError(f"mu has length {mu.shape[0]}, expected {spec.n_func}")
    if y.shape[0] != spec.n_obs:
        raise ValueError(f"y has length {y.shape[0]}, expected {spec.n_obs}")
    return workspace_for(spec).statistic(stat, mu, y)


def eval_translated(stat: TestStatistic, spec: ProblemSpec, x, eps) -> float:
    """Statistic under the null at feasible base point ``x`` with noise
    ``eps``; equals ``eval_statistic(stat, spec, H x, K x + eps)``."""
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    ws = workspace_for(spec)
    if ws.has_ineq:
        viol = float(np.max(ws.g_mat @ x - ws.g_rhs))
        if viol > 1e-8:
            raise InfeasibleBasePointError(
                f"base point violates the constraints by {viol:.3e}"
            )
    return ws.translated(stat, x, eps)

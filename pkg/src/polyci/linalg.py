"""Dense linear-algebra primitives shared by the rest of the package.

Everything operates on plain float ``numpy`` arrays.  Matrices are small and
dense (problem sizes are at most a few hundred rows/columns), so SVD-based
routines are used throughout: they give reliable rank decisions and
pseudoinverses without conditioning surprises.

All functions are pure and the returned arrays are freshly allocated, so
results can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular


class RowSpaceViolationError(ValueError):
    """A requested functional row does not lie in the row space of the design."""


class NotPositiveDefiniteError(ValueError):
    """A covariance matrix expected to be positive definite is not."""


def as_matrix(m) -> np.ndarray:
    """Coerce to a 2-d float array and insist every entry is finite."""
    a = np.asarray_chkfinite(m, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {a.shape}")
    return a


def as_vector(v) -> np.ndarray:
    """Coerce to a 1-d float array and insist every entry is finite."""
    a = np.asarray_chkfinite(v, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-d array, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of a matrix together with the rank decision used downstream.

    ``u`` has orthonormal columns, ``singular_values`` is non-increasing, and
    ``vt`` has orthonormal rows.  ``rank`` counts singular values above
    ``rank_tolerance`` (the standard ``max(n, p) * eps * sigma_max`` cutoff).
    """

    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray
    rank_tolerance: float

    @property
    def rank(self) -> int:
        return int(np.sum(self.singular_values > self.rank_tolerance))


def svd_factors(m) -> SvdFactors:
    a = as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    return SvdFactors(u=u, singular_values=s, vt=vt, rank_tolerance=tol)


def matrix_rank(m) -> int:
    return svd_factors(m).rank


def pseudoinverse(m) -> np.ndarray:
    """Moore-Penrose pseudoinverse with the shared rank cutoff.

    The zero matrix maps to the (transposed) zero matrix; no exceptions are
    raised for rank-deficient input.
    """
    f = svd_factors(m)
    r = f.rank
    if r == 0:
        return np.zeros((m.shape[1], m.shape[0]) if hasattr(m, "shape") else np.transpose(m).shape)
    inv_s = 1.0 / f.singular_values[:r]
    return (f.vt[:r].T * inv_s) @ f.u[:, :r].T


def row_space_projector(m) -> np.ndarray:
    """Orthogonal projector onto the row space of ``m`` (a ``p x p`` matrix).

    Computed from the right singular vectors and explicitly symmetrized, so
    the result is idempotent and symmetric to machine precision.
    """
    f = svd_factors(m)
    v = f.vt[: f.rank].T
    proj = v @ v.T
    return 0.5 * (proj + proj.T)


def column_space_basis(m) -> np.ndarray:
    """Orthonormal basis (columns) of the column space of ``m``."""
    f = svd_factors(m)
    return f.u[:, : f.rank].copy()


def nullspace_basis(m) -> np.ndarray:
    """Orthonormal basis (columns) of the nullspace of ``m``.

    A matrix with zero rows has the full identity as its nullspace basis.
    Uses a full SVD so the basis is complete for wide matrices too.
    """
    a = as_matrix(m)
    if a.shape[0] == 0 or a.size == 0:
        return np.eye(a.shape[1])
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    tol = max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    return vt[r:].T.copy()


def in_row_space(row, m, rel_tol: float = 1e-8) -> bool:
    """Whether ``row`` lies in the row space of ``m``.

    Uses the residual test ``||h - h P|| <= rel_tol * max(1, ||h||)`` where
    ``P`` projects onto the row space.
    """
    h = as_vector(row)
    resid = h - h @ row_space_projector(m)
    return float(np.linalg.norm(resid)) <= rel_tol * max(1.0, float(np.linalg.norm(h)))


def b_matrix(k, h) -> np.ndarray:
    """Matrix ``B`` with ``B^T K = H``, of minimal column variances.

    Parameters
    ----------
    k : array_like, shape (n, p)
        Design/forward matrix.
    h : array_like, shape (q, p)
        Functional rows; every row must lie in the row space of ``k``.

    Returns
    -------
    numpy.ndarray, shape (n, q)

    Raises
    ------
    RowSpaceViolationError
        If some row of ``h`` projects outside the row space of ``k``.
    """
    K = as_matrix(k)
    H = as_matrix(h)
    if H.shape[1] != K.shape[1]:
        raise ValueError("column counts of k and h differ")
    proj = row_space_projector(K)
    for i, row in enumerate(H):
        resid = row - row @ proj
        if np.linalg.norm(resid) > 1e-8 * max(1.0, np.linalg.norm(row)):
            raise RowSpaceViolationError(
                f"row {i} of the functional matrix is outside the design row space "
                f"(residual {np.linalg.norm(resid):.3e})"
            )
    b = pseudoinverse(K).T @ H.T
    err = np.linalg.norm(b.T @ K - H)
    if err > 1e-8 * max(np.linalg.norm(H), 1e-300):
        raise RowSpaceViolationError(f"B^T K = H failed to verify (error {err:.3e})")
    return b


@dataclass(frozen=True)
class SplitMatrices:
    """Decomposition of a functional matrix over the design row space.

    ``projector`` is the orthogonal projector onto the row space,
    ``h_parallel``/``h_perp`` split the functionals into the observable and
    unobservable parts (``h_parallel + h_perp`` is the original matrix), and
    ``sigma_parallel`` is the covariance of the plug-in estimate of the
    observable part.
    """

    projector: np.ndarray
    h_parallel: np.ndarray
    h_perp: np.ndarray
    sigma_parallel: np.ndarray


def row_null_split(k, h) -> SplitMatrices:
    """Split functionals into row-space and nullspace components of ``k``."""
    K = as_matrix(k)
    H = as_matrix(h)
    if H.shape[1] != K.shape[1]:
        raise ValueError("column counts of k and h differ")
    proj = row_space_projector(K)
    h_par = H @ proj
    h_perp = H - h_par
    kp = pseudoinverse(K)
    hkp = H @ kp
    sigma = hkp @ hkp.T
    sigma = 0.5 * (sigma + sigma.T)
    return SplitMatrices(projector=proj, h_parallel=h_par, h_perp=h_perp, sigma_parallel=sigma)


def whiten(k, y, noise_cov) -> tuple[np.ndarray, np.ndarray]:
    """Transform a correlated-noise model to unit covariance.

    Given ``noise_cov = L L^T`` (Cholesky), returns ``(L^-1 K, L^-1 y)`` so
    that downstream code can assume identity noise covariance.

    Raises
    ------
    NotPositiveDefiniteError
        If the Cholesky factorization fails.
    """
    K = as_matrix(k)
    v = as_vector(y)
    cov = as_matrix(noise_cov)
    try:
        chol = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own type
        raise NotPositiveDefiniteError(str(exc)) from exc
    except Exception as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from exc
    return solve_triangular(chol, K, lower=True), solve_triangular(chol, v, lower=True)


# --- JSON / CSV wire formats -------------------------------------------------

def matrix_to_json(m) -> dict:
    """Serialize to ``{"rows": n, "cols": p, "data": [row-major numbers]}``."""
    a = as_matrix(m)
    return {"rows": int(a.shape[0]), "cols": int(a.shape[1]), "data": [float(x) for x in a.ravel()]}


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols = int(obj["rows"]), int(obj["cols"])
    data = np.asarray_chkfinite(obj["data"], dtype=float)
    if data.size != rows * cols:
        raise ValueError(f"matrix payload has {data.size} entries, expected {rows * cols}")
    return data.reshape(rows, cols)


def matrix_from_csv(text: str) -> np.ndarray:
    """Parse a matrix from CSV text, one row per line."""
    rows = []
    for line in text.strip().splitlines():
        line = line.strip()
        if not line:
            continue
        rows.append([float(tok) for tok in line.replace(";", ",").split(",")])
    if not rows:
        raise ValueError("empty CSV matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("ragged CSV matrix")
    return as_matrix(rows)

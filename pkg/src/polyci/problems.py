"""Problem container: forward model, functionals of interest, constraints."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import as_matrix, matrix_from_json, matrix_to_json
from .qp import (
    ConstraintSet,
    constraint_dim,
    constraint_rows,
    constraints_from_json,
    constraints_to_json,
    feasibility_lp,
    feasible_point,
)


class EmptyConstraintSetError(ValueError):
    """The constraint set admits no feasible parameter."""


@dataclass(eq=False)
class ProblemSpec:
    """A constrained linear inverse problem with functionals of interest.

    ``forward`` maps parameters to (whitened) observations, ``functionals``
    stacks the rows whose values are to be covered, and ``constraints``
    describes the known parameter set.  Construction verifies dimensional
    consistency and that the constraint set is nonempty (a witness is found
    by the phase-1 feasibility program when no trivial one exists).
    """

    forward: np.ndarray
    functionals: np.ndarray
    constraints: Optional[ConstraintSet]
    witness: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.forward = as_matrix(self.forward)
        self.functionals = as_matrix(self.functionals)
        if self.functionals.shape[1] != self.forward.shape[1]:
            raise ValueError("functionals and forward matrix column counts differ")
        if self.constraints is not None and constraint_dim(self.constraints) != self.forward.shape[1]:
            raise ValueError("constraint dimension differs from parameter count")
        self.witness = self._find_witness()

    def _find_witness(self) -> np.ndarray:
        p = self.forward.shape[1]
        if self.constraints is None:
            return np.zeros(p)
        w = feasible_point(self.constraints)
        g, rhs = constraint_rows(self.constraints, dim=p)
        if w is not None and (g.shape[0] == 0 or np.max(g @ w - rhs) <= 1e-9):
            return w
        result = feasibility_lp(a_ub=g, b_ub=rhs)
        if not result.feasible:
            raise EmptyConstraintSetError(
                f"constraint set is empty (phase-1 optimum {result.phase1_objective:.3e})"
            )
        return result.witness

    @property
    def n_obs(self) -> int:
        return self.forward.shape[0]

    @property
    def n_param(self) -> int:
        return self.forward.shape[1]

    @property
    def n_func(self) -> int:
        return self.functionals.shape[0]

    def row_spec(self, i: int) -> "ProblemSpec":
        """Single-functional sub-problem for row ``i``."""
        return ProblemSpec(
            forward=self.forward,
            functionals=self.functionals[i : i + 1],
            constraints=self.constraints,
        )

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "forward": matrix_to_json(self.forward),
            "functionals": matrix_to_json(self.functionals),
            "constraints": constraints_to_json(self.constraints),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemSpec":
        return cls(
            forward=matrix_from_json(obj["forward"]),
            functionals=matrix_from_json(obj["functionals"]),
            constraints=constraints_from_json(obj.get("constraints")),
        )

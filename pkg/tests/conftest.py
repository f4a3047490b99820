import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from polyci.problems import ProblemSpec
from polyci.qp import Box, LinearInequality, NonNegative, PolyhedralCone

TOY_K = np.array([[2.0, 1.0, 1.0], [0.0, 1.0, 1.0]])
TOY_H = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])


@pytest.fixture
def toy_spec() -> ProblemSpec:
    """The 2x3 surjective design with both functionals outside its row space."""
    return ProblemSpec(forward=TOY_K.copy(), functionals=TOY_H.copy(),
                       constraints=NonNegative(3))


@pytest.fixture
def toy_unconstrained() -> ProblemSpec:
    return ProblemSpec(forward=TOY_K.copy(), functionals=TOY_H.copy(),
                       constraints=Box(lo=np.full(3, -np.inf), up=np.full(3, np.inf)))


def random_rowspace_spec(seed: int, n: int = 6, p: int = 4, k: int = 2,
                         constraints="none") -> ProblemSpec:
    """Random design with functionals built inside its row space."""
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((n, p))
    W = rng.standard_normal((k, n))
    H = W @ K
    if constraints == "none":
        cs = Box(lo=np.full(p, -np.inf), up=np.full(p, np.inf))
    elif constraints == "nonneg":
        cs = NonNegative(p)
    else:
        raise ValueError(constraints)
    return ProblemSpec(forward=K, functionals=H, constraints=cs)


def dominance_specs() -> list:
    """Five structurally different specs plus a feasible base point each."""
    rng = np.random.default_rng(90)
    out = []
    out.append((ProblemSpec(forward=TOY_K.copy(), functionals=TOY_H.copy(),
                            constraints=NonNegative(3)), np.array([1.0, 2.0, 0.5])))
    K = rng.standard_normal((4, 6))
    H = rng.standard_normal((2, 4)) @ K
    out.append((ProblemSpec(forward=K, functionals=H, constraints=NonNegative(6)),
                np.abs(rng.standard_normal(6))))
    K = rng.standard_normal((3, 4))
    out.append((ProblemSpec(forward=K, functionals=rng.standard_normal((1, 4)),
                            constraints=Box(lo=np.zeros(4), up=np.ones(4))),
                np.full(4, 0.5)))
    K = rng.standard_normal((3, 4))
    A = rng.standard_normal((2, 4))
    out.append((ProblemSpec(forward=K, functionals=rng.standard_normal((2, 4)),
                            constraints=PolyhedralCone(a=A)), np.zeros(4)))
    K = rng.standard_normal((4, 5))
    A = rng.standard_normal((3, 5))
    x0 = rng.standard_normal(5)
    b = A @ x0 + 1.0
    out.append((ProblemSpec(forward=K, functionals=rng.standard_normal((2, 5)),
                            constraints=LinearInequality(a=A, b=b)), x0))
    return out

import numpy as np
import pytest

from polyci.qp import (
    ActiveSetQp,
    Box,
    LinearInequality,
    NonNegative,
    PolyhedralCone,
    QpProblem,
    Status,
    constraint_rows,
    feasibility_lp,
    min_unconstrained,
    recession_direction,
    solve_ls,
    translate_constraint,
)
from conftest import TOY_H, TOY_K
from oracles import enumerate_qp_min


def _random_feasible_instance(rng, p=None):
    p = p or rng.integers(2, 9)
    n = rng.integers(2, 9)
    K = rng.standard_normal((n, p))
    x0 = np.abs(rng.standard_normal(p)) + 0.1
    y = K @ x0 + rng.standard_normal(n)
    kind = rng.integers(0, 3)
    if kind == 0:
        cs = NonNegative(int(p))
    elif kind == 1:
        cs = Box(lo=np.zeros(p), up=np.full(p, 3.0))
        x0 = np.clip(x0, 0, 3.0)
    else:
        A = rng.standard_normal((rng.integers(1, 4), p))
        cs = LinearInequality(a=A, b=A @ x0 + 0.5)
    return K, y, cs


class TestSolveLs:
    def test_clipping(self):
        sol = solve_ls(QpProblem(K=np.eye(2), y=np.array([-1.0, 2.0]),
                                 constraints=NonNegative(2)))
        assert sol.status is Status.OPTIMAL
        assert np.allclose(sol.x, [0.0, 2.0], atol=1e-9)
        assert sol.objective == pytest.approx(1.0, abs=1e-9)

    def test_symmetric_projection(self):
        sol = solve_ls(QpProblem(K=np.eye(2), y=np.zeros(2),
                                 equality=(np.array([[1.0, 1.0]]), np.array([2.0])),
                                 constraints=NonNegative(2)))
        assert np.allclose(sol.x, [1.0, 1.0], atol=1e-9)
        assert sol.objective == pytest.approx(2.0, abs=1e-9)

    def test_toy_slice_zero_objective(self):
        # y = (20,10) is the noiseless image of (5,5,5), which sits on this slice
        sol = solve_ls(QpProblem(K=TOY_K, y=np.array([20.0, 10.0]),
                                 equality=(TOY_H, np.zeros(2)),
                                 constraints=NonNegative(3)))
        assert sol.objective == pytest.approx(0.0, abs=1e-9)

    def test_toy_slice_against_enumeration_oracle(self):
        y = np.array([1.0, 7.0])
        g_mat, g_rhs = constraint_rows(NonNegative(3))
        expect, _ = enumerate_qp_min(TOY_K, y, C=TOY_H, d=np.zeros(2), G=g_mat, g=g_rhs)
        assert expect == pytest.approx(33.8, abs=1e-9)
        sol = solve_ls(QpProblem(K=TOY_K, y=y, equality=(TOY_H, np.zeros(2)),
                                 constraints=NonNegative(3)))
        assert sol.objective == pytest.approx(expect, abs=1e-8)

    def test_infeasible_slice_certified(self):
        # mu outside the image of the orthant under H = e1 row: x1 >= 0 slice at -1
        sol = solve_ls(QpProblem(K=np.eye(2), y=np.zeros(2),
                                 equality=(np.array([[1.0, 0.0]]), np.array([-1.0])),
                                 constraints=NonNegative(2)))
        assert sol.status is Status.INFEASIBLE
        assert sol.primal_residual > 1e-7

    def test_infeasible_vs_brute_force_sampling(self):
        rng = np.random.default_rng(8)
        K = np.eye(3)
        cs = LinearInequality(a=np.array([[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]]),
                              b=np.array([1.0, -2.0]))  # sum <= 1 and sum >= 2: empty
        sol = solve_ls(QpProblem(K=K, y=np.zeros(3), constraints=cs))
        assert sol.status is Status.INFEASIBLE
        g, rhs = constraint_rows(cs)
        pts = rng.standard_normal((10_000, 3)) * 3
        assert not np.any(np.all(g @ pts.T - rhs[:, None] <= 0, axis=0))

    def test_kkt_residuals_random(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            K, y, cs = _random_feasible_instance(rng)
            sol = solve_ls(QpProblem(K=K, y=y, constraints=cs))
            assert sol.status is Status.OPTIMAL
            assert sol.primal_residual <= 1e-6
            assert sol.dual_residual <= 1e-6 * max(1.0, np.linalg.norm(K) ** 2)
            assert sol.complementarity <= 1e-6

    def test_matches_enumeration_oracle_random(self):
        rng = np.random.default_rng(13)
        for _ in range(40):
            p = int(rng.integers(2, 5))
            n = int(rng.integers(2, 6))
            K = rng.standard_normal((n, p))
            y = rng.standard_normal(n)
            g_mat, g_rhs = constraint_rows(NonNegative(p))
            expect, _ = enumerate_qp_min(K, y, G=g_mat, g=g_rhs)
            sol = solve_ls(QpProblem(K=K, y=y, constraints=NonNegative(p)))
            assert sol.objective == pytest.approx(expect, abs=1e-7 * (1 + expect))

    def test_objective_monotone_in_constraints(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            p = 4
            K = rng.standard_normal((3, p))
            y = rng.standard_normal(3)
            base = solve_ls(QpProblem(K=K, y=y, constraints=NonNegative(p)))
            tighter = solve_ls(QpProblem(K=K, y=y,
                                         constraints=Box(lo=np.zeros(p), up=np.full(p, 0.5))))
            assert tighter.objective >= base.objective - 1e-9

    def test_closed_form_equality_slice(self):
        # unconstrained slice optimum equals c(y) + ||mu - B^T y||^2 in the
        # B^T B metric whenever the functionals live in the row space
        from polyci.linalg import b_matrix, pseudoinverse

        rng = np.random.default_rng(7)
        for _ in range(100):
            n, p, k = 6, 4, 2
            K = rng.standard_normal((n, p))
            H = rng.standard_normal((k, n)) @ K
            y = rng.standard_normal(n)
            mu = rng.standard_normal(k)
            sol = solve_ls(QpProblem(K=K, y=y, equality=(H, mu)))
            b = b_matrix(K, H)
            gram = b.T @ b
            resid = mu - b.T @ y
            expect = min_unconstrained(K, y) + resid @ pseudoinverse(gram) @ resid
            assert sol.objective == pytest.approx(expect, rel=1e-6, abs=1e-6)


class TestMinUnconstrained:
    def test_surjective_design_fits_everything(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            y = rng.standard_normal(2)
            assert min_unconstrained(TOY_K, y) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_component(self):
        assert min_unconstrained(np.array([[1.0], [0.0]]), np.array([3.0, 4.0])) == \
            pytest.approx(16.0)

    def test_cross_check_with_solver(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            K = rng.standard_normal((5, 3))
            y = rng.standard_normal(5)
            sol = solve_ls(QpProblem(K=K, y=y))
            assert min_unconstrained(K, y) == pytest.approx(sol.objective, abs=1e-8)


class TestFeasibilityLp:
    def test_empty_box(self):
        res = feasibility_lp(a_ub=np.array([[-1.0], [1.0]]), b_ub=np.array([0.0, -1.0]))
        assert not res.feasible
        assert res.phase1_objective > 1e-7

    def test_orthant(self):
        res = feasibility_lp(a_ub=np.array([[-1.0]]), b_ub=np.array([0.0]))
        assert res.feasible
        assert res.witness[0] >= -1e-9

    def test_toy_split_program_infeasible(self):
        # the sign-split system for a functional outside the row space
        h = TOY_H[0]
        n = TOY_K.shape[0]
        a_eq = np.hstack([TOY_K.T, -TOY_K.T])
        a_ub = np.vstack([
            np.hstack([-TOY_K.T, np.zeros((3, n))]),
            np.hstack([np.zeros((3, n)), -TOY_K.T]),
        ])
        res = feasibility_lp(a_eq=a_eq, b_eq=h, a_ub=a_ub, b_ub=np.zeros(6))
        assert not res.feasible
        # oracle: the row is genuinely outside the row space
        from polyci.linalg import in_row_space

        assert not in_row_space(h, TOY_K)


class TestRecession:
    def test_toy_has_no_directions(self):
        for row in TOY_H:
            for sign in (+1, -1):
                q = recession_direction(TOY_K, NonNegative(3), row, sign)
                assert not q.direction_found

    def test_unconstrained_kernel_direction(self):
        q = recession_direction(np.array([[1.0, 0.0]]), None, np.array([0.0, 1.0]), +1)
        assert q.direction_found
        assert np.max(np.abs(q.d)) == pytest.approx(1.0)
        assert abs(q.d[0]) < 1e-9

    def test_orthant_blocks_direction(self):
        # kernel of [1,1] meets the orthant only at zero
        q = recession_direction(np.array([[1.0, 1.0]]), NonNegative(2),
                                np.array([1.0, -1.0]), +1)
        assert not q.direction_found

    def test_two_variable_enumeration_oracle(self):
        # same instance, checked by scanning kernel rays directly
        kernel = np.array([1.0, -1.0])  # spans ker([1,1])
        ok = []
        for t in (+1.0, -1.0):
            d = t * kernel
            ok.append(np.all(d >= 0) and np.array([1.0, -1.0]) @ d > 0)
        assert not any(ok)

    def test_invariants_when_found(self):
        q = recession_direction(np.zeros((1, 3)), NonNegative(3),
                                np.array([1.0, 0.0, 0.0]), +1)
        assert q.direction_found
        assert np.max(np.abs(q.d)) == pytest.approx(1.0)
        assert np.all(q.d >= -1e-9)


class TestConstraintSets:
    def test_rows_and_translation(self):
        cs = Box(lo=np.array([0.0, -np.inf]), up=np.array([1.0, 2.0]))
        g, rhs = constraint_rows(cs)
        assert g.shape == (3, 2)
        shifted = translate_constraint(cs, np.array([0.5, 0.5]))
        g2, rhs2 = constraint_rows(shifted)
        x = np.array([0.2, 1.0])
        assert np.max(g2 @ x - rhs2) == pytest.approx(np.max(g @ (x + [0.5, 0.5]) - rhs))

    def test_cone_translation(self):
        cs = PolyhedralCone(a=np.array([[1.0, -1.0]]))
        shifted = translate_constraint(cs, np.array([1.0, 0.0]))
        g, rhs = constraint_rows(shifted)
        assert np.allclose(rhs, [-1.0])

    def test_box_validation(self):
        with pytest.raises(ValueError):
            Box(lo=np.array([1.0]), up=np.array([0.0]))

    def test_iteration_cap_raises_with_best(self):
        from polyci.qp import IterationLimitError

        # this instance needs a constraint drop, i.e. at least two iterations
        solver = ActiveSetQp(np.eye(2), G=-np.eye(2), max_iter=1)
        with pytest.raises(IterationLimitError) as err:
            solver.solve(np.array([-1.0, 2.0]), g=np.zeros(2), x0=np.zeros(2))
        assert err.value.best is not None

import math

import numpy as np
import pytest

from polyci.calibration import GlobalConstant, Provenance
from polyci.distributions import chi2_quantile
from polyci.problems import ProblemSpec
from polyci.qp import Box, NonNegative
from polyci.regions import (
    BoundClass,
    EmptyRegionError,
    IntervalK,
    InteriorPointOutsideError,
    NotTwoDimensionalError,
    RegionSpec,
    area_2d,
    boundary_polyline,
    bounding_box,
    boundedness_report,
    contains,
    profile_roots,
    profile_value,
    region_area,
    region_interior_point,
    split_contains,
    split_region_build,
    statistic_offset,
)
from polyci.statistics import TestStatistic, workspace_for
from conftest import TOY_H, TOY_K, random_rowspace_spec


def _rule(delta):
    return GlobalConstant(delta, Provenance.USER_SUPPLIED)


class TestContains:
    def test_fitted_value_always_inside(self, toy_spec):
        rng = np.random.default_rng(0)
        ws = workspace_for(toy_spec)
        for _ in range(10):
            y = rng.standard_normal(2)
            xhat = ws.constrained_minimizer(y)
            region = RegionSpec(spec=toy_spec, stat=TestStatistic.L2C,
                                threshold=_rule(0.0), y=y)
            assert contains(region, toy_spec.functionals @ xhat)

    def test_origin_noiseless(self, toy_spec):
        region = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                            threshold=_rule(1.644), y=np.zeros(2))
        assert contains(region, np.zeros(2))

    def test_unconstrained_matches_quadratic_form(self):
        from polyci.linalg import b_matrix, pseudoinverse
        from polyci.qp import min_unconstrained

        rng = np.random.default_rng(1)
        for i in range(100):
            spec = random_rowspace_spec(300 + i, n=5, p=3, k=2, constraints="none")
            y = rng.standard_normal(5)
            mu = rng.standard_normal(2)
            delta = float(rng.uniform(0.5, 6.0))
            b = b_matrix(spec.forward, spec.functionals)
            resid = mu - b.T @ y
            quad = float(resid @ pseudoinverse(b.T @ b) @ resid)
            expect = quad <= delta - min_unconstrained(spec.forward, y)
            region = RegionSpec(spec=spec, stat=TestStatistic.L1,
                                threshold=_rule(delta), y=y)
            if abs(quad - (delta - min_unconstrained(spec.forward, y))) > 1e-7:
                assert contains(region, mu) == expect

    def test_x_description_reachability(self, toy_spec):
        # any feasible x with small enough residual must land inside
        rng = np.random.default_rng(2)
        y = np.array([3.0, 1.0])
        delta = 4.0
        region = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                            threshold=_rule(delta), y=y)
        found = 0
        for _ in range(300):
            x = np.abs(rng.standard_normal(3)) * 2
            if np.sum((toy_spec.forward @ x - y) ** 2) <= delta:
                assert contains(region, toy_spec.functionals @ x)
                found += 1
        assert found >= 20


class TestProfile:
    def test_wald_interval_closed_form(self):
        # k = 1, unconstrained full-column-rank: endpoints are the classic
        # plug-in value +- sqrt(delta' * h (K^T K)^-1 h)
        rng = np.random.default_rng(3)
        for i in range(20):
            K = rng.standard_normal((5, 3))
            h = rng.standard_normal(3)
            spec = ProblemSpec(forward=K, functionals=h[None, :],
                               constraints=Box(lo=np.full(3, -np.inf),
                                               up=np.full(3, np.inf)))
            y = rng.standard_normal(5)
            delta = float(rng.uniform(1.0, 5.0))
            from polyci.qp import min_unconstrained

            c = min_unconstrained(K, y)
            xhat = np.linalg.pinv(K) @ y
            gram_inv = np.linalg.inv(K.T @ K)
            center = h @ xhat
            half = math.sqrt(delta * (h @ gram_inv @ h))
            lo, hi = profile_roots(spec, y, c, delta, h)
            assert lo == pytest.approx(center - half, abs=1e-5)
            assert hi == pytest.approx(center + half, abs=1e-5)

    def test_toy_roots_against_grid_scan(self, toy_spec):
        y = np.array([20.0, 10.0])
        delta = chi2_quantile(2, 0.68)
        h = TOY_H[0]
        lo, hi = profile_roots(toy_spec, y, 0.0, delta, h)
        assert np.isfinite(lo) and np.isfinite(hi)
        # oracle: scan the profile on a fine grid and compare level crossings
        grid = np.arange(lo - 1.0, hi + 1.0, 1e-3)
        vals = np.array([profile_value(toy_spec, h, phi, y) for phi in grid])
        inside = grid[vals <= delta]
        assert inside[0] == pytest.approx(lo, abs=2e-3)
        assert inside[-1] == pytest.approx(hi, abs=2e-3)

    def test_endpoints_hit_target(self, toy_spec):
        y = np.array([5.0, -2.0])
        delta = 6.0   # above the constrained minimum (4.0) so the set is nonempty
        for h in TOY_H:
            lo, hi = profile_roots(toy_spec, y, 0.0, delta, h)
            for phi in (lo, hi):
                assert profile_value(toy_spec, h, phi, y) == \
                    pytest.approx(delta, abs=1e-5)

    def test_unbounded_direction_reported(self):
        spec = ProblemSpec(forward=np.array([[1.0, 0.0]]),
                           functionals=np.array([[0.0, 1.0]]),
                           constraints=Box(lo=np.full(2, -np.inf), up=np.full(2, np.inf)))
        lo, hi = profile_roots(spec, np.array([0.5]), 0.0, 1.0, np.array([0.0, 1.0]))
        assert lo == -math.inf and hi == math.inf

    def test_empty_region(self, toy_spec):
        with pytest.raises(EmptyRegionError):
            profile_roots(toy_spec, np.array([-5.0, 5.0]), 0.0, 0.05, TOY_H[0])

    def test_convexity_of_profile(self, toy_spec):
        rng = np.random.default_rng(4)
        y = np.array([2.0, 4.0])
        h = TOY_H[1]
        for _ in range(50):
            pts = np.sort(rng.uniform(-5, 5, 3))
            vals = [profile_value(toy_spec, h, p, y) for p in pts]
            if not all(np.isfinite(vals)):
                continue
            lam = (pts[1] - pts[0]) / (pts[2] - pts[0])
            bound = (1 - lam) * vals[0] + lam * vals[2]
            assert vals[1] <= bound + 1e-7 * max(1.0, abs(bound))


class TestBoundingBox:
    def test_toy_noiseless_finite(self, toy_spec):
        region = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                            threshold=_rule(1.644), y=np.zeros(2))
        box = bounding_box(region)
        assert np.all(np.isfinite(box.lo)) and np.all(np.isfinite(box.hi))
        assert box.contains(np.zeros(2))

    def test_l2u_offset_used(self, toy_spec):
        y = np.array([1.0, 2.0])
        assert statistic_offset(TestStatistic.L1, toy_spec, y) == 0.0
        ws = workspace_for(toy_spec)
        assert statistic_offset(TestStatistic.L2U, toy_spec, y) == \
            pytest.approx(ws.unconstrained_min(y))
        assert statistic_offset(TestStatistic.L2C, toy_spec, y) == \
            pytest.approx(ws.constrained_min(y))

    def test_empty_region_raises(self, toy_spec):
        region = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                            threshold=_rule(0.05), y=np.array([-5.0, 5.0]))
        with pytest.raises(EmptyRegionError):
            bounding_box(region)


class TestBoundedness:
    def test_toy_finite(self, toy_spec):
        assert boundedness_report(toy_spec) == [BoundClass.FINITE, BoundClass.FINITE]

    def test_unconstrained_row_space_criterion(self):
        rng = np.random.default_rng(5)
        K = rng.standard_normal((3, 5))
        inside = rng.standard_normal(3) @ K
        outside = rng.standard_normal(5)
        spec = ProblemSpec(forward=K, functionals=np.vstack([inside, outside]),
                           constraints=Box(lo=np.full(5, -np.inf), up=np.full(5, np.inf)))
        report = boundedness_report(spec)
        assert report[0] is BoundClass.FINITE
        assert report[1] is BoundClass.UNBOUNDED_BOTH

    def test_zero_design_orthant(self):
        spec = ProblemSpec(forward=np.zeros((1, 2)),
                           functionals=np.array([[1.0, 0.0]]),
                           constraints=NonNegative(2))
        assert boundedness_report(spec) == [BoundClass.UNBOUNDED_ABOVE]


class TestSplitRegions:
    def test_toy_parallel_is_segment(self, toy_spec):
        sr = split_region_build(toy_spec, np.array([20.0, 10.0]), 0.16, 0.16)
        assert sr.sigma_range.shape[1] == 1      # rank-one covariance
        assert sr.radius2 == pytest.approx(chi2_quantile(1, 0.84))
        assert np.allclose(sr.sigma_parallel, np.diag([1.25, 0.0]))

    def test_full_column_rank_degenerate_perp(self):
        rng = np.random.default_rng(6)
        K = rng.standard_normal((5, 3))
        spec = ProblemSpec(forward=K, functionals=np.eye(3),
                           constraints=NonNegative(3))
        sr = split_region_build(spec, rng.standard_normal(5), 0.05, 0.05)
        assert np.max(np.abs(sr.perp.spec.functionals)) < 1e-10

    def test_membership_witness(self, toy_spec):
        y = np.array([20.0, 10.0])
        sr = split_region_build(toy_spec, y, 0.16, 0.16)
        ws = workspace_for(sr.perp.spec)
        xhat = ws.constrained_minimizer(y)
        witness = sr.parallel_center + sr.perp.spec.functionals @ xhat
        assert split_contains(sr, witness)
        assert not split_contains(sr, witness + np.array([1e3, 1e3]))

    def test_alpha_validation(self, toy_spec):
        with pytest.raises(ValueError):
            split_region_build(toy_spec, np.zeros(2), 0.6, 0.6)

    def test_coverage_quick(self, toy_spec):
        # crude check that the Bonferroni split covers at the nominal level
        rng = np.random.default_rng(7)
        x_star = np.array([5.0, 5.0, 5.0])
        mu_star = toy_spec.functionals @ x_star
        cache = {}
        hits = 0
        n = 150
        for _ in range(n):
            y = toy_spec.forward @ x_star + rng.standard_normal(2)
            sr = split_region_build(toy_spec, y, 0.16, 0.16, solver_cache=cache)
            hits += split_contains(sr, mu_star)
        assert hits / n >= 0.68 - 3 * math.sqrt(0.68 * 0.32 / n)


class TestArea:
    def test_unit_disk(self):
        disk = lambda mu: float(mu @ mu) <= 1.0
        a = area_2d(disk, np.zeros(2), n_angles=720, r_tol=1e-6)
        assert a == pytest.approx(math.pi, abs=1e-3)

    def test_unit_box(self):
        box = lambda mu: bool(np.all(mu >= 0) and np.all(mu <= 1))
        a = area_2d(box, np.array([0.5, 0.5]), n_angles=720, r_tol=1e-6)
        assert a == pytest.approx(1.0, abs=1e-3)

    def test_errors(self):
        disk = lambda mu: float(mu @ mu) <= 1.0
        with pytest.raises(NotTwoDimensionalError):
            area_2d(disk, np.zeros(3))
        with pytest.raises(InteriorPointOutsideError):
            area_2d(disk, np.array([5.0, 5.0]))

    def test_monotone_under_threshold_nesting(self, toy_spec):
        y = np.array([3.0, 2.0])
        small = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                           threshold=_rule(1.0), y=y)
        large = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                           threshold=_rule(3.0), y=y)
        a_small = region_area(small, n_angles=96, r_tol=1e-4)
        a_large = region_area(large, n_angles=96, r_tol=1e-4)
        assert a_small <= a_large

    def test_mu_region_inside_x_box(self, toy_spec):
        # boundary of the convex functional-space region sits inside the
        # per-coordinate interval hull, pointwise
        y = np.array([20.0, 10.0])
        delta = chi2_quantile(2, 0.68)
        region = RegionSpec(spec=toy_spec, stat=TestStatistic.L1,
                            threshold=_rule(delta), y=y)
        box = bounding_box(region)
        mu0 = region_interior_point(region)
        rows = boundary_polyline(lambda mu: contains(region, mu), mu0,
                                 n_angles=60, r_tol=1e-4)
        for _, _, m1, m2 in rows:
            assert box.contains(np.array([m1, m2]), slack=1e-6)


class TestSlicedThreshold:
    def test_contains_with_slice_dependent_rule(self):
        from polyci.calibration import SlicedCandidateMax

        spec = ProblemSpec(forward=np.eye(2), functionals=np.array([[1.0, 1.0]]),
                           constraints=NonNegative(2))
        rule = SlicedCandidateMax(spec=spec, stat=TestStatistic.L2U, alpha=0.32,
                                  n_samples=2000, seed=3)
        y = np.array([1.0, 1.0])
        region = RegionSpec(spec=spec, stat=TestStatistic.L2U, threshold=rule, y=y)
        assert contains(region, np.array([2.0]))      # the fitted value
        assert not contains(region, np.array([30.0]))


class TestIntervalK:
    def test_validation_and_area(self):
        box = IntervalK(lo=np.array([0.0, 1.0]), hi=np.array([2.0, 3.0]))
        assert box.box_area() == pytest.approx(4.0)
        assert box.contains(np.array([1.0, 2.0]))
        assert not box.contains(np.array([3.0, 2.0]))
        with pytest.raises(ValueError):
            IntervalK(lo=np.array([1.0]), hi=np.array([0.0]))

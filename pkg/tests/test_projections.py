import math

import numpy as np
import pytest
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy.optimize import brentq

from cssl.core import Hyperparams
from cssl.exceptions import InfeasibleProjectionError
from cssl.projections import (
    ProjectionSpec, project_intersection_boundary, project_lq_ball,
    project_lq_ball_boundary, project_onto_C, project_sum_hyperplane,
    solve_cq_knapsack_box, solve_cq_knapsack_simplex)
from cssl.solver import split_common_individual

ORDERS = [1.0, 2.0, math.inf]


def box_oracle(y0, zeta, gamma):
    """
    Root of the decreasing ``nu -> sum clip(y0 - nu, -gamma, gamma) - zeta``.
    """
    def excess(nu):
        return np.clip(y0 - nu, -gamma, gamma).sum() - zeta

    nu = brentq(excess, y0.min() - gamma - 1, y0.max() + gamma + 1,
                xtol=1e-14, rtol=1e-15, maxiter=500)
    return np.clip(y0 - nu, -gamma, gamma)


def simplex_oracle(a, gamma):
    def excess(nu):
        return np.maximum(a - nu, 0.0).sum() - gamma

    nu = brentq(excess, a.min() - gamma - 1, a.max(), xtol=1e-14,
                rtol=1e-15, maxiter=500)
    return np.maximum(a - nu, 0.0)


def in_C(rows, spec, tol=1e-9):
    rows = np.atleast_2d(rows)
    sums_ok = np.abs(rows.sum(axis=1)) <= spec.rho + tol
    norms_ok = np.linalg.norm(rows, ord=spec.q, axis=1) <= spec.gamma + tol
    return bool(np.all(sums_ok & norms_ok))


def points_in_C(rng, spec, count, N):
    """
    Random points scaled into C; both constraints are homogeneous.
    """
    points = 3 * rng.standard_normal((count, N))
    sums = np.abs(points.sum(axis=1))
    norms = np.linalg.norm(points, ord=spec.q, axis=1)
    scale = np.minimum(1.0, np.minimum(
        np.divide(spec.rho, sums, out=np.ones_like(sums), where=sums > 0),
        spec.gamma / norms))
    return points * scale[:, None] * rng.uniform(0, 1, (count, 1))


class SumHyperplaneTests(SimpleTestCase):
    def test_keeps_the_sign(self):
        assert_allclose(project_sum_hyperplane([3.0, 1.0], 1.0), [1.5, -0.5])
        assert_allclose(project_sum_hyperplane([-3.0, 1.0], 1.0),
                        [-2.5, 1.5])

    def test_zero_sum_counts_as_positive(self):
        self.assertAlmostEqual(project_sum_hyperplane([1.0, -1.0], 2).sum(),
                               2.0)


class BallTests(SimpleTestCase):
    def test_l2_ball(self):
        assert_allclose(project_lq_ball([3.0, 4.0], 1.0, 2), [0.6, 0.8])
        assert_allclose(project_lq_ball([0.3, 0.4], 1.0, 2), [0.3, 0.4])

    def test_linf_ball(self):
        assert_allclose(project_lq_ball([3.0, -0.5], 1.0, 'inf'),
                        [1.0, -0.5])

    def test_l1_ball(self):
        assert_allclose(project_lq_ball([3.0, -1.0], 1.0, 1), [1.0, 0.0])

    def test_l2_sphere_of_zero_vector(self):
        with self.assertRaises(InfeasibleProjectionError):
            project_lq_ball_boundary([0.0, 0.0], 1.0, 2)

    def test_l2_sphere(self):
        assert_allclose(project_lq_ball_boundary([0.3, 0.4], 1.0, 2),
                        [0.6, 0.8])

    def test_l1_sphere_keeps_signs(self):
        result = project_lq_ball_boundary([0.2, -0.1], 1.0, 1)
        assert_allclose(result, [0.55, -0.45])


class KnapsackTests(SimpleTestCase):
    def test_simplex(self):
        assert_allclose(solve_cq_knapsack_simplex([3.0, 1.0, 0.0], 1.0),
                        [1.0, 0.0, 0.0])
        assert_allclose(solve_cq_knapsack_simplex([0.5, 0.5], 3.0),
                        [1.5, 1.5])

    def test_simplex_needs_positive_capacity(self):
        with self.assertRaises(ValidationError):
            solve_cq_knapsack_simplex([1.0, 2.0], 0.0)

    def test_box(self):
        assert_allclose(solve_cq_knapsack_box([5.0, 5.0], 1.0, 1.0),
                        [0.5, 0.5])
        assert_allclose(solve_cq_knapsack_box([5.0, -5.0, 0.0], 0.0, 1.0),
                        [1.0, -1.0, 0.0])

    def test_box_infeasible(self):
        with self.assertRaises(InfeasibleProjectionError):
            solve_cq_knapsack_box([1.0, 2.0], 3.0, 1.0)

    def test_simplex_kkt(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            N = rng.integers(1, 7)
            a = 2 * rng.standard_normal(N)
            gamma = rng.uniform(0.1, 3.0)
            z = solve_cq_knapsack_simplex(a, gamma)
            self.assertTrue(np.all(z >= 0))
            self.assertAlmostEqual(z.sum(), gamma, places=10)
            nu = (a - z)[z > 0]
            assert_allclose(nu, nu[0], atol=1e-10)
            self.assertTrue(np.all(a[z == 0] <= nu[0] + 1e-10))

    def test_box_kkt(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            N = rng.integers(1, 7)
            y0 = 2 * rng.standard_normal(N)
            gamma = rng.uniform(0.1, 2.0)
            zeta = rng.uniform(-N * gamma, N * gamma)
            y = solve_cq_knapsack_box(y0, zeta, gamma)
            self.assertAlmostEqual(y.sum(), zeta, places=9)
            self.assertTrue(np.all(np.abs(y) <= gamma + 1e-12))
            free = np.abs(y) < gamma - 1e-9
            if free.any():
                nu = (y0 - y)[free]
                assert_allclose(nu, nu[0], atol=1e-9)
                self.assertTrue(np.all(y0[y >= gamma - 1e-9] - nu[0] >=
                                       gamma - 1e-9))
                self.assertTrue(np.all(y0[y <= -gamma + 1e-9] - nu[0] <=
                                       -gamma + 1e-9))

    def test_box_entry_on_its_breakpoint(self):
        y0 = np.array([3.7037, 0.4527, 1.4434, -0.4463, 3.947])
        y = solve_cq_knapsack_box(y0, 1.0733, 1.6379)
        self.assertLess(abs(y.sum() - 1.0733), 1e-9)
        assert_allclose(y, [1.6379, -0.7777, 0.2130, -1.6379, 1.6379],
                        atol=1e-4)
        assert_allclose(y, box_oracle(y0, 1.0733, 1.6379), atol=1e-9)

    def test_box_matches_root_finding(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            N = int(rng.integers(1, 8))
            y0 = np.round(3 * rng.standard_normal(N), int(rng.integers(1, 5)))
            gamma = rng.uniform(0.1, 2.0)
            if rng.uniform() < 0.5:
                # The sum is pinned exactly at one of the breakpoints.
                nu = rng.choice(np.concatenate([y0 - gamma, y0 + gamma]))
                zeta = np.clip(y0 - nu, -gamma, gamma).sum()
            else:
                zeta = rng.uniform(-N * gamma, N * gamma)
            if abs(zeta) >= N * gamma * (1 - 1e-9):
                continue
            y = solve_cq_knapsack_box(y0, zeta, gamma)
            self.assertLess(abs(y.sum() - zeta), 1e-9)
            assert_allclose(y, box_oracle(y0, zeta, gamma), atol=1e-9)

    def test_simplex_matches_root_finding(self):
        rng = np.random.default_rng(4)
        for _ in range(500):
            N = int(rng.integers(1, 8))
            a = np.round(3 * rng.standard_normal(N), int(rng.integers(1, 5)))
            gamma = rng.uniform(0.05, 3.0)
            z = solve_cq_knapsack_simplex(a, gamma)
            self.assertLess(abs(z.sum() - gamma), 1e-9)
            assert_allclose(z, simplex_oracle(a, gamma), atol=1e-9)


class IntersectionBoundaryTests(SimpleTestCase):
    def test_l2_closed_form(self):
        spec = ProjectionSpec(1.0, 1.0, 2)
        assert_allclose(project_intersection_boundary([10.0, 0.0], spec),
                        [1.0, 0.0], atol=1e-12)

    def test_linf_box(self):
        spec = ProjectionSpec(1.0, 1.0, 'inf')
        assert_allclose(project_intersection_boundary([5.0, 5.0], spec),
                        [0.5, 0.5])

    def test_empty_intersection(self):
        spec = ProjectionSpec(3.0, 1.0, 2)
        with self.assertRaises(InfeasibleProjectionError):
            project_intersection_boundary([10.0, 0.0], spec)

    def test_points_lie_on_both_faces(self):
        rng = np.random.default_rng(2)
        for q in ORDERS:
            spec = ProjectionSpec(0.5, 1.0, q)
            rows = 5 * rng.standard_normal((80, 3))
            rows = rows[np.ptp(rows, axis=1) > 2]
            result = project_intersection_boundary(rows, spec)
            assert_allclose(np.abs(result.sum(axis=1)), 0.5, atol=1e-9)
            assert_allclose(np.linalg.norm(result, ord=spec.q, axis=1), 1.0,
                            atol=1e-9)


class ProjectOntoCTests(SimpleTestCase):
    def test_inside_is_unchanged(self):
        spec = ProjectionSpec(1.0, 1.0, 2)
        assert_allclose(project_onto_C([0.2, -0.3], spec), [0.2, -0.3])

    def test_slab_face(self):
        spec = ProjectionSpec(0.5, 10.0, 2)
        assert_allclose(project_onto_C([1.0, 1.0], spec), [0.25, 0.25])

    def test_ball_face(self):
        spec = ProjectionSpec(10.0, 1.0, 2)
        assert_allclose(project_onto_C([3.0, -4.0], spec), [0.6, -0.8])

    def test_infinite_rho(self):
        spec = ProjectionSpec(math.inf, 1.0, 'inf')
        assert_allclose(project_onto_C([3.0, 4.0], spec), [1.0, 1.0])

    def test_infinite_gamma(self):
        spec = ProjectionSpec(1.0, math.inf, 2)
        assert_allclose(project_onto_C([3.0, 1.0], spec), [1.5, -0.5])

    def test_linf_corner_lands_in_C(self):
        spec = ProjectionSpec(0.757, 1.8493, 'inf')
        y0 = np.array([1.0853, -4.1154, -5.6473, 4.0828])
        x = project_onto_C(y0, spec)
        self.assertTrue(in_C(x, spec))
        self.assertAlmostEqual(abs(x.sum()), 0.757, places=9)

    def test_batched_rows_match_single_rows(self):
        rng = np.random.default_rng(4)
        spec = ProjectionSpec(0.7, 1.0, 1)
        rows = 3 * rng.standard_normal((20, 4))
        batched = project_onto_C(rows, spec)
        for row, expected in zip(rows, batched):
            assert_allclose(project_onto_C(row, spec), expected)


@pytest.mark.parametrize('q', ORDERS)
def test_projection_satisfies_the_variational_inequality(q):
    """
    ``x`` is the projection of ``y0`` onto C iff ``x`` is in C and
    ``(y0 - x) . (z - x) <= 0`` for every ``z`` in C.
    """
    rng = np.random.default_rng(int(q) if math.isfinite(q) else 7)
    for _ in range(300):
        N = int(rng.integers(1, 6))
        gamma = rng.uniform(0.2, 2.0)
        rho = rng.uniform(0.0, 1.2) * N ** (1 - 1 / q) * gamma
        spec = ProjectionSpec(rho, gamma, q)
        y0 = 4 * rng.standard_normal(N)
        x = project_onto_C(y0, spec)
        assert in_C(x, spec)
        others = points_in_C(rng, spec, 40, N)
        assert np.all((others - x) @ (y0 - x) <= 1e-8)


@pytest.mark.parametrize('q', ORDERS)
def test_projection_beats_points_of_C(q):
    rng = np.random.default_rng(11)
    spec = ProjectionSpec(0.4, 1.0, q)
    rows = 3 * rng.standard_normal((200, 3))
    projected = project_onto_C(rows, spec)
    assert in_C(projected, spec)
    best = np.linalg.norm(projected - rows, axis=1)
    for others in points_in_C(rng, spec, 50, 3):
        assert np.all(best <= np.linalg.norm(others - rows, axis=1) + 1e-9)


@settings(max_examples=100, deadline=None)
@given(
    values=st.lists(st.floats(-50, 50), min_size=1, max_size=5),
    q=st.sampled_from(ORDERS),
    rho=st.floats(0.0, 5.0),
    gamma=st.floats(0.01, 5.0),
)
def test_projection_is_idempotent(values, q, rho, gamma):
    spec = ProjectionSpec(rho, gamma, q)
    rho = min(rho, spec.reach(len(values)))
    spec = ProjectionSpec(rho, gamma, q)
    once = project_onto_C(np.array(values), spec)
    assert in_C(once, spec)
    assert_allclose(project_onto_C(once, spec), once, atol=1e-9)


@pytest.mark.parametrize('q', ORDERS)
def test_projection_is_nonexpansive(q):
    rng = np.random.default_rng(12)
    for _ in range(1000):
        N = int(rng.integers(1, 6))
        gamma = rng.uniform(0.2, 2.0)
        rho = rng.uniform(0.0, 1.2) * N ** (1 - 1 / q) * gamma
        spec = ProjectionSpec(rho, gamma, q)
        first, second = 4 * rng.standard_normal((2, N))
        distance = np.linalg.norm(project_onto_C(first, spec) -
                                  project_onto_C(second, spec))
        assert distance <= np.linalg.norm(first - second) + 1e-9


@pytest.mark.parametrize('p', ORDERS)
def test_points_of_C_are_bounded_by_the_penalty(p):
    """
    ``<u, l> <= min_theta rho |theta| + gamma ||l - theta||_p`` for every
    ``u`` in C: the penalty of one position is the support function of C.
    """
    rng = np.random.default_rng(13)
    for _ in range(200):
        N = int(rng.integers(1, 6))
        hp = Hyperparams(rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0), p)
        spec = hp.projection_spec()
        values = 2 * rng.standard_normal(N)
        theta, omega = split_common_individual(values, hp)
        penalty = hp.rho * abs(theta) + hp.gamma * np.linalg.norm(omega, p)
        points = np.concatenate([
            points_in_C(rng, spec, 30, N),
            project_onto_C(5 * rng.standard_normal((30, N)), spec),
            project_onto_C(50 * values, spec)[None]])
        assert np.all(points @ values <= penalty + 1e-9)


@pytest.mark.parametrize('q', ORDERS)
def test_projection_matches_a_generic_convex_solver(q):
    cp = pytest.importorskip('cvxpy')
    if cp.CLARABEL not in cp.installed_solvers():
        pytest.skip('the oracle needs the Clarabel solver')
    rng = np.random.default_rng(14)
    for N in range(1, 6):
        count = 200
        gammas = rng.uniform(0.2, 2.0, count)
        rhos = rng.uniform(0.0, 1.2, count) * N ** (1 - 1 / q) * gammas
        rows = 4 * rng.standard_normal((count, N))
        X = cp.Variable((count, N))
        problem = cp.Problem(
            cp.Minimize(cp.sum_squares(X - rows)),
            [cp.abs(cp.sum(X, axis=1)) <= rhos,
             cp.norm(X, q, axis=1) <= gammas])
        problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10,
                      tol_gap_rel=1e-10, tol_feas=1e-10)
        for row, rho, gamma, expected in zip(rows, rhos, gammas, X.value):
            spec = ProjectionSpec(rho, gamma, q)
            x = project_onto_C(row, spec)
            assert in_C(x, spec)
            assert_allclose(x, expected, atol=1e-5)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mobility_stackelberg.solvers import (INFEASIBLE, OPTIMAL, QpProblem, RootProblem, find_root, kkt_residuals,
                                          maximize_1d, minimize_capped_simplex_potential, solve_qp)


def two_node_qp(fleet=None):
    # variables: served x, rebalancing on a (1->2) and b (2->1); the customer path is arc a
    P = np.diag([1.0, 0.0, 0.0])
    c = np.array([-5.0, 1.0, 1.0])
    A = np.array([[1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]])
    G = np.array([[0.2, 0.2, 0.2]]) if fleet is not None else None
    h = [fleet] if fleet is not None else None
    return QpProblem(P=P, c=c, A=A, b=np.zeros(2), G=G, h=h, lb=np.zeros(3), ub=[10.0, np.inf, np.inf])


def fista_box(P, c, lb, ub, iters=20000):
    L = np.linalg.eigvalsh(P).max()
    x = np.clip(np.zeros_like(c), lb, ub)
    y, t = x.copy(), 1.0
    for _ in range(iters):
        x_new = np.clip(y - (P @ y + c) / L, lb, ub)
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        y = x_new + (t - 1) / t_new * (x_new - x)
        x, t = x_new, t_new
    return x


class TestSolveQp:
    def test_textbook_bound(self):
        sol = solve_qp(QpProblem(P=[[2.0]], c=[0.0], lb=[1.0]))
        assert sol.status == OPTIMAL
        assert sol.x[0] == pytest.approx(1.0, abs=1e-9)
        assert sol.z_lower[0] == pytest.approx(2.0, abs=1e-7)

    def test_two_node_uncapped(self):
        sol = solve_qp(two_node_qp())
        assert sol.status == OPTIMAL
        assert sol.x[0] == pytest.approx(4.0, abs=1e-7)
        assert sol.x[2] == pytest.approx(4.0, abs=1e-7)
        assert sol.objective == pytest.approx(-8.0, abs=1e-6)

    def test_two_node_fleet_cap(self):
        sol = solve_qp(two_node_qp(fleet=1.0))
        assert sol.status == OPTIMAL
        assert sol.x[0] == pytest.approx(2.5, abs=1e-7)
        assert sol.objective == pytest.approx(-(-0.5 * 2.5 ** 2 + 4 * 2.5), abs=1e-6)
        assert sol.z_ineq[0] > 0

    def test_inconsistent_equalities_are_reported(self):
        prob = QpProblem(P=np.eye(2), c=np.zeros(2), A=[[1.0, 1.0], [1.0, 1.0]], b=[0.0, 1.0])
        assert solve_qp(prob).status == INFEASIBLE

    def test_infeasible_bounds_and_rows(self):
        prob = QpProblem(P=np.eye(1), c=[0.0], G=[[1.0]], h=[-1.0], lb=[0.0])
        assert solve_qp(prob).status != OPTIMAL

    def test_warm_start_gives_same_answer(self):
        cold = solve_qp(two_node_qp(fleet=1.0))
        warm = solve_qp(two_node_qp(fleet=1.0), x0=[2.0, 0.0, 2.0])
        np.testing.assert_allclose(warm.x, cold.x, atol=1e-8)

    def test_deterministic(self):
        a, b = solve_qp(two_node_qp(1.0)), solve_qp(two_node_qp(1.0))
        assert a.x.tobytes() == b.x.tobytes()

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            QpProblem(P=np.eye(2), c=[1.0, 2.0, 3.0])

    @given(st.integers(1, 8), st.integers(0, 10_000))
    def test_box_qp_matches_projected_gradient(self, n, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.5 * np.eye(n)
        c = rng.normal(size=n) * 3
        lb = -rng.uniform(0, 2, n)
        ub = rng.uniform(0, 2, n)
        sol = solve_qp(QpProblem(P=P, c=c, lb=lb, ub=ub))
        assert sol.status == OPTIMAL
        ref = fista_box(P, c, lb, ub)
        np.testing.assert_allclose(sol.x, ref, atol=1e-5)

    @given(st.integers(2, 10), st.integers(0, 10_000))
    def test_general_qp_matches_cvxpy(self, n, seed):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.1 * np.eye(n)
        c = rng.normal(size=n)
        A = rng.normal(size=(1, n))
        b = A @ rng.uniform(0.1, 0.9, n)
        G = rng.uniform(0, 1, size=(2, n))
        h = G @ np.full(n, 0.9) + 0.1
        sol = solve_qp(QpProblem(P=P, c=c, A=A, b=b, G=G, h=h, lb=np.zeros(n), ub=np.ones(n)))
        assert sol.status == OPTIMAL
        x = cp.Variable(n)
        cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(P)) + c @ x),
                   [A @ x == b, G @ x <= h, x >= 0, x <= 1]).solve()
        assert sol.objective <= 0.5 * x.value @ P @ x.value + c @ x.value + 1e-6
        np.testing.assert_allclose(sol.x, x.value, atol=1e-4)

    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_optimal_status_implies_small_residuals(self, n, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(n, n))
        sol = solve_qp(QpProblem(P=M @ M.T, c=rng.normal(size=n), G=rng.normal(size=(2, n)),
                                 h=rng.uniform(0.5, 1, 2), lb=-np.ones(n), ub=np.ones(n)), tolerance=1e-8)
        if sol.status == OPTIMAL:
            assert all(v <= 1e-8 for v in sol.residuals.values())
            assert np.all(sol.x >= -1 - 1e-9) and np.all(sol.x <= 1 + 1e-9)


def test_kkt_residuals_flag_a_wrong_point():
    prob = QpProblem(P=[[2.0]], c=[0.0], lb=[1.0])
    res = kkt_residuals(prob, np.array([2.0]), np.zeros(0), np.zeros(0), np.zeros(1), np.zeros(1))
    assert res["stationarity"] > 1


class TestCappedSimplex:
    def affine(self, p0=0.7, ell0=2.0, p1=1.0, alpha=0.5, beta=3.0):
        return [lambda z: p0 + ell0, lambda z: p1 + alpha + beta * z]

    def test_interior_split(self):
        x = minimize_capped_simplex_potential(self.affine(), [math.inf, 1.0])
        np.testing.assert_allclose(x, [0.6, 0.4], atol=1e-9)

    def test_binding_cap(self):
        x = minimize_capped_simplex_potential(self.affine(), [math.inf, 0.2])
        np.testing.assert_allclose(x, [0.8, 0.2], atol=1e-9)

    def test_identical_arcs_split_evenly(self):
        d = [lambda z: 1 + z] * 4
        np.testing.assert_allclose(minimize_capped_simplex_potential(d, [1] * 4), [0.25] * 4, atol=1e-9)

    def test_single_arc(self):
        np.testing.assert_allclose(minimize_capped_simplex_potential([lambda z: 3.0], [math.inf]), [1.0])

    def test_infeasible_caps(self):
        with pytest.raises(ValueError):
            minimize_capped_simplex_potential([lambda z: z, lambda z: z], [0.3, 0.3])

    @given(st.floats(0, 2), st.floats(0, 3), st.floats(0.1, 5), st.floats(0.05, 1.0))
    def test_matches_potential_grid(self, d0, alpha, beta, cap):
        x = minimize_capped_simplex_potential([lambda z: d0, lambda z: alpha + beta * z], [math.inf, cap])
        z = np.linspace(0, cap, 20001)
        potential = d0 * (1 - z) + alpha * z + 0.5 * beta * z ** 2
        assert abs(x[1] - z[np.argmin(potential)]) <= cap / 20000 + 1e-9

    @given(st.lists(st.tuples(st.floats(0, 2), st.floats(0.1, 4), st.sampled_from([1, 2, 4]),
                              st.floats(0.1, 1.0)), min_size=1, max_size=5), st.floats(0.5, 3))
    def test_variational_inequality(self, arcs, d0):
        delays = [lambda z: d0] + [lambda z, a=a, g=g, k=k: a + g * z ** k for a, g, k, _ in arcs]
        caps = [math.inf] + [c for *_, c in arcs]
        x = minimize_capped_simplex_potential(delays, caps)
        assert x.sum() == pytest.approx(1.0, abs=1e-10)
        assert np.all(x >= 0) and np.all(x[1:] <= np.array(caps[1:]) + 1e-12)
        d = np.array([f(v) for f, v in zip(delays, x)])
        open_arcs = [j for j in range(len(x)) if x[j] < min(caps[j], 1.0) - 1e-9]
        best_open = min(d[j] for j in open_arcs)
        for j in range(len(x)):
            if x[j] > 1e-6:
                assert d[j] <= best_open + 1e-6


class TestFindRoot:
    def test_linear(self):
        assert find_root(RootProblem(lambda x: x - 1, 0, 2)) == pytest.approx(1.0, abs=1e-8)

    def test_cube_root(self):
        assert find_root(RootProblem(lambda x: x ** 3 - 2, 0, 2)) == pytest.approx(2 ** (1 / 3), abs=1e-8)

    def test_with_derivative(self):
        r = find_root(RootProblem(lambda x: x ** 3 - 2, 0, 2, derivative=lambda x: 3 * x * x))
        assert r == pytest.approx(2 ** (1 / 3), abs=1e-8)

    def test_no_sign_change(self):
        with pytest.raises(ValueError, match="no sign change"):
            find_root(RootProblem(lambda x: x * x + 1, -1, 1))

    @given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(0.01, 3))
    def test_monotone_functions(self, r, a, width):
        root = find_root(RootProblem(lambda x: a * (x - r) ** 3 + (x - r), r - width, r + 2 * width))
        assert r - width <= root <= r + 2 * width
        assert abs(a * (root - r) ** 3 + (root - r)) <= 1e-8


class TestMaximize1d:
    def test_interior(self):
        x, v = maximize_1d(lambda x: -(x - 0.3) ** 2, 0, 1)
        assert x == pytest.approx(0.3, abs=1e-8)
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_constant_picks_left_end(self):
        assert maximize_1d(lambda x: 1.0, 0.5, 2.0)[0] == 0.5

    def test_boundary(self):
        assert maximize_1d(lambda x: x, 0, 1)[0] == 1.0

    @given(st.floats(-1, 1), st.floats(0.5, 5), st.floats(0, 1))
    def test_not_worse_than_fine_audit_grid(self, shift, k, phase):
        f = lambda x: -abs(x - shift) ** 1.5 + 0.1 * math.sin(k * x + phase)  # noqa: E731
        _, v = maximize_1d(f, -2, 2, grid_size=2001)
        audit = max(f(x) for x in np.linspace(-2, 2, 20001))
        assert v >= audit - 1e-6

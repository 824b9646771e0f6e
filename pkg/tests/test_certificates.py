import numpy as np
import pytest
from scipy.optimize import linprog, minimize

from adaprox.benchmarks import matrix_game, random_affine_vi
from adaprox.certificates import (
    GapReport,
    equilibrium_residual,
    probe_points,
    saddle_gap,
    vi_dual_gap,
)
from adaprox.geometry import Ball, Box, L1Term, Simplex
from adaprox.models import composite_saddle_model, vi_model

PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])
IDENTITY = (np.eye(2), np.zeros(2))


def identity(x):
    return x


class TestViDualGap:
    def test_at_solution(self):
        rep = vi_dual_gap(identity, Ball.unit(2), np.zeros(2), "exact", affine=IDENTITY)
        assert rep.measured_gap == pytest.approx(0.0, abs=1e-12)
        assert rep.method == "exact"

    def test_hand_value(self):
        # max 0.5 x1 - |x|^2 at x = (0.25, 0)
        rep = vi_dual_gap(identity, Ball.unit(2), np.array([0.5, 0.0]), "exact", affine=IDENTITY)
        assert rep.measured_gap == pytest.approx(0.0625, abs=1e-12)

    def test_probe_at_point_only(self):
        rep = vi_dual_gap(lambda x: x + 3.0, Ball.unit(2), np.array([0.5, 0.0]), probes=np.zeros((0, 2)))
        assert rep.measured_gap == 0.0
        assert rep.method == "probe_sample"

    def test_probe_is_lower_bound(self):
        y = np.array([0.5, 0.0])
        rep = vi_dual_gap(identity, Ball.unit(2), y, probes=2000, rng=0)
        assert rep.measured_gap <= 0.0625 + 1e-15
        assert rep.probe_count == 2001

    @pytest.mark.parametrize("kind", ["ball", "box", "simplex"])
    def test_exact_at_known_solution(self, kind):
        vi = random_affine_vi(6, 1, set_kind=kind)
        rep = vi_dual_gap(vi.operator, vi.feasible_set, vi.solution, "exact", affine=(vi.A, vi.b))
        assert rep.measured_gap <= 1e-9

    @pytest.mark.parametrize("kind", ["ball", "box"])
    def test_exact_matches_scipy(self, kind):
        vi = random_affine_vi(4, 2, set_kind=kind)
        rng = np.random.default_rng(3)
        y = vi.feasible_set.sample(rng, 1)[0] * 0.9
        rep = vi_dual_gap(vi.operator, vi.feasible_set, y, "exact", affine=(vi.A, vi.b))

        def neg(x):
            return -float(vi.operator(x) @ (y - x))

        if kind == "ball":
            cons = [{"type": "ineq", "fun": lambda x: 1.0 - x @ x}]
            res = minimize(neg, np.zeros(4), constraints=cons, method="SLSQP", options={"ftol": 1e-14})
        else:
            res = minimize(neg, np.zeros(4), bounds=[(-1, 1)] * 4, method="L-BFGS-B", options={"ftol": 1e-15})
        assert rep.measured_gap == pytest.approx(-res.fun, abs=1e-7)
        assert rep.measured_gap >= -res.fun - 1e-9

    def test_exact_needs_affine(self):
        with pytest.raises(ValueError):
            vi_dual_gap(identity, Ball.unit(2), np.zeros(2), "exact")

    def test_exact_needs_monotone(self):
        with pytest.raises(ValueError):
            vi_dual_gap(lambda x: -x, Ball.unit(2), np.zeros(2), "exact", affine=(-np.eye(2), np.zeros(2)))

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            vi_dual_gap(identity, Ball.unit(2), np.zeros(2), "oracle")

    def test_skew_operator(self):
        # pure rotation: H = 0, the gap is a linear maximization
        K = np.array([[0.0, 1.0], [-1.0, 0.0]])
        y = np.array([0.3, 0.4])
        rep = vi_dual_gap(lambda x: x @ K.T, Ball.unit(2), y, "exact", affine=(K, np.zeros(2)))
        # <Kx, y - x> = <x, K^T y>, maximized over the unit ball
        assert rep.measured_gap == pytest.approx(np.linalg.norm(K.T @ y))


class TestEquilibriumResidual:
    def test_single_probe_at_point(self):
        m = vi_model(lambda x: x + 1.0)
        y = np.array([0.2, 0.1])
        rep = equilibrium_residual(m, Ball.unit(2), y, y[None, :])
        assert rep.measured_gap == 0.0

    def test_at_solution_nonpositive(self):
        m = vi_model(identity, vectorized=True)
        rep = equilibrium_residual(m, Ball.unit(3), np.zeros(3), 5000, rng=0)
        assert rep.measured_gap <= 0.0
        assert rep.probe_count == 5000

    def test_empty(self):
        with pytest.raises(ValueError):
            equilibrium_residual(vi_model(identity), Ball.unit(2), np.zeros(2), np.zeros((0, 2)))

    def test_monotone_in_probe_count(self):
        vi = random_affine_vi(5, 4)
        m = vi.model()
        y = vi.feasible_set.sample(np.random.default_rng(5), 1)[0]
        vals = [equilibrium_residual(m, vi.feasible_set, y, k, rng=6).measured_gap for k in (10, 100, 1000, 5000)]
        assert vals == sorted(vals)

    def test_probe_prefix_stable(self):
        a = probe_points(Ball.unit(3), 100, rng=7)
        b = probe_points(Ball.unit(3), 1000, rng=7)
        np.testing.assert_array_equal(a, b[:100])

    def test_infeasible_dimension(self):
        with pytest.raises(ValueError):
            equilibrium_residual(vi_model(identity), Ball.unit(2), np.zeros(3), 10)

    def test_report_flag(self):
        rep = GapReport(0.1, "exact", certified_bound=0.2)
        assert rep.within_bound
        assert GapReport(0.1, "exact").within_bound is None


def _lp_gap(M, u, v):
    """Duality gap by two LPs over the simplices."""
    n1, n2 = M.shape
    upper = linprog(-(M.T @ u), A_eq=np.ones((1, n2)), b_eq=[1.0], bounds=[(0, None)] * n2)
    lower = linprog(M @ v, A_eq=np.ones((1, n1)), b_eq=[1.0], bounds=[(0, None)] * n1)
    return -upper.fun - lower.fun


class TestSaddleGap:
    def test_pennies_center(self):
        game = matrix_game(PENNIES)
        assert saddle_gap(game, [0.5, 0.5], [0.5, 0.5]).measured_gap == 0.0

    def test_pennies_pure_row(self):
        game = matrix_game(PENNIES)
        rep = saddle_gap(game, [1.0, 0.0], [0.5, 0.5])
        assert rep.measured_gap == 1.0
        assert rep.method == "exact"

    def test_zero_matrix(self):
        game = matrix_game(np.zeros((3, 2)))
        rng = np.random.default_rng(8)
        for _ in range(20):
            assert saddle_gap(game, rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2))).measured_gap == 0.0

    def test_matches_lp_and_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n1, n2 = rng.integers(2, 7, size=2)
            M = rng.standard_normal((n1, n2))
            u, v = rng.dirichlet(np.ones(n1)), rng.dirichlet(np.ones(n2))
            rep = saddle_gap(matrix_game(M), u, v)
            assert rep.measured_gap >= 0
            assert rep.measured_gap == pytest.approx(_lp_gap(M, u, v), abs=1e-9)

    def test_composite_terms_inner_solve(self):
        # f(u, v) = u^T M v + 0.5 ||u||_1 - 0.5 ||v||_1 over simplex x box
        M = np.array([[1.0, -2.0], [0.5, 1.0]])
        game = composite_saddle_model(
            lambda u, v: float(u @ M @ v),
            lambda u, v: (M @ v, M.T @ u),
            L1Term(0.5),
            L1Term(0.5),
            Simplex(2),
            Box(-np.ones(2), np.ones(2)),
            bilinear=M,
        )
        u, v = np.array([0.3, 0.7]), np.array([0.2, -0.4])
        rep = saddle_gap(game, u, v)
        # brute force on grids
        vv = np.stack(np.meshgrid(np.linspace(-1, 1, 401), np.linspace(-1, 1, 401)), -1).reshape(-1, 2)
        upper = np.max(vv @ (M.T @ u) - 0.5 * np.abs(vv).sum(1)) + 0.5
        t = np.linspace(0, 1, 4001)
        uu = np.stack([t, 1 - t], 1)
        lower = np.min(uu @ (M @ v) + 0.5) - 0.5 * np.abs(v).sum()
        assert rep.measured_gap == pytest.approx(upper - lower, abs=1e-6)
        assert rep.measured_gap >= 0

    def test_general_f_inner_solve(self):
        game = composite_saddle_model(
            lambda u, v: float(u @ u - v @ v + u @ v),
            lambda u, v: (2 * u + v, -2 * v + u),
            None,
            None,
            Ball.unit(2),
            Ball.unit(2),
        )
        # saddle point at the origin: gap 0
        rep = saddle_gap(game, np.zeros(2), np.zeros(2), tol=1e-9)
        assert rep.measured_gap == pytest.approx(0.0, abs=1e-8)
        u, v = np.array([0.5, 0.0]), np.array([0.0, 0.5])
        rep = saddle_gap(game, u, v, tol=1e-9)
        # max_v f(u, v) at v = u/2; min_u f(u, v) at u = -v/2
        upper = 0.25 + 0.0625
        lower = -0.0625 - 0.25
        assert rep.measured_gap == pytest.approx(upper - lower, abs=1e-6)

    def test_needs_product_domain(self):
        from adaprox.benchmarks import fts_reference_instance, fts_saddle

        model = fts_saddle(fts_reference_instance())
        with pytest.raises(ValueError):
            saddle_gap(model, np.zeros(10), np.zeros(100))

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            saddle_gap(matrix_game(PENNIES), [0.5, 0.5], [0.5, 0.5], "probe_sample")

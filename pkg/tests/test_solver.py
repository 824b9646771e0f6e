import math
import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from adaprox.benchmarks import holder_vi, matrix_game, random_affine_vi
from adaprox.certificates import averaged_residual, probe_points, saddle_gap, vi_dual_gap
from adaprox.geometry import Ball, EntropySetup, EuclideanSetup, ProductSetup, Simplex
from adaprox.models import EquilibriumModel, vi_model
from adaprox.solver import (
    AdaptiveProxSolver,
    IterationRecord,
    SmoothnessOverflowError,
    SolverConfig,
    UncertifiedBoundWarning,
    check_condition,
    ergodic_point,
    prox_budget,
    run,
    theoretical_bound,
)

EUC = EuclideanSetup()
PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _record(k, L, y):
    y = np.asarray(y, dtype=float)
    return IterationRecord(k, L, y, y, 2, 1, 0.0)


class TestCheckCondition:
    def test_identical_points(self):
        m = vi_model(lambda y: 3 * y)
        p = np.array([0.2, -0.1])
        assert check_condition(m, EUC, p, p, p, 1e-9)

    def test_lipschitz_affine(self):
        vi = random_affine_vi(5, 0, lipschitz=2.0)
        m = vi.model()
        rng = np.random.default_rng(0)
        P = vi.feasible_set.sample(rng, 3000).reshape(1000, 3, 5)
        for a, b, c in P:
            assert check_condition(m, EUC, a, b, c, vi.lipschitz)

    def test_violation_hand_triple(self):
        # lhs = psi(2, 1) = 10; rhs = psi(0, 1) + psi(2, 0) + V(2, 0) + V(0, 1) = -10 + 0 + 2 + 0.5
        m = vi_model(lambda y: 10 * y)
        assert not check_condition(m, EUC, np.array([1.0]), np.array([0.0]), np.array([2.0]), 1.0)

    def test_literal_form_is_stricter(self):
        m = vi_model(lambda y: 10 * y)
        rng = np.random.default_rng(1)
        passes = {False: 0, True: 0}
        for a, b, c in rng.uniform(-1, 1, (2000, 3, 1)):
            lit = check_condition(m, EUC, a, b, c, 4.0, literal=True)
            cor = check_condition(m, EUC, a, b, c, 4.0)
            assert cor or not lit
            passes[True] += lit
            passes[False] += cor
        assert passes[True] < passes[False]

    def test_rounding_near_convergence(self):
        # x+ and x differ by one ulp: psi values are pure rounding, L must not be rejected
        b = np.array([1.0, -2.0, 0.5])
        m = vi_model(lambda y: y + b)
        x = np.array([0.1, 0.2, 0.3])
        x_new = np.nextafter(x, 1.0)
        assert check_condition(m, EUC, x, x, x_new, 1e-6)

    def test_converged_run_keeps_L(self):
        vi = random_affine_vi(35, 13, set_kind="simplex")
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(1e-3))
        assert trace.accepted_L.max() <= 2 * max(vi.lipschitz, 1.0)

    def test_delta_slack(self):
        m = vi_model(lambda y: 10 * y, delta=20.0)
        assert check_condition(m, EUC, np.array([1.0]), np.array([0.0]), np.array([2.0]), 1.0)


class TestErgodicPoint:
    def test_equal_weights(self):
        recs = [_record(k, 2.0, [k, 1.0]) for k in range(1, 4)]
        np.testing.assert_allclose(ergodic_point(recs), [2.0, 1.0])

    def test_single(self):
        np.testing.assert_array_equal(ergodic_point([_record(1, 5.0, [0.3, 0.4])]), [0.3, 0.4])

    def test_weighted(self):
        recs = [_record(1, 1.0, [0.0, 0.0]), _record(2, 2.0, [3.0, 0.0])]
        np.testing.assert_allclose(ergodic_point(recs), [1.0, 0.0])

    def test_empty(self):
        with pytest.raises(ValueError):
            ergodic_point([])


class TestRun:
    def test_zero_operator(self):
        x0 = np.array([0.1, 0.2])
        trace = run(vi_model(lambda y: 0 * y), Ball.unit(2), EUC, SolverConfig(0.1, x0=x0))
        assert all(r.condition_checks == 1 for r in trace.records)
        np.testing.assert_allclose(trace.ergodic_point, x0)
        assert trace.stop_reason == "criterion_met"

    def test_matching_pennies(self):
        game = matrix_game(PENNIES)
        trace = run(game, game.feasible_set, EUC, SolverConfig(1e-3))
        u, v = game.split_point(trace.ergodic_point)
        assert saddle_gap(game, u, v).measured_gap <= 1e-3
        np.testing.assert_allclose(trace.ergodic_point, 0.5, atol=1e-3)

    def test_identity_operator_residual(self):
        g = lambda y: y  # noqa: E731
        trace = run(vi_model(g, vectorized=True), Ball.unit(3), EUC, SolverConfig(1e-3, x0=np.array([0.5, -0.5, 0.2])))
        gap = vi_dual_gap(g, Ball.unit(3), trace.ergodic_point, "exact", affine=(np.eye(3), np.zeros(3)))
        assert gap.measured_gap <= 1e-3

    def test_trace_invariants(self):
        vi = random_affine_vi(8, 2)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(1e-2))
        assert trace.S_N == pytest.approx(sum(1.0 / r.L for r in trace.records), rel=1e-13)
        assert vi.feasible_set.contains(trace.ergodic_point)
        assert all(r.prox_calls >= 2 for r in trace.records)
        assert trace.total_prox_calls == sum(r.prox_calls for r in trace.records)
        assert trace.criterion_met

    def test_prox_budget_identity(self):
        # each outer iteration halves L once, so the step-2 pass count is exact
        vi = random_affine_vi(6, 3, lipschitz=5.0)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(1e-2, L0=0.01))
        assert trace.total_condition_checks == pytest.approx(prox_budget(trace), abs=1e-9)
        assert trace.total_prox_calls == 2 * trace.total_condition_checks

    @pytest.mark.parametrize("L0", [0.01, 1.0, 100.0])
    def test_accepted_L_ceiling(self, L0):
        vi = random_affine_vi(6, 4, lipschitz=3.0)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(1e-2, L0=L0))
        assert trace.accepted_L.max() <= 2 * max(vi.lipschitz, L0) * (1 + 1e-12)

    def test_iteration_bound(self):
        vi = random_affine_vi(6, 5, lipschitz=2.0)
        for eps in (1e-1, 1e-2, 1e-3):
            trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(eps, L0=vi.lipschitz))
            assert trace.n_iter <= math.ceil(2 * vi.lipschitz * trace.diameter_bound / eps) + 1

    def test_holder_operator_terminates(self):
        model = holder_vi(0.5, 1.0, 4, seed=6, skew=0.3, delta=0.025)
        trace = run(model, Ball.unit(4), EUC, SolverConfig(0.05, x0=np.full(4, 0.4)))
        assert trace.stop_reason == "criterion_met"

    def test_certificate_validity(self):
        vi = random_affine_vi(5, 7)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(1e-2))
        bound = theoretical_bound(trace)
        P = probe_points(vi.feasible_set, 5000, rng=8)
        assert averaged_residual(trace, vi.model(), P).max() <= bound + 1e-12
        gap = vi_dual_gap(vi.operator, vi.feasible_set, trace.ergodic_point, "exact", affine=(vi.A, vi.b))
        assert gap.measured_gap <= bound + 1e-9

    def test_deterministic(self):
        vi = random_affine_vi(5, 9)
        cfg = SolverConfig(1e-2, delta_tilde=1e-3, exhaust_prox_tolerance=True, seed=3)
        a = run(vi.model(), vi.feasible_set, EUC, cfg)
        b = run(vi.model(), vi.feasible_set, EUC, cfg)
        assert a.n_iter == b.n_iter
        for ra, rb in zip(a.records, b.records):
            assert ra.L == rb.L
            np.testing.assert_array_equal(ra.y, rb.y)
        np.testing.assert_array_equal(a.ergodic_point, b.ergodic_point)

    def test_iteration_cap(self):
        vi = random_affine_vi(5, 10)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(1e-6, max_outer_iterations=3))
        assert trace.stop_reason == "iteration_cap"
        assert trace.n_iter == 3
        with pytest.warns(UncertifiedBoundWarning):
            theoretical_bound(trace)

    def test_overflow(self):
        # psi = -1 off and on the diagonal: the check can never pass
        bad = EquilibriumModel(
            lambda x, y: -1.0,
            lambda x, y: np.zeros_like(x),
            split=lambda a: (np.zeros_like(a), None, -1.0),
        )
        with pytest.raises(SmoothnessOverflowError):
            run(bad, Ball.unit(2), EUC, SolverConfig(0.1))

    def test_callback(self):
        seen = []
        vi = random_affine_vi(3, 11)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(0.1), callback=seen.append)
        assert [r.index for r in seen] == list(range(1, trace.n_iter + 1))

    def test_stop_at_criterion_off(self):
        vi = random_affine_vi(3, 12)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(0.1, stop_at_criterion=False, max_outer_iterations=50))
        assert trace.n_iter == 50
        assert trace.stop_reason == "iteration_cap"
        assert trace.criterion_met

    def test_entropy_game(self):
        game = matrix_game([[2.0, 0.0], [0.0, 1.0]])
        setup = ProductSetup([EntropySetup(), EntropySetup()], [2, 2])
        trace = run(game, game.feasible_set, setup, SolverConfig(1e-3))
        u, v = game.split_point(trace.ergodic_point)
        assert saddle_gap(game, u, v).measured_gap <= theoretical_bound(trace) + 1e-9
        assert trace.diameter_bound == pytest.approx(2 * np.log(2))


class TestTheoreticalBound:
    def test_within_epsilon(self):
        vi = random_affine_vi(4, 13)
        trace = run(vi.model(), vi.feasible_set, EUC, SolverConfig(0.05))
        assert theoretical_bound(trace) <= 0.05

    def test_slack_terms(self):
        vi = random_affine_vi(4, 14)
        cfg = SolverConfig(0.1, delta_tilde=0.01)
        trace = run(vi.model(0.005), vi.feasible_set, EUC, cfg)
        assert theoretical_bound(trace) <= 0.125 + 1e-15

    def test_substitution(self):
        vi = random_affine_vi(4, 15)
        trace = run(vi.model(0.005), vi.feasible_set, EUC, SolverConfig(0.1, delta_tilde=0.01))
        trace.S_N = 2 * trace.diameter_bound / 0.1
        assert theoretical_bound(trace) == pytest.approx(0.05 + 0.02 + 0.005)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(epsilon=0.0), dict(epsilon=-1.0), dict(epsilon=0.1, L0=0.0), dict(epsilon=0.1, max_outer_iterations=0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)

    def test_x0_dimension(self):
        with pytest.raises(ValueError):
            run(vi_model(lambda y: y), Ball.unit(2), EUC, SolverConfig(0.1, x0=np.zeros(3)))


class TestEstimator:
    def test_params_roundtrip(self):
        est = AdaptiveProxSolver(epsilon=1e-2, L0=3.0)
        assert est.get_params()["L0"] == 3.0
        assert clone(est).get_params() == est.get_params()
        est.set_params(epsilon=0.5)
        assert est.epsilon == 0.5

    def test_fit_predict_saddle(self):
        game = matrix_game([[2.0, 0.0], [0.0, 1.0]])
        est = AdaptiveProxSolver(epsilon=1e-3).fit(game)
        np.testing.assert_allclose(est.u_, [1 / 3, 2 / 3], atol=1e-2)
        np.testing.assert_allclose(est.v_, [1 / 3, 2 / 3], atol=1e-2)
        np.testing.assert_array_equal(est.predict(), est.solution_)
        assert est.certified_bound_ <= 1e-3
        assert est.n_iter_ == est.trace_.n_iter

    def test_fit_vi_needs_set(self):
        vi = random_affine_vi(3, 16)
        with pytest.raises(ValueError):
            AdaptiveProxSolver().fit(vi.model())
        est = AdaptiveProxSolver(epsilon=0.1).fit(vi.model(), vi.feasible_set)
        assert not hasattr(est, "u_")

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            AdaptiveProxSolver().predict()

    def test_entropy_setup_by_name(self):
        model = vi_model(lambda y: y - np.array([0.5, 0.3, 0.2]))
        est = AdaptiveProxSolver(epsilon=1e-2, setup="entropy").fit(model, Simplex(3))
        np.testing.assert_allclose(est.solution_, [0.5, 0.3, 0.2], atol=0.05)

    def test_uncertified_bound_is_silent_in_fit(self):
        vi = random_affine_vi(3, 17)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            AdaptiveProxSolver(epsilon=1e-6, max_outer_iterations=2).fit(vi.model(), vi.feasible_set)

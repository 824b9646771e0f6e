"""Adaptive proximal (extragradient-type) method for abstract equilibrium problems.

Each outer iteration halves the running smoothness estimate ``L`` and then
solves two prox subproblems anchored at the current point,

    y = argmin_x psi(x, x_N) + L V(x, x_N)
    x = argmin_x psi(x, y)   + L V(x, x_N),

doubling ``L`` until the smoothness check passes.  The run stops once
``S_N = sum 1/L_k`` reaches ``max V(x, x0) / epsilon``; the output is the
``1/L``-weighted average of the ``y`` iterates.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import check_point, check_scalar
from .geometry import EuclideanSetup, ProxSolveError, make_setup, solve_prox_subproblem
from .models import SaddleModel, as_equilibrium_model

L_OVERFLOW = 2.0**60


class SmoothnessOverflowError(RuntimeError):
    """Backtracking pushed ``L`` past ``2**60 * L0``; the model is not smooth in the required sense."""


class UncertifiedBoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float
    L0: float = 1.0
    delta_tilde: float = 0.0
    max_outer_iterations: int = 100_000
    x0: Optional[np.ndarray] = None
    diameter_bound: Optional[float] = None
    literal_condition: bool = False
    stop_at_criterion: bool = True
    exhaust_prox_tolerance: bool = False
    seed: Optional[int] = None
    max_inner_iterations: int = 5000

    def __post_init__(self):
        check_scalar(self.epsilon, "epsilon", min_val=0, strict=True)
        check_scalar(self.L0, "L0", min_val=0, strict=True)
        check_scalar(self.delta_tilde, "delta_tilde", min_val=0)
        check_scalar(self.max_outer_iterations, "max_outer_iterations", min_val=1, integer=True)
        if self.diameter_bound is not None:
            check_scalar(self.diameter_bound, "diameter_bound", min_val=0, strict=True)


@dataclass(frozen=True, eq=False)
class IterationRecord:
    index: int
    L: float
    x: np.ndarray
    y: np.ndarray
    prox_calls: int
    condition_checks: int
    S: float


@dataclass(eq=False)
class SolverTrace:
    records: list
    S_N: float
    ergodic_point: np.ndarray
    total_prox_calls: int
    total_condition_checks: int
    stop_reason: str
    x0: np.ndarray
    diameter_bound: float
    epsilon: float
    L0: float
    delta: float
    delta_tilde: float
    max_prox_tolerance: float = 0.0
    literal_condition: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_iter(self):
        return len(self.records)

    @property
    def accepted_L(self):
        return np.array([r.L for r in self.records])

    @property
    def criterion_met(self):
        return self.diameter_bound / self.S_N <= self.epsilon


def _terms_slack(terms, grads, points):
    # rounding of <g, x - y> is of order eps |g| |x| even when x and y coincide
    scale = sum(np.linalg.norm(g) for g in grads) * max(np.linalg.norm(p) for p in points)
    return 8.0 * np.finfo(float).eps * (sum(abs(t) for t in terms) + scale)


def check_condition(model, setup, x_prev, y_new, x_new, L_trial, *, literal=False):
    """Smoothness check that accepts ``L_trial`` for one outer iteration.

    Tests ``psi(x+, x) <= psi(y, x) + psi(x+, y) + L V(x+, y) + L V(y, x) + delta``.
    ``literal=True`` replaces ``V(x+, y)`` by ``V(y, y) = 0``.  That shrinks the
    right-hand side, so the literal test is stricter: any ``L`` it accepts
    also passes the corrected test.  Kept for comparison only.
    """
    model = as_equilibrium_model(model)
    lhs = model.psi(x_new, x_prev)
    a = model.psi(y_new, x_prev)
    b = model.psi(x_new, y_new)
    v_back = L_trial * setup.divergence(y_new, x_prev)
    v_fwd = 0.0 if literal else L_trial * setup.divergence(x_new, y_new)
    rhs = a + b + v_fwd + v_back + model.delta
    grads = (model.psi_subgrad_x(x_new, x_prev), model.psi_subgrad_x(x_new, y_new))
    slack = _terms_slack((lhs, a, b, v_fwd, v_back), grads, (x_prev, y_new, x_new))
    return bool(lhs <= rhs + slack)


def ergodic_point(records):
    """``1/L``-weighted average of the ``y`` iterates of ``records``."""
    if len(records) == 0:
        raise ValueError("ergodic point needs at least one completed iteration")
    w = np.array([1.0 / r.L for r in records])
    Y = np.array([r.y for r in records])
    return (w / w.sum()) @ Y


def _prox(feasible_set, setup, phi, config, rng, start):
    """Inexact prox step; the second value is the tolerance missed beyond ``delta_tilde`` (0 if met)."""
    try:
        y, _ = solve_prox_subproblem(
            feasible_set,
            setup,
            phi,
            config.delta_tilde,
            max_iter=config.max_inner_iterations,
            start=start,
            rng=rng,
        )
        return y, 0.0
    except ProxSolveError as err:
        return err.point, err.achieved_tolerance


def run(model, feasible_set, setup, config, *, callback=None):
    """Run the adaptive method and return a :class:`SolverTrace`.

    Raises :class:`SmoothnessOverflowError` if backtracking diverges.
    Hitting ``config.max_outer_iterations`` is not an error; the trace then
    has ``stop_reason == "iteration_cap"``.
    """
    eq = as_equilibrium_model(model)
    if config.x0 is not None:
        x0 = check_point(config.x0, dim=feasible_set.dim, name="x0")
    else:
        x0 = feasible_set.prox_center(setup)
    if config.diameter_bound is not None:
        D = float(config.diameter_bound)
    else:
        D = float(feasible_set.diameter_bound(setup, x0))
    rng = np.random.default_rng(config.seed) if config.exhaust_prox_tolerance else None

    x = x0
    L = float(config.L0)
    L_cap = L_OVERFLOW * config.L0
    S = 0.0
    records = []
    total_calls = total_checks = 0
    worst_tol = 0.0
    stop_reason = "iteration_cap"
    y = None
    L_floor = config.L0 / L_OVERFLOW
    for k in range(config.max_outer_iterations):
        # floor only prevents float underflow when iterates sit at a fixed point
        L = max(L / 2.0, L_floor)
        calls = checks = 0
        while True:
            y, ty = _prox(feasible_set, setup, eq.prox_objective(setup, x, L, x), config, rng, y)
            x_new, tx = _prox(feasible_set, setup, eq.prox_objective(setup, y, L, x), config, rng, y)
            calls += 2
            checks += 1
            worst_tol = max(worst_tol, ty, tx)
            if check_condition(eq, setup, x, y, x_new, L, literal=config.literal_condition):
                break
            L *= 2.0
            if L > L_cap:
                raise SmoothnessOverflowError(
                    f"L exceeded 2**60 * L0 at iteration {k + 1}; check the model's delta and smoothness"
                )
        S += 1.0 / L
        total_calls += calls
        total_checks += checks
        rec = IterationRecord(k + 1, L, x_new, y, calls, checks, S)
        records.append(rec)
        if callback is not None:
            callback(rec)
        x = x_new
        if config.stop_at_criterion and D / S <= config.epsilon:
            stop_reason = "criterion_met"
            break

    if not records:
        raise ValueError("solver completed no iterations")
    return SolverTrace(
        records=records,
        S_N=S,
        ergodic_point=ergodic_point(records),
        total_prox_calls=total_calls,
        total_condition_checks=total_checks,
        stop_reason=stop_reason,
        x0=x0,
        diameter_bound=D,
        epsilon=config.epsilon,
        L0=config.L0,
        delta=eq.delta,
        delta_tilde=config.delta_tilde,
        max_prox_tolerance=worst_tol,
        literal_condition=config.literal_condition,
    )


def theoretical_bound(trace, model=None, config=None):
    """Certified upper bound ``D / S_N + 2 delta~ + delta`` on ``sup_x psi(y~, x)``.

    ``delta~`` is the larger of the requested prox tolerance and the worst
    tolerance achieved by an inner solve that missed it.  The bound is valid after any number of
    iterations; if ``S_N`` has not reached ``D / epsilon`` it is not below
    ``epsilon + 2 delta~ + delta`` and an :class:`UncertifiedBoundWarning` is issued.
    """
    delta = trace.delta if model is None else as_equilibrium_model(model).delta
    dt = trace.delta_tilde if config is None else config.delta_tilde
    dt = max(dt, trace.max_prox_tolerance)
    if not trace.criterion_met:
        warnings.warn(
            "stopping criterion not reached; bound exceeds epsilon + 2 delta~ + delta",
            UncertifiedBoundWarning,
            stacklevel=2,
        )
    return trace.diameter_bound / trace.S_N + 2.0 * dt + delta


def prox_budget(trace):
    """``2N + log2(L_N / L0)``, the number of step-2 passes the method needs."""
    return 2 * trace.n_iter + math.log2(trace.records[-1].L / trace.L0)


class AdaptiveProxSolver(BaseEstimator):
    """Estimator wrapper around :func:`run`.

    ``fit`` takes an :class:`~adaprox.models.EquilibriumModel` (with a feasible
    set) or a :class:`~adaprox.models.SaddleModel` (which carries its own).

    Fitted attributes: ``trace_``, ``solution_`` (the ergodic point),
    ``n_iter_``, ``certified_bound_`` and, for saddle models, ``u_`` and ``v_``.
    """

    def __init__(
        self,
        epsilon=1e-3,
        L0=1.0,
        delta_tilde=0.0,
        max_outer_iterations=100_000,
        setup="euclidean",
        x0=None,
        diameter_bound=None,
        literal_condition=False,
        stop_at_criterion=True,
        exhaust_prox_tolerance=False,
        random_state=None,
    ):
        self.epsilon = epsilon
        self.L0 = L0
        self.delta_tilde = delta_tilde
        self.max_outer_iterations = max_outer_iterations
        self.setup = setup
        self.x0 = x0
        self.diameter_bound = diameter_bound
        self.literal_condition = literal_condition
        self.stop_at_criterion = stop_at_criterion
        self.exhaust_prox_tolerance = exhaust_prox_tolerance
        self.random_state = random_state

    def _config(self):
        return SolverConfig(
            epsilon=self.epsilon,
            L0=self.L0,
            delta_tilde=self.delta_tilde,
            max_outer_iterations=self.max_outer_iterations,
            x0=self.x0,
            diameter_bound=self.diameter_bound,
            literal_condition=self.literal_condition,
            stop_at_criterion=self.stop_at_criterion,
            exhaust_prox_tolerance=self.exhaust_prox_tolerance,
            seed=self.random_state,
        )

    def _setup(self):
        if isinstance(self.setup, str):
            return make_setup(self.setup)
        return EuclideanSetup() if self.setup is None else self.setup

    def fit(self, model, feasible_set=None):
        if feasible_set is None:
            if not isinstance(model, SaddleModel):
                raise ValueError("feasible_set is required for non-saddle models")
            feasible_set = model.feasible_set
        config = self._config()
        self.trace_ = run(model, feasible_set, self._setup(), config)
        self.solution_ = self.trace_.ergodic_point
        self.n_iter_ = self.trace_.n_iter
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UncertifiedBoundWarning)
            self.certified_bound_ = theoretical_bound(self.trace_)
        if isinstance(model, SaddleModel):
            self.u_, self.v_ = model.split_point(self.solution_)
        return self

    def predict(self, X=None):
        """Return the ergodic solution (``X`` is ignored; kept for API symmetry)."""
        if not hasattr(self, "solution_"):
            raise NotFittedError("AdaptiveProxSolver is not fitted yet")
        return self.solution_

"""Equilibrium models ``psi(x, y)`` and their constructors.

A model is a bifunction that is convex in ``x``, vanishes on the diagonal and
is (for the built-in constructors) abstractly monotone,
``psi(x, y) + psi(y, x) <= 0``.  Each model also declares ``delta``, the slack
it needs in the generalized smoothness inequality

    psi(x, y) <= psi(x, z) + psi(z, y) + L V(x, z) + L V(z, y) + delta.

The solver only touches a model through ``psi``, ``psi_subgrad_x`` and, when
available, ``split``: the decomposition ``psi(x, a) = <c(a), x> + term(x) + const(a)``
that lets prox subproblems be solved in closed form.
"""
import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .geometry import BlockTerm, ConvexTerm, FeasibleSet, ProductSet, ProxObjective, ZeroTerm


@dataclass(frozen=True, eq=False)
class EquilibriumModel:
    psi: Callable
    psi_subgrad_x: Callable
    delta: float = 0.0
    split: Optional[Callable] = None
    psi_pairs: Optional[Callable] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("model inexactness delta must be >= 0")

    def prox_objective(self, setup, anchor, weight, center):
        """``phi(x) = psi(x, anchor) + weight * V(x, center)`` as a prox objective."""
        if self.split is not None:
            linear, term, _ = self.split(anchor)
            return ProxObjective(setup, linear, weight, center, term)
        term = _AnchoredTerm(self, anchor)
        return ProxObjective(setup, np.zeros_like(anchor), weight, center, term)

    def evaluate_pairs(self, X, Y):
        """Row-wise ``psi(X[i], Y[i])``."""
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        X, Y = np.broadcast_arrays(X, Y)
        if self.psi_pairs is not None:
            return np.asarray(self.psi_pairs(X, Y), dtype=float)
        return np.array([self.psi(a, b) for a, b in zip(X, Y)])


class _AnchoredTerm(ConvexTerm):
    def __init__(self, model, anchor):
        self.model = model
        self.anchor = anchor

    def value(self, x):
        return float(self.model.psi(x, self.anchor))

    def subgrad(self, x):
        return np.asarray(self.model.psi_subgrad_x(x, self.anchor), dtype=float)


@dataclass(frozen=True, eq=False)
class SaddleModel:
    """Equilibrium model of a convex-concave saddle problem ``min_u max_v f(u, v)``.

    ``blocks`` is ``(Q1, Q2)`` for product domains and ``None`` when the
    domain couples ``u`` and ``v`` (as the Lagrangian ball does).  ``bilinear``
    holds ``M`` when ``f(u, v) = u^T M v + h(u) - phi(v)``, which makes the
    duality gap exactly computable.
    """

    base: EquilibriumModel
    f: Callable
    n_u: int
    feasible_set: FeasibleSet
    blocks: Optional[tuple] = None
    bilinear: Optional[np.ndarray] = None
    h: Optional[ConvexTerm] = None
    phi: Optional[ConvexTerm] = None
    f_tilde: Optional[Callable] = None
    f_tilde_grad: Optional[Callable] = None

    @property
    def delta(self):
        return self.base.delta

    def psi(self, x, y):
        return self.base.psi(x, y)

    def split_point(self, x):
        return x[: self.n_u], x[self.n_u :]

    def f_at(self, x):
        u, v = self.split_point(x)
        return float(self.f(u, v))


def as_equilibrium_model(model):
    return model.base if isinstance(model, SaddleModel) else model


def _vi_pairs(g):
    def pairs(X, Y):
        G = g(Y)
        return np.einsum("ij,ij->i", G, X - Y)

    return pairs


def vi_model(g, delta=0.0, *, vectorized=False, meta=None):
    """Variational inequality model ``psi(x, y) = <g(y), x - y>``.

    With ``vectorized=True``, ``g`` must also map a stack of points (rows) to a
    stack of operator values; this speeds up probing considerably.
    """

    def psi(x, y):
        return float(g(y) @ (x - y))

    def subgrad(x, y):
        return np.asarray(g(y), dtype=float)

    def split(a):
        ga = np.asarray(g(a), dtype=float)
        return ga, None, -float(ga @ a)

    return EquilibriumModel(
        psi,
        subgrad,
        float(delta),
        split=split,
        psi_pairs=_vi_pairs(g) if vectorized else None,
        meta=dict(meta or {}, operator=g),
    )


def _term_values(term, X):
    if hasattr(term, "values"):
        return term.values(X)
    return np.array([term.value(x) for x in X])


def mixed_vi_model(g, h, delta=0.0, *, vectorized=False, meta=None):
    """Mixed VI model ``psi(x, y) = <g(y), x - y> + h(x) - h(y)`` for convex ``h``."""
    if h is None:
        h = ZeroTerm()

    def psi(x, y):
        return float(g(y) @ (x - y)) + h.value(x) - h.value(y)

    def subgrad(x, y):
        return np.asarray(g(y), dtype=float) + h.subgrad(x)

    def split(a):
        ga = np.asarray(g(a), dtype=float)
        return ga, h, -float(ga @ a) - h.value(a)

    pairs = None
    if vectorized:
        base = _vi_pairs(g)

        def pairs(X, Y):
            return base(X, Y) + _term_values(h, X) - _term_values(h, Y)

    return EquilibriumModel(
        psi, subgrad, float(delta), split=split, psi_pairs=pairs, meta=dict(meta or {}, operator=g, h=h)
    )


def composite_saddle_model(f_tilde, f_tilde_grad, h, phi, Q1, Q2, delta=0.0, *, bilinear=None, g_batch=None):
    """Composite saddle ``f(u, v) = f~(u, v) + h(u) - phi(v)`` over ``Q1 x Q2``.

    ``f_tilde_grad(u, v)`` returns ``(df/du, df/dv)``.  The model is
    ``psi(x, y) = <g~(y), x - y> + h(u_x) + phi(v_x) - h(u_y) - phi(v_y)``
    with ``g~(y) = (df/du, -df/dv)`` at ``y``.  ``g_batch`` optionally maps a
    stack of points to a stack of ``g~`` values.
    """
    n_u = Q1.dim
    h = h if h is not None else ZeroTerm()
    phi = phi if phi is not None else ZeroTerm()
    term = BlockTerm([h, phi], [Q1.dim, Q2.dim])

    def g(y):
        gu, gv = f_tilde_grad(y[:n_u], y[n_u:])
        return np.concatenate([np.asarray(gu, dtype=float), -np.asarray(gv, dtype=float)])

    def f(u, v):
        return float(f_tilde(u, v)) + h.value(u) - phi.value(v)

    composite = not (isinstance(h, ZeroTerm) and isinstance(phi, ZeroTerm))
    if composite:
        base = mixed_vi_model(g, term, delta)
        if g_batch is not None:
            vi_pairs = _vi_pairs(g_batch)
            base = replace(
                base,
                psi_pairs=lambda X, Y: vi_pairs(X, Y) + _term_values(term, X) - _term_values(term, Y),
            )
    else:
        base = vi_model(g, delta)
        if g_batch is not None:
            base = replace(base, psi_pairs=_vi_pairs(g_batch))
    return SaddleModel(
        base,
        f,
        n_u,
        ProductSet([Q1, Q2]),
        blocks=(Q1, Q2),
        bilinear=None if bilinear is None else np.asarray(bilinear, dtype=float),
        h=h,
        phi=phi,
        f_tilde=f_tilde,
        f_tilde_grad=f_tilde_grad,
    )


def lagrangian_saddle_model(objective, constraints, n, joint_set, delta=0.0, *, literal_operator=False):
    """Lagrangian saddle ``L(x, lam) = f(x) + sum_p lam_p phi_p(x)`` as a VI model.

    ``objective(x)`` returns ``(f(x), subgradient)``; ``constraints(x)`` returns
    ``(values, jacobian)`` with one subgradient row per constraint (``m = 0``
    is allowed).  The stacked variable is ``(x, lam)`` living in ``joint_set``.

    The operator is the saddle operator ``(dL/dx, -dL/dlam)``.  With
    ``literal_operator=True`` the multiplier block is ``+phi(x)`` instead,
    which is how the constrained Fermat-Torricelli-Steiner example writes it;
    that variant is not the saddle operator of ``L``.
    """
    sign = 1.0 if literal_operator else -1.0

    def g(z):
        x, lam = z[:n], z[n:]
        _, gf = objective(x)
        vals, jac = constraints(x)
        gx = np.asarray(gf, dtype=float)
        if len(lam):
            gx = gx + np.asarray(jac).T @ lam
        return np.concatenate([gx, sign * np.asarray(vals, dtype=float)])

    def lagrangian(x, lam):
        fx, _ = objective(x)
        vals, _ = constraints(x)
        return float(fx) + (float(np.asarray(vals) @ lam) if len(lam) else 0.0)

    base = vi_model(g, delta, meta={"literal_operator": literal_operator})
    return SaddleModel(base, lagrangian, n, joint_set)


def check_monotonicity(model, sampler, trials=1000, rng=None):
    """Largest observed ``psi(x, y) + psi(y, x)`` over random pairs.

    ``sampler`` is a :class:`FeasibleSet` or a callable ``(rng, k) -> points``.
    A diagnostic, not a solver gate: monotone models return ``<= 0``.
    """
    model = as_equilibrium_model(model)
    rng = np.random.default_rng(rng)
    draw = sampler.sample if isinstance(sampler, FeasibleSet) else sampler
    X = draw(rng, trials)
    Y = draw(rng, trials)
    s = model.evaluate_pairs(X, Y) + model.evaluate_pairs(Y, X)
    return float(np.max(s))


def _pair_noise(x, y, seed):
    h = hashlib.blake2b(digest_size=8)
    h.update(np.int64(seed).tobytes())
    h.update(np.ascontiguousarray(x, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return int.from_bytes(h.digest(), "little") / 2.0**64 * 2.0 - 1.0


def with_injected_noise(model, amplitude, seed=0):
    """Wrap ``model`` so every ``psi`` value carries deterministic noise.

    Each evaluation is perturbed by at most ``amplitude / 3`` (zero on the
    diagonal), so the three ``psi`` values of the smoothness inequality move by
    at most ``amplitude`` in total; the declared ``delta`` grows by
    ``amplitude``.  Subgradients and the split are left exact.  The noise is a
    hash of ``(x, y, seed)``, so repeated runs are bit-identical.
    """
    if amplitude < 0:
        raise ValueError("noise amplitude must be >= 0")
    inner = as_equilibrium_model(model)
    scale = amplitude / 3.0

    def psi(x, y):
        if np.array_equal(x, y):
            return inner.psi(x, y)
        return inner.psi(x, y) + scale * _pair_noise(x, y, seed)

    noisy = replace(
        inner,
        psi=psi,
        delta=inner.delta + amplitude,
        psi_pairs=None,
        meta=dict(inner.meta, injected_noise=amplitude, clean=inner),
    )
    if isinstance(model, SaddleModel):
        return replace(model, base=noisy)
    return noisy

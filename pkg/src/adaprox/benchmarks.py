"""Reproducible problem instances.

* the constrained Fermat-Torricelli-Steiner (FTS) problem as a Lagrangian VI
  over the unit ball of R^(n+m);
* matrix games on simplex x simplex;
* monotone Hoelder-continuous VIs, random affine VIs and l1-composite mixed VIs.

Instances are plain data and serialize to JSON with round-trip float
rendering, so a run can be replayed byte-for-byte.
"""
import json
from dataclasses import dataclass

import numpy as np

from ._validation import check_matrix, check_scalar
from .geometry import Ball, Box, L1Term, Simplex
from .models import composite_saddle_model, lagrangian_saddle_model, mixed_vi_model, vi_model

# the five anchor points of the constrained FTS example, one per row
FTS_ANCHORS = np.array(
    [
        [5, 4, -7, -2, -3, -8, 5, 3, 8, 4],
        [-7, -8, -9, -8, -8, 6, -4, -8, 4, -3],
        [-4, -5, 8, 9, -5, -4, -9, -10, 1, 9],
        [7, -8, 7, -8, -5, 5, 3, -8, -8, -6],
        [1, 9, -10, -4, -8, -5, -1, -2, 1, 8],
    ],
    dtype=float,
)
FTS_DEFAULT_SEED = 20190101


@dataclass(frozen=True, eq=False)
class FTSInstance:
    n: int
    m: int
    anchors: np.ndarray
    alpha: np.ndarray
    seed: int

    def __post_init__(self):
        if self.anchors.ndim != 2 or self.anchors.shape[1] != self.n:
            raise ValueError("anchors must have shape (k, n)")
        if self.alpha.shape != (self.m, self.n):
            raise ValueError("alpha must have shape (m, n)")
        if not (np.all(np.isfinite(self.anchors)) and np.all(np.isfinite(self.alpha))):
            raise ValueError("instance data must be finite")

    @property
    def x0(self):
        """Normalized ``(0.2, ..., 0.2)`` in ``R^(n+m)``."""
        v = np.full(self.n + self.m, 0.2)
        return v / np.linalg.norm(v)

    def to_dict(self):
        return {
            "kind": "fts",
            "n": self.n,
            "m": self.m,
            "seed": self.seed,
            "anchors": self.anchors.tolist(),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            int(d["n"]),
            int(d["m"]),
            np.asarray(d["anchors"], dtype=float),
            np.asarray(d["alpha"], dtype=float),
            int(d["seed"]),
        )


def fts_alpha(n, m, seed):
    """Constraint weights: each row is all ones except one uniform(1, 10) entry."""
    rng = np.random.default_rng(seed)
    alpha = np.ones((m, n))
    pos = rng.integers(0, n, size=m)
    vals = rng.uniform(1.0, 10.0, size=m)
    # uniform() is half-open; keep the special entry strictly inside (1, 10)
    vals = np.where(vals <= 1.0, np.nextafter(1.0, 2.0), vals)
    alpha[np.arange(m), pos] = vals
    return alpha


def fts_reference_instance(seed=FTS_DEFAULT_SEED, m=100):
    """The n=10, m=100 instance with the five standard anchors and seeded weights."""
    n = FTS_ANCHORS.shape[1]
    return FTSInstance(n, m, FTS_ANCHORS.copy(), fts_alpha(n, m, seed), int(seed))


def fts_objective(inst, x):
    """``sum_k ||x - A_k||`` and a subgradient (zero contribution at ``x = A_k``)."""
    diff = x - inst.anchors
    dist = np.linalg.norm(diff, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    grad = ((dist > 0)[:, None] * diff / safe[:, None]).sum(axis=0)
    return float(dist.sum()), grad


def fts_constraints(inst, x):
    """``phi_p(x) = sum_i alpha_pi |x_i| - 1`` and their subgradients (rows)."""
    vals = inst.alpha @ np.abs(x) - 1.0
    jac = inst.alpha * np.sign(x)[None, :]
    return vals, jac


def fts_saddle(inst, delta=0.0, *, literal_operator=False):
    """Lagrangian VI of the FTS instance over the unit ball in ``R^(n+m)``."""
    ball = Ball.unit(inst.n + inst.m)
    return lagrangian_saddle_model(
        lambda x: fts_objective(inst, x),
        lambda x: fts_constraints(inst, x),
        inst.n,
        ball,
        delta,
        literal_operator=literal_operator,
    )


def fts_constraint_activity(inst, z, tol=1e-6):
    """Objective, worst constraint value and active-constraint count at ``z = (x, lam)``."""
    x = np.asarray(z, dtype=float)[: inst.n]
    vals, _ = fts_constraints(inst, x)
    fx, _ = fts_objective(inst, x)
    return {
        "objective": fx,
        "max_constraint": float(vals.max()),
        "active": int(np.sum(vals >= -tol)),
        "violated": int(np.sum(vals > tol)),
    }


def matrix_game(M, delta=0.0):
    """Bilinear saddle ``min_u max_v u^T M v`` over simplex x simplex."""
    M = check_matrix(M)
    n1, n2 = M.shape

    def g_batch(Y):
        U, V = Y[:, :n1], Y[:, n1:]
        return np.hstack([V @ M.T, -(U @ M)])

    return composite_saddle_model(
        lambda u, v: float(u @ M @ v),
        lambda u, v: (M @ v, M.T @ u),
        None,
        None,
        Simplex(n1),
        Simplex(n2),
        delta,
        bilinear=M,
        g_batch=g_batch,
    )


def random_skew(dim, rng):
    B = rng.standard_normal((dim, dim))
    K = B - B.T
    nk = np.linalg.norm(K, 2)
    return K / nk if nk > 0 else K


def holder_vi(nu, scale=1.0, dim=2, seed=None, *, skew=0.0, delta=0.0):
    """Monotone operator with Hoelder exponent ``nu`` (w.r.t. the l2 norm).

    * ``nu = 1``: ``g(x) = scale * x + skew * K x`` with ``K`` a random skew
      matrix of unit spectral norm; Lipschitz constant ``scale + skew``.
    * ``0 <= nu < 1``: ``g_i(x) = scale * sign(x_i) |x_i|^nu`` (gradient of
      ``sum |x_i|^(1+nu) / (1+nu)``; at ``nu = 0`` a subgradient of ``||x||_1``)
      plus the optional skew part.

    ``meta["holder_constant"]`` is an upper bound on ``L_nu`` for the
    non-skew part: ``2^(1-nu) dim^((1-nu)/2) * scale``.  For ``nu < 1`` the
    smoothness inequality only holds with some slack, so pass ``delta > 0``
    (e.g. ``epsilon / 2``); with ``delta = 0`` backtracking can diverge.
    """
    check_scalar(nu, "nu", min_val=0)
    if nu > 1:
        raise ValueError("nu must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    K = random_skew(dim, rng) if skew else np.zeros((dim, dim))

    if nu == 1:

        def g(x):
            return scale * x + skew * (x @ K.T)

    else:

        def g(x):
            return scale * np.sign(x) * np.abs(x) ** nu + skew * (x @ K.T)

    const = 2.0 ** (1 - nu) * dim ** ((1 - nu) / 2) * scale
    return vi_model(
        g,
        delta,
        vectorized=True,
        meta={"nu": nu, "holder_constant": const, "skew_matrix": K, "skew": skew},
    )


@dataclass(frozen=True, eq=False)
class AffineVI:
    """``g(x) = A x + b`` with ``A + A^T`` PSD; ``lipschitz = ||A||_2``."""

    A: np.ndarray
    b: np.ndarray
    feasible_set: object
    solution: np.ndarray = None

    @property
    def lipschitz(self):
        return float(np.linalg.norm(self.A, 2))

    def operator(self, x):
        return x @ self.A.T + self.b

    def model(self, delta=0.0):
        return vi_model(self.operator, delta, vectorized=True, meta={"A": self.A, "b": self.b})


def random_affine_vi(dim, seed=None, *, set_kind="ball", lipschitz=1.0, skew_weight=0.5):
    """Random monotone affine VI with ``||A||_2 = lipschitz`` and an interior solution.

    ``A = (1 - skew_weight) P + skew_weight K`` with ``P`` PSD and ``K`` skew,
    rescaled; ``b = -A x*`` for a random ``x*`` inside the set, so ``x*``
    solves the VI.
    """
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((dim, dim))
    P = B @ B.T / dim
    P /= max(np.linalg.norm(P, 2), 1e-12)
    A = (1.0 - skew_weight) * P + skew_weight * random_skew(dim, rng)
    A *= lipschitz / np.linalg.norm(A, 2)
    if set_kind == "ball":
        Q = Ball.unit(dim)
        d = rng.standard_normal(dim)
        x_star = 0.5 * rng.random() * d / np.linalg.norm(d)
    elif set_kind == "simplex":
        Q = Simplex(dim)
        x_star = rng.dirichlet(np.ones(dim))
    elif set_kind == "box":
        Q = Box(-np.ones(dim), np.ones(dim))
        x_star = rng.uniform(-0.5, 0.5, dim)
    else:
        raise ValueError(f"unknown set kind {set_kind!r}")
    return AffineVI(A, -A @ x_star, Q, x_star)


def random_mixed_vi(dim, seed=None, *, l1_weight=0.3, delta=0.0):
    """Affine monotone operator plus ``l1_weight * ||x||_1`` on the box ``[-1, 1]^dim``."""
    base = random_affine_vi(dim, seed, set_kind="box")
    model = mixed_vi_model(base.operator, L1Term(l1_weight), delta, vectorized=True)
    return model, base.feasible_set, base


# ---------------------------------------------------------------------------
# serialization


def dump_instance(inst, path):
    """Write an instance as JSON (``repr``-exact floats, sorted keys).

    ``inst`` is an :class:`FTSInstance` or a payoff matrix (stored as a
    ``matrix_game`` instance).
    """
    if isinstance(inst, FTSInstance):
        d = inst.to_dict()
    else:
        d = {"kind": "matrix_game", "matrix": check_matrix(inst).tolist()}
    with open(path, "w") as fh:
        json.dump(d, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_instance(path):
    with open(path) as fh:
        d = json.load(fh)
    kind = d.get("kind")
    if kind == "fts":
        return FTSInstance.from_dict(d)
    if kind == "matrix_game":
        return check_matrix(d["matrix"])
    raise ValueError(f"unknown instance kind {kind!r}")

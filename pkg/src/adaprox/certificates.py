"""Post-hoc quality measures for approximate equilibria.

Three tiers, always labeled in the returned :class:`GapReport`:

``exact``
    computed in closed form or by a certified solve (upper bound on the true
    quantity, within ``tolerance`` of it);
``inner_solve``
    an iterative solve whose certificate did not reach the requested accuracy;
    still an upper bound, looser by ``tolerance``;
``probe_sample``
    maximum over a finite probe set, hence a *lower* bound on the supremum.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_point
from .geometry import (
    Ball,
    EuclideanSetup,
    FunctionTerm,
    ProxObjective,
    ProxSolveError,
    ZeroTerm,
    certificate_value,
    solve_prox_subproblem,
)
from .models import SaddleModel, as_equilibrium_model


@dataclass(frozen=True)
class GapReport:
    measured_gap: float
    method: str
    certified_bound: Optional[float] = None
    probe_count: Optional[int] = None
    tolerance: Optional[float] = None

    @property
    def within_bound(self):
        if self.certified_bound is None:
            return None
        return self.measured_gap <= self.certified_bound


def probe_points(feasible_set, k, rng=None, block=256):
    """``k`` feasible probe points drawn in fixed-size blocks.

    Blocks make the draw prefix-stable: for a fixed seed, the first ``k``
    probes are the same whatever larger ``k'`` is requested.
    """
    rng = np.random.default_rng(rng)
    chunks, have = [], 0
    while have < k:
        chunks.append(feasible_set.sample(rng, block))
        have += block
    return np.vstack(chunks)[:k]


def _probes(feasible_set, probes, rng):
    if isinstance(probes, (int, np.integer)):
        return probe_points(feasible_set, int(probes), rng)
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    return P


def equilibrium_residual(model, feasible_set, y_tilde, probes=10_000, *, rng=None, certified_bound=None):
    """``max_{x in probes} psi(y~, x)``, a lower bound on ``sup_x psi(y~, x)``."""
    eq = as_equilibrium_model(model)
    y_tilde = check_point(y_tilde, dim=feasible_set.dim, name="y_tilde")
    P = _probes(feasible_set, probes, rng)
    if P.shape[0] == 0:
        raise ValueError("equilibrium_residual needs at least one probe point")
    vals = eq.evaluate_pairs(np.broadcast_to(y_tilde, P.shape), P)
    return GapReport(float(vals.max()), "probe_sample", certified_bound, probe_count=P.shape[0])


def averaged_residual(trace, model, probes):
    """``-(1/S_N) sum_k psi(x, y_k) / L_k`` for each probe row ``x``.

    This is the averaged quantity the convergence certificate bounds directly
    (before convexity in the first argument is used).
    """
    eq = as_equilibrium_model(model)
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    w = np.array([1.0 / r.L for r in trace.records]) / trace.S_N
    if eq.split is not None:
        lin = np.zeros(P.shape[1])
        const = 0.0
        term = None
        for wk, r in zip(w, trace.records):
            c, term, k0 = eq.split(r.y)
            lin += wk * c
            const += wk * k0
        vals = P @ lin + const
        if term is not None:
            vals = vals + np.array([term.value(p) for p in P])
        return -vals
    out = np.zeros(P.shape[0])
    for wk, r in zip(w, trace.records):
        out -= wk * eq.evaluate_pairs(P, np.broadcast_to(r.y, P.shape))
    return out


# ---------------------------------------------------------------------------
# weak VI dual gap


def _trust_region_max(H, p, radius):
    """Maximize ``-z^T H z / 2 + p^T z`` over ``||z|| <= radius`` for PSD ``H``."""
    lam, Q = np.linalg.eigh(H)
    lam = np.maximum(lam, 0.0)
    ph = Q.T @ p
    scale = max(1.0, float(np.abs(lam).max()))
    tiny = 1e-13 * scale

    def z_of(mu):
        return ph / (lam + mu)

    interior_ok = np.all((lam > tiny) | (np.abs(ph) <= 1e-13 * max(1.0, np.abs(ph).max())))
    if interior_ok:
        with np.errstate(divide="ignore", invalid="ignore"):
            z0 = np.where(lam > tiny, ph / np.where(lam > tiny, lam, 1.0), 0.0)
        if np.linalg.norm(z0) <= radius:
            return Q @ z0
    lo, hi = 0.0, np.linalg.norm(p) / radius + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(z_of(mid)) > radius:
            lo = mid
        else:
            hi = mid
    z = z_of(hi)
    return Q @ z


def _projected_gradient_max(feasible_set, H, r, x0, tol, max_iter):
    """Maximize ``-x^T H x / 2 + r^T x`` over the set by accelerated projected gradient."""
    Lq = max(float(np.linalg.eigvalsh(H).max()), 1e-12)
    x = y = feasible_set.project(x0)
    t = 1.0
    best_x, best_c = x, np.inf
    for _ in range(max_iter):
        grad = H @ y - r  # gradient of the minimized objective
        x_new = feasible_set.project(y - grad / Lq)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        c = certificate_value(feasible_set, H @ x - r, x)
        if c < best_c:
            best_x, best_c = x, c
            if c <= tol:
                break
    return best_x, max(best_c, 0.0)


def vi_dual_gap(
    g,
    feasible_set,
    y_tilde,
    strategy="probe_sample",
    *,
    affine=None,
    probes=10_000,
    rng=None,
    tol=1e-9,
    max_iter=100_000,
    certified_bound=None,
):
    """Estimate ``sup_{x in Q} <g(x), y~ - x>``.

    ``strategy="exact"`` needs ``affine=(A, b)`` with ``g(x) = A x + b`` and
    ``A + A^T`` positive semidefinite; the concave maximization is then solved
    exactly on a Euclidean ball and to ``tol`` elsewhere, and the reported
    value is an upper bound (attained value plus optimality certificate).
    ``strategy="probe_sample"`` evaluates ``g`` on random probes plus ``y~``
    itself and reports a lower bound.
    """
    y_tilde = check_point(y_tilde, dim=feasible_set.dim, name="y_tilde")
    if strategy == "probe_sample":
        P = np.vstack([y_tilde[None, :], _probes(feasible_set, probes, rng)])
        G = np.array([g(p) for p in P]) if not _batched(g, P) else g(P)
        vals = np.einsum("ij,ij->i", G, y_tilde[None, :] - P)
        return GapReport(float(vals.max()), "probe_sample", certified_bound, probe_count=P.shape[0])
    if strategy != "exact":
        raise ValueError(f"unknown strategy {strategy!r}")
    if affine is None:
        raise ValueError("exact dual gap needs an affine operator: pass affine=(A, b)")
    A, b = (np.asarray(a, dtype=float) for a in affine)
    H = A + A.T
    if np.linalg.eigvalsh(H).min() < -1e-10 * max(1.0, np.abs(H).max()):
        raise ValueError("exact dual gap needs a monotone affine operator (A + A^T PSD)")
    r = A.T @ y_tilde - b
    const = float(b @ y_tilde)

    def q(x):
        return -0.5 * float(x @ H @ x) + float(r @ x) + const

    if np.allclose(H, 0.0):
        x, val = feasible_set.linear_max(r)
        return GapReport(val + const, "exact", certified_bound, tolerance=0.0)
    if isinstance(feasible_set, Ball):
        c = feasible_set.center
        x = c + _trust_region_max(H, r - H @ c, feasible_set.radius)
    else:
        x, _ = _projected_gradient_max(feasible_set, H, r, y_tilde, tol, max_iter)
    cert = max(certificate_value(feasible_set, H @ x - r, x), 0.0)
    method = "exact" if cert <= tol else "inner_solve"
    return GapReport(q(x) + cert, method, certified_bound, tolerance=cert)


def _batched(g, P):
    try:
        out = np.asarray(g(P[:2]))
    except Exception:
        return False
    return out.shape == P[:2].shape


# ---------------------------------------------------------------------------
# saddle duality gap


def _min_convex(feasible_set, linear, term, tol, max_iter):
    """Return ``(value at x, certificate)`` for ``min <linear, x> + term(x)``."""
    setup = EuclideanSetup()
    obj = ProxObjective(setup, linear, 0.0, None, term)
    try:
        x, cert = solve_prox_subproblem(feasible_set, setup, obj, tol, max_iter=max_iter)
        c = cert.achieved_tolerance
    except ProxSolveError as err:
        x, c = err.point, err.achieved_tolerance
    return obj.value(x), c


def saddle_gap(saddle, u_tilde, v_tilde, strategy="exact", *, tol=1e-9, max_iter=20_000, certified_bound=None):
    """``max_v f(u~, v) - min_u f(u, v~)`` over ``Q1 x Q2``.

    For bilinear ``f~`` the linear parts are maximized in closed form; a
    nonzero ``h``/``phi`` or a general ``f~`` is handled by a certified inner
    solve, and the reported gap is an upper bound within ``tolerance``.
    """
    if not isinstance(saddle, SaddleModel) or saddle.blocks is None:
        raise ValueError("saddle_gap needs a saddle model over a product domain Q1 x Q2")
    Q1, Q2 = saddle.blocks
    u = check_point(u_tilde, dim=Q1.dim, name="u_tilde")
    v = check_point(v_tilde, dim=Q2.dim, name="v_tilde")
    h, phi = saddle.h, saddle.phi
    h_zero = h is None or isinstance(h, ZeroTerm)
    phi_zero = phi is None or isinstance(phi, ZeroTerm)
    if strategy not in ("exact", "inner_solve"):
        raise ValueError(f"unknown strategy {strategy!r}")

    if saddle.bilinear is not None:
        M = saddle.bilinear
        h_u = 0.0 if h_zero else h.value(u)
        phi_v = 0.0 if phi_zero else phi.value(v)
        # max_v u^T M v - phi(v)  ==  -min_v <-M^T u, v> + phi(v)
        if phi_zero:
            _, vmax = Q2.linear_max(M.T @ u)
            c_up = 0.0
        else:
            val, c_up = _min_convex(Q2, -(M.T @ u), phi, tol, max_iter)
            vmax = -val
            vmax += c_up
        if h_zero:
            _, neg = Q1.linear_max(-(M @ v))
            umin = -neg
            c_lo = 0.0
        else:
            val, c_lo = _min_convex(Q1, M @ v, h, tol, max_iter)
            umin = val - c_lo
        gap = (vmax + h_u) - (umin - phi_v)
        tolerance = c_up + c_lo
    else:
        if saddle.f_tilde is None or saddle.f_tilde_grad is None:
            raise ValueError("saddle_gap needs f_tilde and its gradient for non-bilinear models")
        ft, fg = saddle.f_tilde, saddle.f_tilde_grad
        neg_f_v = FunctionTerm(
            lambda vv: -ft(u, vv) + (0.0 if phi_zero else phi.value(vv)),
            lambda vv: -np.asarray(fg(u, vv)[1]) + (0.0 if phi_zero else phi.subgrad(vv)),
        )
        f_u = FunctionTerm(
            lambda uu: ft(uu, v) + (0.0 if h_zero else h.value(uu)),
            lambda uu: np.asarray(fg(uu, v)[0]) + (0.0 if h_zero else h.subgrad(uu)),
        )
        val, c_up = _min_convex(Q2, np.zeros(Q2.dim), neg_f_v, tol, max_iter)
        vmax = -val + c_up
        val, c_lo = _min_convex(Q1, np.zeros(Q1.dim), f_u, tol, max_iter)
        umin = val - c_lo
        h_u = 0.0 if h_zero else h.value(u)
        phi_v = 0.0 if phi_zero else phi.value(v)
        gap = (vmax + h_u) - (umin - phi_v)
        tolerance = c_up + c_lo
    method = "exact" if tolerance <= tol else "inner_solve"
    return GapReport(float(gap), method, certified_bound, tolerance=float(tolerance))

"""Prox geometry: setups, Bregman divergences, feasible sets and prox subproblems.

A prox setup is a norm together with a 1-strongly convex prox function ``d``.
It induces the Bregman divergence

    V(x, y) = d(x) - d(y) - <grad d(y), x - y>.

Feasible sets know how to maximize linear functions in closed form, which is
what makes the first-order optimality certificate of a prox subproblem

    max_{y in Q} <grad phi(x), x - y>

exactly computable.
"""
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_point, check_same_dim

_TINY = np.finfo(float).tiny


class ProxSolveError(RuntimeError):
    """The inner solver stopped before reaching the requested tolerance.

    ``point`` is the best iterate found and ``achieved_tolerance`` its
    certificate, so the caller can decide whether to keep it.
    """

    def __init__(self, message, point, achieved_tolerance):
        super().__init__(message)
        self.point = point
        self.achieved_tolerance = achieved_tolerance


# ---------------------------------------------------------------------------
# prox setups


class ProxSetup:
    """Norm plus 1-strongly convex prox function ``d`` and its gradient."""

    name = "abstract"

    def norm(self, x):
        raise NotImplementedError

    def d(self, x):
        raise NotImplementedError

    def grad_d(self, x):
        raise NotImplementedError

    def divergence(self, x, y):
        """Bregman divergence; subclasses override with a stable closed form."""
        return self.d(x) - self.d(y) - float(self.grad_d(y) @ (x - y))

    def mirror_average(self, points, weights):
        """Point whose ``grad_d`` is the weighted mean of ``grad_d(points)``.

        Used to merge ``a V(., p) + b V(., q)`` into one divergence term.
        """
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class EuclideanSetup(ProxSetup):
    """``d(x) = ||x||^2 / 2`` with the Euclidean norm."""

    name = "euclidean"

    def norm(self, x):
        return float(np.linalg.norm(x))

    def d(self, x):
        return 0.5 * float(x @ x)

    def grad_d(self, x):
        return np.asarray(x, dtype=float)

    def divergence(self, x, y):
        r = x - y
        return 0.5 * float(r @ r)

    def mirror_average(self, points, weights):
        w = np.asarray(weights, dtype=float)
        return sum(wi * p for wi, p in zip(w, points)) / w.sum()


def _kl_kernel(r):
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    small = np.abs(r) < 0.05
    rs = r[small]
    # alternating series sum_{k>=2} (-1)^k r^k / (k (k - 1)); 12 terms reach full precision
    acc = np.zeros_like(rs)
    for k in range(13, 1, -1):
        acc = acc * rs + (-1.0) ** k / (k * (k - 1))
    out[small] = acc * rs * rs
    rb = r[~small]
    with np.errstate(divide="ignore", invalid="ignore"):
        big = (1.0 + rb) * np.log1p(rb) - rb
    out[~small] = np.where(rb <= -1.0, 1.0, big)
    return out


class EntropySetup(ProxSetup):
    """Negative entropy ``d(x) = sum x log x``; 1-strongly convex in l1 on the simplex."""

    name = "entropy"

    def norm(self, x):
        return float(np.abs(x).sum())

    def d(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("entropy prox function needs nonnegative coordinates")
        pos = x > 0
        return float(np.sum(x[pos] * np.log(x[pos])))

    def grad_d(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("entropy gradient needs strictly positive coordinates")
        return 1.0 + np.log(x)

    def divergence(self, x, y):
        if np.any(y <= 0):
            raise ValueError("entropy divergence V(x, y) needs y strictly positive")
        if np.any(x < 0):
            raise ValueError("entropy divergence V(x, y) needs x nonnegative")
        # sum y h(r) with r = (x - y) / y and h(r) = (1 + r) log(1 + r) - r,
        # evaluated without the cancellation of the textbook form near x = y
        return float(np.sum(y * _kl_kernel((x - y) / y)))

    def mirror_average(self, points, weights):
        w = np.asarray(weights, dtype=float)
        logs = sum(wi * np.log(p) for wi, p in zip(w, points)) / w.sum()
        return np.exp(logs - logs.max())


class ProductSetup(ProxSetup):
    """Sum of block prox functions; norm is ``sqrt(sum ||x_i||_i^2)``."""

    name = "product"

    def __init__(self, blocks, sizes):
        if len(blocks) != len(sizes):
            raise ValueError("need one size per block setup")
        self.blocks = tuple(blocks)
        self.sizes = tuple(int(s) for s in sizes)
        self._cuts = np.cumsum(self.sizes)[:-1]

    def split(self, x):
        return np.split(x, self._cuts)

    def norm(self, x):
        return float(np.sqrt(sum(s.norm(p) ** 2 for s, p in zip(self.blocks, self.split(x)))))

    def d(self, x):
        return sum(s.d(p) for s, p in zip(self.blocks, self.split(x)))

    def grad_d(self, x):
        return np.concatenate([s.grad_d(p) for s, p in zip(self.blocks, self.split(x))])

    def divergence(self, x, y):
        return sum(s.divergence(a, b) for s, a, b in zip(self.blocks, self.split(x), self.split(y)))

    def mirror_average(self, points, weights):
        parts = [self.split(p) for p in points]
        return np.concatenate(
            [s.mirror_average([pp[i] for pp in parts], weights) for i, s in enumerate(self.blocks)]
        )

    def __repr__(self):
        return f"ProductSetup({list(self.blocks)!r}, {list(self.sizes)!r})"


def make_setup(name):
    """Look up a setup by name (``"euclidean"`` or ``"entropy"``)."""
    if name == "euclidean":
        return EuclideanSetup()
    if name == "entropy":
        return EntropySetup()
    raise ValueError(f"unknown prox setup {name!r}")


def bregman(setup, x, y):
    """Bregman divergence ``V(x, y)`` of ``setup``.

    Raises ``ValueError`` on a dimension mismatch or, for the entropy setup,
    when ``y`` has a zero or negative coordinate.
    """
    x = check_point(x, name="x")
    y = check_point(y, name="y")
    check_same_dim(x, y)
    return max(setup.divergence(x, y), 0.0)


# ---------------------------------------------------------------------------
# convex terms that can sit inside a prox subproblem


class ConvexTerm:
    """A convex function with value and subgradient oracles."""

    def value(self, x):
        raise NotImplementedError

    def subgrad(self, x):
        raise NotImplementedError

    def subgrad_toward(self, x, g):
        """Element of the subdifferential at ``x`` that best cancels ``g``.

        Only matters at kinks; the default is the plain oracle.
        """
        return self.subgrad(x)


class ZeroTerm(ConvexTerm):
    def value(self, x):
        return 0.0

    def subgrad(self, x):
        return np.zeros_like(x)


class L1Term(ConvexTerm):
    """Weighted l1 norm ``sum_i w_i |x_i|`` with ``w_i >= 0``."""

    def __init__(self, weights=1.0):
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("l1 weights must be nonnegative")

    def value(self, x):
        return float(np.sum(self.weights * np.abs(x)))

    def subgrad(self, x):
        return self.weights * np.sign(x)

    def subgrad_toward(self, x, g):
        w = np.broadcast_to(self.weights, x.shape)
        out = w * np.sign(x)
        zero = x == 0
        if np.any(zero):
            with np.errstate(divide="ignore", invalid="ignore"):
                sigma = np.where(w[zero] > 0, np.clip(-g[zero] / w[zero], -1.0, 1.0), 0.0)
            out[zero] = w[zero] * sigma
        return out

    def __repr__(self):
        return f"L1Term({self.weights!r})"


class FunctionTerm(ConvexTerm):
    """Convex term given by plain callables."""

    def __init__(self, value, subgrad):
        self._value = value
        self._subgrad = subgrad

    def value(self, x):
        return float(self._value(x))

    def subgrad(self, x):
        return np.asarray(self._subgrad(x), dtype=float)


class BlockTerm(ConvexTerm):
    """Separable sum of terms acting on consecutive coordinate blocks."""

    def __init__(self, terms, sizes):
        self.terms = tuple(ZeroTerm() if t is None else t for t in terms)
        self.sizes = tuple(int(s) for s in sizes)
        self._cuts = np.cumsum(self.sizes)[:-1]

    def split(self, x):
        return np.split(x, self._cuts)

    def value(self, x):
        return sum(t.value(p) for t, p in zip(self.terms, self.split(x)))

    def subgrad(self, x):
        return np.concatenate([t.subgrad(p) for t, p in zip(self.terms, self.split(x))])

    def subgrad_toward(self, x, g):
        return np.concatenate(
            [t.subgrad_toward(p, q) for t, p, q in zip(self.terms, self.split(x), self.split(g))]
        )


def _is_zero(term):
    return term is None or isinstance(term, ZeroTerm)


# ---------------------------------------------------------------------------
# feasible sets


class FeasibleSet:
    """Convex compact set with closed-form linear maximization."""

    dim = 0

    def contains(self, x, tol=1e-9):
        raise NotImplementedError

    def project(self, z):
        """Euclidean projection."""
        raise NotImplementedError

    def linear_max(self, c):
        """Return ``(argmax, max)`` of ``<c, x>`` over the set."""
        raise NotImplementedError

    def prox_center(self, setup):
        """``argmin_{x in Q} d(x)``."""
        raise NotImplementedError

    def diameter_bound(self, setup, x0):
        """Upper bound on ``max_{x in Q} V(x, x0)``."""
        raise NotImplementedError(
            f"no closed-form diameter bound for {type(self).__name__} with {setup!r}; supply one"
        )

    def sample(self, rng, k):
        """``k`` feasible points (rows), mixing interior and extreme points."""
        raise NotImplementedError

    def _entropy_prox(self, c, weight, center):
        raise NotImplementedError(f"entropy setup is not supported on {type(self).__name__}")

    def _l1_prox(self, c, weight, center, term):
        return None

    def prox_map(self, setup, c, weight, center, term=None):
        """Closed-form ``argmin_{x in Q} <c, x> + term(x) + weight * V(x, center)``.

        Raises ``NotImplementedError`` when no closed form is known; the caller
        then falls back to an iterative solve.
        """
        if weight <= 0:
            raise NotImplementedError("closed-form prox needs a positive weight")
        if not _is_zero(term):
            if isinstance(term, L1Term) and isinstance(setup, EuclideanSetup):
                out = self._l1_prox(c, weight, center, term)
                if out is not None:
                    return out
            raise NotImplementedError(f"no closed-form prox for {term!r} on {type(self).__name__}")
        if isinstance(setup, EuclideanSetup):
            return self.project(center - c / weight)
        if isinstance(setup, EntropySetup):
            return self._entropy_prox(c, weight, center)
        raise NotImplementedError(f"{setup!r} is not supported on {type(self).__name__}")


def _soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@dataclass(frozen=True, eq=False)
class Ball(FeasibleSet):
    """Euclidean ball ``{x : ||x - center|| <= radius}``."""

    center: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", check_point(self.center, name="center"))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @classmethod
    def unit(cls, dim):
        return cls(np.zeros(dim), 1.0)

    @property
    def dim(self):
        return self.center.shape[0]

    def contains(self, x, tol=1e-9):
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)

    def project(self, z):
        r = z - self.center
        nr = np.linalg.norm(r)
        if nr <= self.radius:
            return np.array(z, dtype=float)
        return self.center + r * (self.radius / nr)

    def linear_max(self, c):
        nc = np.linalg.norm(c)
        if nc == 0:
            return self.center.copy(), float(c @ self.center)
        return self.center + c * (self.radius / nc), float(c @ self.center) + self.radius * nc

    def prox_center(self, setup):
        if isinstance(setup, EuclideanSetup):
            return self.project(np.zeros(self.dim))
        raise NotImplementedError(f"{setup!r} is not supported on a ball")

    def diameter_bound(self, setup, x0):
        if isinstance(setup, EuclideanSetup):
            return 0.5 * (self.radius + float(np.linalg.norm(x0 - self.center))) ** 2
        return super().diameter_bound(setup, x0)

    def _l1_prox(self, c, weight, center, term):
        # prox of (l1 + ball indicator) factorizes only for a ball at the origin
        if np.any(self.center != 0):
            return None
        return self.project(_soft_threshold(center - c / weight, term.weights / weight))

    def sample(self, rng, k):
        g = rng.standard_normal((k, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.random(k) ** (1.0 / self.dim)
        r[: k // 2] = 1.0
        return self.center + self.radius * g * r[:, None]


@dataclass(frozen=True, eq=False)
class Box(FeasibleSet):
    """Axis-aligned box ``{lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = check_point(self.lower, name="lower")
        hi = check_point(self.upper, dim=lo.shape[0], name="upper")
        if np.any(hi < lo):
            raise ValueError("box needs lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    def contains(self, x, tol=1e-9):
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, z):
        return np.clip(z, self.lower, self.upper)

    def linear_max(self, c):
        x = np.where(c > 0, self.upper, self.lower)
        return x, float(c @ x)

    def prox_center(self, setup):
        if isinstance(setup, EuclideanSetup):
            return self.project(np.zeros(self.dim))
        raise NotImplementedError(f"{setup!r} is not supported on a box")

    def diameter_bound(self, setup, x0):
        if isinstance(setup, EuclideanSetup):
            far = np.maximum(np.abs(x0 - self.lower), np.abs(self.upper - x0))
            return 0.5 * float(far @ far)
        return super().diameter_bound(setup, x0)

    def _l1_prox(self, c, weight, center, term):
        # separable, so clipping the unconstrained minimizer is exact
        return self.project(_soft_threshold(center - c / weight, term.weights / weight))

    def sample(self, rng, k):
        u = rng.random((k, self.dim))
        q = k // 4
        u[:q] = rng.integers(0, 2, size=(q, self.dim))
        return self.lower + u * (self.upper - self.lower)


def project_simplex(z):
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = z.shape[0]
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(z - theta, 0.0)


@dataclass(frozen=True, eq=False)
class Simplex(FeasibleSet):
    """Probability simplex in ``R^dim``."""

    n: int

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("simplex dimension must be >= 1")

    @property
    def dim(self):
        return int(self.n)

    def contains(self, x, tol=1e-9):
        return bool(np.all(x >= -tol) and abs(x.sum() - 1.0) <= tol * max(1, self.dim))

    def project(self, z):
        return project_simplex(np.asarray(z, dtype=float))

    def linear_max(self, c):
        i = int(np.argmax(c))
        x = np.zeros(self.dim)
        x[i] = 1.0
        return x, float(c[i])

    def prox_center(self, setup):
        if isinstance(setup, (EuclideanSetup, EntropySetup)):
            return np.full(self.dim, 1.0 / self.dim)
        raise NotImplementedError(f"{setup!r} is not supported on a simplex")

    def diameter_bound(self, setup, x0):
        if isinstance(setup, EuclideanSetup):
            return 0.5 * (float(x0 @ x0) - 2.0 * float(x0.min()) + 1.0)
        if isinstance(setup, EntropySetup):
            return -float(np.log(x0.min()))
        return super().diameter_bound(setup, x0)

    def _entropy_prox(self, c, weight, center):
        logits = np.log(center) - c / weight
        logits -= logits.max()
        x = np.exp(logits)
        x /= x.sum()
        # keep iterates in the interior so V(., x) stays finite
        if x.min() < _TINY:
            x = np.maximum(x, _TINY)
            x /= x.sum()
        return x

    def _l1_prox(self, c, weight, center, term):
        # on the simplex the l1 term is linear
        return self.project(center - (c + term.weights) / weight)

    def prox_map(self, setup, c, weight, center, term=None):
        if isinstance(term, L1Term) and isinstance(setup, EntropySetup) and weight > 0:
            return self._entropy_prox(c + term.weights, weight, center)
        return super().prox_map(setup, c, weight, center, term)

    def sample(self, rng, k):
        out = rng.dirichlet(np.ones(self.dim), size=k)
        q = k // 4
        out[:q] = np.eye(self.dim)[rng.integers(0, self.dim, size=q)]
        out[q : 2 * q] = rng.dirichlet(np.full(self.dim, 0.1), size=q)
        return out


class ProductSet(FeasibleSet):
    """Cartesian product ``Q_1 x Q_2 x ...`` of feasible sets."""

    def __init__(self, blocks):
        self.blocks = tuple(blocks)
        self.sizes = tuple(b.dim for b in self.blocks)
        self._cuts = np.cumsum(self.sizes)[:-1]

    @property
    def dim(self):
        return int(sum(self.sizes))

    def split(self, x):
        return np.split(x, self._cuts)

    def _block_setups(self, setup):
        if isinstance(setup, ProductSetup):
            if setup.sizes != self.sizes:
                raise ValueError("product setup blocks do not match product set blocks")
            return setup.blocks
        if isinstance(setup, EuclideanSetup):
            return (setup,) * len(self.blocks)
        raise NotImplementedError(f"{setup!r} is not supported on a product set")

    def contains(self, x, tol=1e-9):
        return all(b.contains(p, tol) for b, p in zip(self.blocks, self.split(x)))

    def project(self, z):
        return np.concatenate([b.project(p) for b, p in zip(self.blocks, self.split(z))])

    def linear_max(self, c):
        pts, val = [], 0.0
        for b, p in zip(self.blocks, self.split(c)):
            x, v = b.linear_max(p)
            pts.append(x)
            val += v
        return np.concatenate(pts), val

    def prox_center(self, setup):
        return np.concatenate([b.prox_center(s) for b, s in zip(self.blocks, self._block_setups(setup))])

    def diameter_bound(self, setup, x0):
        return sum(
            b.diameter_bound(s, p)
            for b, s, p in zip(self.blocks, self._block_setups(setup), self.split(x0))
        )

    def prox_map(self, setup, c, weight, center, term=None):
        if _is_zero(term):
            terms = (None,) * len(self.blocks)
        elif isinstance(term, BlockTerm) and term.sizes == self.sizes:
            terms = term.terms
        else:
            raise NotImplementedError("product prox needs a BlockTerm matching the blocks")
        return np.concatenate(
            [
                b.prox_map(s, cc, weight, z, t)
                for b, s, cc, z, t in zip(
                    self.blocks, self._block_setups(setup), self.split(c), self.split(center), terms
                )
            ]
        )

    def sample(self, rng, k):
        return np.hstack([b.sample(rng, k) for b in self.blocks])

    def __repr__(self):
        return f"ProductSet({list(self.blocks)!r})"


def linear_max(feasible_set, c):
    """Maximize ``<c, x>`` over ``feasible_set``; returns ``(argmax, value)``."""
    c = check_point(c, dim=feasible_set.dim, name="c")
    try:
        return feasible_set.linear_max(c)
    except NotImplementedError as exc:
        raise TypeError(f"unsupported set variant {type(feasible_set).__name__}") from exc


# ---------------------------------------------------------------------------
# prox subproblems


@dataclass(frozen=True, eq=False)
class ProxObjective:
    """``phi(x) = <linear, x> + term(x) + weight * V(x, center)`` under ``setup``.

    ``term`` is any :class:`ConvexTerm` (or ``None``).  With ``weight = 0`` the
    objective is just ``<linear, x> + term(x)``.
    """

    setup: ProxSetup
    linear: np.ndarray
    weight: float = 0.0
    center: np.ndarray = None
    term: ConvexTerm = None

    def value(self, x):
        v = float(self.linear @ x)
        if not _is_zero(self.term):
            v += self.term.value(x)
        if self.weight:
            v += self.weight * self.setup.divergence(x, self.center)
        return v

    def smooth_grad(self, x):
        g = np.array(self.linear, dtype=float)
        if self.weight:
            g += self.weight * (self.setup.grad_d(x) - self.setup.grad_d(self.center))
        return g

    def subgrad(self, x):
        g = self.smooth_grad(x)
        if not _is_zero(self.term):
            g = g + self.term.subgrad_toward(x, g)
        return g


@dataclass(frozen=True)
class ProxCertificate:
    """Proof that ``point`` is a ``tol``-argmin: ``max_y <grad phi(point), point - y> = achieved_tolerance``."""

    achieved_tolerance: float
    point: np.ndarray
    method: str = "closed_form"
    iterations: int = 0


def certificate_value(feasible_set, grad, x):
    """``max_{y in Q} <grad, x - y>`` evaluated exactly by linear maximization."""
    _, m = feasible_set.linear_max(-grad)
    return float(grad @ x) + m


def _as_objective(setup, phi):
    if isinstance(phi, ProxObjective):
        return phi
    term = FunctionTerm(phi.value, phi.subgrad)
    dim = getattr(phi, "dim", None)
    if dim is None:
        raise TypeError("generic objectives need a 'dim' attribute")
    return ProxObjective(setup, np.zeros(dim), 0.0, None, term)


def solve_prox_subproblem(
    feasible_set, setup, phi, tolerance=0.0, *, max_iter=5000, start=None, rng=None
):
    """Find ``x`` in the set with ``max_y <grad phi(x), x - y> <= tolerance``.

    ``phi`` is a :class:`ProxObjective` or any object with ``value``,
    ``subgrad`` and ``dim``.  Closed forms are used where the set and setup
    allow it; otherwise a mirror-descent loop on the non-linear term runs until
    the exactly computed certificate drops below ``tolerance``.

    When ``rng`` is given and ``tolerance > 0`` the returned point is pushed
    toward a random extreme point of the set as far as the tolerance allows,
    i.e. the tolerance is spent on purpose (used to stress test inexactness).

    Returns ``(x, ProxCertificate)``; raises :class:`ProxSolveError` if the
    inner loop hits ``max_iter`` first.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    obj = _as_objective(setup, phi)
    try:
        x = feasible_set.prox_map(setup, obj.linear, obj.weight, obj.center, obj.term)
        cert = certificate_value(feasible_set, obj.subgrad(x), x)
        method, iters = "closed_form", 0
    except NotImplementedError:
        x, cert, iters = _mirror_descent(feasible_set, setup, obj, tolerance, max_iter, start)
        method = "mirror_descent"
        if cert > tolerance:
            raise ProxSolveError(
                f"inner solver reached {cert:.3e} > {tolerance:.3e} after {iters} iterations",
                x,
                cert,
            )
    if rng is not None and tolerance > 0:
        x, cert = _spend_tolerance(feasible_set, obj, x, cert, tolerance, rng)
    return x, ProxCertificate(max(cert, 0.0), x, method, iters)


def _mirror_descent(feasible_set, setup, obj, tolerance, max_iter, start):
    """Linearize ``term`` only; keep ``<linear, x> + weight V(x, center)`` exact."""
    lin, w, center = obj.linear, obj.weight, obj.center
    if start is not None:
        x = np.asarray(start, dtype=float)
    elif w > 0:
        x = feasible_set.prox_map(setup, lin, w, center)
    else:
        x = feasible_set.prox_center(setup)
    best_x, best_cert = x, certificate_value(feasible_set, obj.subgrad(x), x)
    if best_cert <= tolerance:
        return best_x, best_cert, 0
    # step scale for the merely convex case: one set diameter per unit subgradient
    diam = np.sqrt(2.0 * max(feasible_set.diameter_bound(setup, x), 1e-12))
    for k in range(1, max_iter + 1):
        t = obj.term.subgrad(x)
        if w > 0:
            beta = 0.5 * w * (k + 1)
            z = setup.mirror_average([center, x], [w, beta])
            x = feasible_set.prox_map(setup, lin + t, w + beta, z)
        else:
            s = lin + t
            gn = max(float(np.max(np.abs(s))), 1e-12)
            x = feasible_set.prox_map(setup, s, gn * np.sqrt(k) / diam, x)
        cert = certificate_value(feasible_set, obj.subgrad(x), x)
        if cert < best_cert:
            best_x, best_cert = x, cert
            if cert <= tolerance:
                return best_x, best_cert, k
    return best_x, best_cert, max_iter


def _spend_tolerance(feasible_set, obj, x, cert, tolerance, rng, steps=24):
    target, _ = feasible_set.linear_max(rng.standard_normal(feasible_set.dim))
    lo, hi = 0.0, 1.0
    best, best_cert = x, cert

    def at(t):
        p = (1.0 - t) * x + t * target
        try:
            return p, certificate_value(feasible_set, obj.subgrad(p), p)
        except ValueError:  # e.g. entropy gradient on the boundary
            return p, np.inf

    p, c = at(hi)
    if c <= tolerance:
        return p, c
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        p, c = at(mid)
        if c <= tolerance:
            lo, best, best_cert = mid, p, c
        else:
            hi = mid
    return best, best_cert

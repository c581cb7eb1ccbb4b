"""Potential functions, their minima metadata and assumption checks.

All evaluation methods accept either a single point of shape ``(d,)`` (a
scalar is accepted when ``d == 1``) or a batch of shape ``(n, d)``, and
return values of matching batch shape.
"""
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize
from scipy.special import expit
from scipy.stats import qmc


class ParameterError(ValueError):
    """Invalid catalog name or parameter value."""


class AssumptionError(ValueError):
    """A potential or field violates a hard structural requirement."""


@dataclass(frozen=True)
class DegenerateMinimumSpec:
    """A strictly polynomial minimum of order ``2p``.

    ``limit_polynomial`` is the limit ``g`` of the anisotropic rescaling
    ``(V(x* + B diag(s^alpha) h) - V*) / s`` as ``s -> 0``.
    """
    order_2p: int
    exponents: tuple
    basis: np.ndarray
    limit_polynomial: Callable

    def __post_init__(self):
        if self.order_2p < 4 or self.order_2p % 2:
            raise ParameterError("order_2p must be an even integer >= 4")
        p = self.order_2p // 2
        allowed = [1.0 / (2 * k) for k in range(1, p + 1)]
        for e in self.exponents:
            if not any(abs(e - a) < 1e-12 for a in allowed):
                raise ParameterError(f"exponent {e} not in {{1/2, ..., 1/{2 * p}}}")
        b = np.asarray(self.basis, dtype=float)
        if not np.allclose(b @ b.T, np.eye(len(b)), atol=1e-12):
            raise ParameterError("basis must be orthogonal")

    @property
    def alpha_min(self):
        return min(self.exponents)

    def integrable(self, kappa=1.0, half_width=4.0, tol=1e-8):
        """Truncated-quadrature check that ``exp(-kappa g)`` is integrable:
        the integral over ``[-L, L]^d`` must settle when ``L`` doubles."""
        d = len(self.exponents)
        if d > 2:
            raise NotImplementedError("integrability check implemented for d <= 2")
        vals = []
        for L in (half_width, 2 * half_width):
            n = int(400 * L) + 1
            t = np.linspace(-L, L, n)
            if d == 1:
                vals.append(np.trapezoid(np.exp(-kappa * self.limit_polynomial(t[:, None])), t))
            else:
                g1, g2 = np.meshgrid(t, t, indexing="ij")
                h = np.stack([g1.ravel(), g2.ravel()], axis=1)
                f = np.exp(-kappa * self.limit_polynomial(h)).reshape(n, n)
                vals.append(np.trapezoid(np.trapezoid(f, t, axis=1), t))
        return bool(np.isfinite(vals[1]) and abs(vals[1] - vals[0]) <= tol * abs(vals[1]))


@dataclass(frozen=True)
class MinimumSpec:
    location: np.ndarray
    hessian: np.ndarray
    value: float
    degenerate: Optional[DegenerateMinimumSpec] = None

    @property
    def positive_definite(self):
        return self.degenerate is None and bool(np.all(np.linalg.eigvalsh(self.hessian) > 0))


class Potential:
    """Base class. Subclasses implement ``_value``, ``_grad`` and optionally
    ``_hess`` on batches of shape ``(n, d)``."""

    name = "custom"

    def __init__(self, dim, minima=(), admissible_A=1.0, params=None, local_minima=()):
        if dim < 1:
            raise ParameterError("dim must be positive")
        self.dim = int(dim)
        self.minima = tuple(minima)
        self.local_minima = tuple(local_minima)
        self.admissible_A = float(admissible_A)
        self.params = dict(params or {})

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.name}({args})"

    # batching helpers
    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            if self.dim != 1:
                raise ValueError("scalar input only valid for d == 1")
            return x.reshape(1, 1), True
        if x.ndim == 1:
            if x.shape[0] != self.dim:
                raise ValueError(f"expected a point of dimension {self.dim}, got {x.shape}")
            return x[None, :], True
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got {x.shape}")
        return x, False

    def value(self, x):
        X, single = self._batch(x)
        out = self._value(X)
        return float(out[0]) if single else out

    def gradient(self, x):
        X, single = self._batch(x)
        out = self._grad(X)
        return out[0] if single else out

    def hessian(self, x):
        X, single = self._batch(x)
        if type(self)._hess is Potential._hess:
            out = self._hess_fd(X)
        else:
            out = self._hess(X)
        return out[0] if single else out

    def hessian_fd(self, x):
        X, single = self._batch(x)
        out = self._hess_fd(X)
        return out[0] if single else out

    def gradient_fd(self, x):
        X, single = self._batch(x)
        h = 1e-5 * (1.0 + np.abs(X))
        g = np.empty_like(X)
        for j in range(self.dim):
            e = np.zeros_like(X)
            e[:, j] = h[:, j]
            g[:, j] = (self._value(X + e) - self._value(X - e)) / (2 * h[:, j])
        return g[0] if single else g

    @property
    def v_star(self):
        if not self.minima:
            raise AssumptionError(f"{self.name}: no minima metadata")
        return self.minima[0].value

    def _value(self, X):
        raise NotImplementedError

    def _grad(self, X):
        raise NotImplementedError

    def _hess(self, X):
        raise NotImplementedError

    def _hess_fd(self, X):
        # step balances truncation against roundoff for a first difference of grad
        h = 1e-4 * (1.0 + np.abs(X))
        H = np.empty((X.shape[0], self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros_like(X)
            e[:, j] = h[:, j]
            H[:, :, j] = (self._grad(X + e) - self._grad(X - e)) / (2 * h[:, j, None])
        return 0.5 * (H + np.swapaxes(H, 1, 2))


class CustomPotential(Potential):
    """User-supplied potential from batch callables."""

    def __init__(self, value, grad, dim, hess=None, minima=(), admissible_A=1.0, name="custom"):
        super().__init__(dim, minima, admissible_A)
        self.name = name
        self._value_fn = value
        self._grad_fn = grad
        self._hess_fn = hess

    def _value(self, X):
        return np.asarray(self._value_fn(X), dtype=float)

    def _grad(self, X):
        return np.asarray(self._grad_fn(X), dtype=float)

    def hessian(self, x):
        if self._hess_fn is None:
            return self.hessian_fd(x)
        X, single = self._batch(x)
        out = np.asarray(self._hess_fn(X), dtype=float)
        return out[0] if single else out


class Quadratic(Potential):
    """``V(x) = offset + (x - center)^T H (x - center) / 2``."""

    name = "quadratic"

    def __init__(self, hessian, center=None, offset=1.0, params=None, name=None):
        H = np.atleast_2d(np.asarray(hessian, dtype=float))
        if not np.allclose(H, H.T):
            raise ParameterError("hessian must be symmetric")
        if np.any(np.linalg.eigvalsh(H) <= 0):
            raise ParameterError("hessian must be positive definite")
        if offset <= 0:
            raise ParameterError("offset must be positive (V* > 0)")
        d = H.shape[0]
        c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        self.H, self.center, self.offset = H, c, float(offset)
        super().__init__(d, [MinimumSpec(c.copy(), H.copy(), float(offset))], 1.0, params)
        if name:
            self.name = name

    def _value(self, X):
        Y = X - self.center
        return self.offset + 0.5 * np.einsum("ni,ij,nj->n", Y, self.H, Y)

    def _grad(self, X):
        return (X - self.center) @ self.H

    def _hess(self, X):
        return np.broadcast_to(self.H, (X.shape[0], self.dim, self.dim)).copy()


class WellPair1D(Potential):
    """C^2 double well with minima at -1 and +1.

    On ``[-1, 1]`` the potential is a quintic Hermite piece with prescribed
    value, zero slope and curvature ``h_left``/``h_right`` at each end;
    outside it continues as the matching parabola, so the Hessian is bounded
    and the potential is convex outside ``[-1, 1]``. ``gap`` raises the left
    well above the right one.
    """

    name = "well_pair_1d"

    def __init__(self, h_left, h_right, v_star=1.0, gap=0.0, params=None):
        if h_left <= 0 or h_right <= 0:
            raise ParameterError("well curvatures must be positive")
        if v_star <= 0 or gap < 0:
            raise ParameterError("v_star must be positive and gap non-negative")
        self.h1, self.h2 = float(h_left), float(h_right)
        self.vs, self.gap = float(v_star), float(gap)
        self._alpha = (self.h1 + self.h2) / 16.0
        self._beta = (self.h2 - self.h1) / 16.0
        right = MinimumSpec(np.array([1.0]), np.array([[self.h2]]), self.vs)
        left = MinimumSpec(np.array([-1.0]), np.array([[self.h1]]), self.vs + self.gap)
        if self.gap == 0.0:
            minima, local = [left, right], []
        else:
            minima, local = [right], [left]
        super().__init__(1, minima, 1.0, params, local)

    def _pieces(self, x):
        u = (x + 1.0) / 2.0
        S = u**3 * (10 - 15 * u + 6 * u**2)
        dS = 15 * u**2 * (u - 1) ** 2
        d2S = 30 * u**3 - 45 * u**2 + 15 * u
        f = (1 - x**2) ** 2
        df = -4 * x + 4 * x**3
        d2f = -4 + 12 * x**2
        q = self._alpha + self._beta * x
        v = self.vs + self.gap * (1 - S) + f * q
        dv = -self.gap * dS + df * q + f * self._beta
        d2v = -self.gap * d2S + d2f * q + 2 * df * self._beta
        return v, dv, d2v

    def _eval(self, X):
        x = X[:, 0]
        v, dv, d2v = self._pieces(np.clip(x, -1.0, 1.0))
        left, right = x < -1.0, x > 1.0
        dl, dr = x + 1.0, x - 1.0
        v = np.where(left, self.vs + self.gap + 0.5 * self.h1 * dl**2, v)
        v = np.where(right, self.vs + 0.5 * self.h2 * dr**2, v)
        dv = np.where(left, self.h1 * dl, np.where(right, self.h2 * dr, dv))
        d2v = np.where(left, self.h1, np.where(right, self.h2, d2v))
        return v, dv, d2v

    def _value(self, X):
        return self._eval(X)[0]

    def _grad(self, X):
        return self._eval(X)[1][:, None]

    def _hess(self, X):
        return self._eval(X)[2][:, None, None]


class GaussianWells(Potential):
    """Quadratic confinement with Gaussian wells carved into it:
    ``V(x) = base + q|x|^2 - sum_k D_k exp(-|x - c_k|^2 / (2 w^2))``.

    Minima are located by Newton's method from each well center; the lowest
    ones form ``minima`` and the rest ``local_minima``.
    """

    name = "gaussian_wells"

    def __init__(self, centers, depths, width, q=0.1, base=2.5, params=None):
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        D = np.asarray(depths, dtype=float)
        if len(D) != len(C) or np.any(D <= 0) or width <= 0 or q <= 0:
            raise ParameterError("need positive depths per center, width > 0 and q > 0")
        self.C, self.D, self.w, self.q, self.base = C, D, float(width), float(q), float(base)
        super().__init__(C.shape[1], (), 1.0, params)
        found = []
        for c in C:
            x = self._newton(c)
            H = self._hess(x[None])[0]
            if np.all(np.linalg.eigvalsh(H) > 0) and not any(np.allclose(x, y) for y, _, _ in found):
                found.append((x, H, float(self._value(x[None])[0])))
        vmin = min(v for _, _, v in found)
        if vmin <= 0:
            raise ParameterError("base too small: V* must be positive")
        # equal-depth wells tie only up to roundoff; treat 1e-12 as a tie
        self.minima = tuple(MinimumSpec(x, H, vmin) for x, H, v in found if v - vmin < 1e-12)
        self.local_minima = tuple(MinimumSpec(x, H, v) for x, H, v in found if v - vmin >= 1e-12)

    def _newton(self, x):
        x = x.astype(float).copy()
        for _ in range(100):
            g = self._grad(x[None])[0]
            H = self._hess(x[None])[0]
            step = np.linalg.solve(H, g)
            x -= step
            if np.linalg.norm(step) < 1e-15 * (1 + np.linalg.norm(x)):
                break
        return x

    def _wells(self, X):
        diff = X[:, None, :] - self.C[None, :, :]
        e = self.D * np.exp(-np.sum(diff**2, axis=-1) / (2 * self.w**2))
        return diff, e

    def _value(self, X):
        _, e = self._wells(X)
        return self.base + self.q * np.sum(X**2, axis=1) - e.sum(axis=1)

    def _grad(self, X):
        diff, e = self._wells(X)
        return 2 * self.q * X + np.einsum("nk,nkd->nd", e, diff) / self.w**2

    def _hess(self, X):
        diff, e = self._wells(X)
        d = self.dim
        H = 2 * self.q * np.eye(d) + np.einsum("nk,ij->nij", e, np.eye(d)) / self.w**2
        return H - np.einsum("nk,nki,nkj->nij", e, diff, diff) / self.w**4

    def barrier(self):
        """Height of the saddle between the highest local minimum and the
        global one, measured from the local minimum (1D scan)."""
        if not self.local_minima:
            return 0.0
        lo = self.local_minima[0]
        xs = np.linspace(0, 1, 20001)[:, None]
        path = lo.location + xs * (self.minima[0].location - lo.location)
        return float(self._value(path).max() - lo.value)


class Quartic1D(Potential):
    """``V(x) = x^4 + offset``: a strictly polynomial minimum of order 4."""

    name = "quartic_degenerate_1d"

    def __init__(self, offset=1.0, params=None):
        if offset <= 0:
            raise ParameterError("offset must be positive")
        self.offset = float(offset)
        deg = DegenerateMinimumSpec(4, (0.25,), np.eye(1), lambda h: np.sum(np.asarray(h) ** 4, axis=-1))
        super().__init__(1, [MinimumSpec(np.zeros(1), np.zeros((1, 1)), self.offset, deg)], 1.0, params)

    def _value(self, X):
        return X[:, 0] ** 4 + self.offset

    def _grad(self, X):
        return 4 * X**3

    def _hess(self, X):
        return (12 * X[:, 0] ** 2)[:, None, None]


class SigmoidRegression(Potential):
    """Single-layer sigmoid regression with ridge penalty,
    ``V(theta) = (1/2M) sum_i (phi(<theta, u_i>) - v_i)^2 + (lam/2)|theta|^2``,
    on synthetic bounded data (``|u_i| <= 1``, ``v_i`` in ``[-1, 1]``)."""

    name = "sigmoid_regression"

    def __init__(self, M=64, lam=0.5, seed=0, dim=3, params=None):
        if M < 1 or lam <= 0 or dim < 1:
            raise ParameterError("need M >= 1, lam > 0 and dim >= 1")
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal((M, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.uniform(size=(M, 1)) ** (1.0 / dim)
        self.U = direction * radius
        theta_true = 2.0 * rng.standard_normal(dim)
        self.v = np.clip(expit(self.U @ theta_true) + 0.1 * rng.standard_normal(M), -1.0, 1.0)
        self.M, self.lam = int(M), float(lam)
        super().__init__(dim, (), 1.0, params)
        res = optimize.minimize(lambda t: self._value(t[None])[0], np.zeros(dim),
                                jac=lambda t: self._grad(t[None])[0], method="BFGS",
                                options={"gtol": 1e-12})
        x = res.x
        for _ in range(20):
            g = self._grad(x[None])[0]
            if np.linalg.norm(g) < 1e-14:
                break
            x = x - np.linalg.solve(self._hess(x[None])[0], g)
        H = self._hess(x[None])[0]
        self.minima = (MinimumSpec(x, H, float(self._value(x[None])[0])),)

    def _parts(self, X):
        z = X @ self.U.T
        phi = expit(z)
        return phi, phi - self.v

    def _value(self, X):
        _, r = self._parts(X)
        return np.sum(r**2, axis=1) / (2 * self.M) + 0.5 * self.lam * np.sum(X**2, axis=1)

    def _grad(self, X):
        phi, r = self._parts(X)
        return (r * phi * (1 - phi)) @ self.U / self.M + self.lam * X

    def _hess(self, X):
        phi, r = self._parts(X)
        d1 = phi * (1 - phi)
        w = d1**2 + r * d1 * (1 - 2 * phi)
        return np.einsum("nm,mi,mj->nij", w, self.U, self.U) / self.M + self.lam * np.eye(self.dim)

    def minibatch_gradient(self, X, idx):
        """Gradient using only the data rows ``idx`` (shape ``(n, m)``)."""
        Ub = self.U[idx]
        phi = expit(np.einsum("nd,nmd->nm", X, Ub))
        r = phi - self.v[idx]
        return np.einsum("nm,nmd->nd", r * phi * (1 - phi), Ub) / idx.shape[1] + self.lam * X


# catalog

def _quadratic1d(c=1.0):
    if c <= 0:
        raise ParameterError("c must be positive")
    return Quadratic([[2.0 * c]], params={"c": c}, name="quadratic1d")


def _ill_quadratic2d(kappa=100.0):
    if kappa <= 0:
        raise ParameterError("kappa must be positive")
    return Quadratic(np.diag([1.0, float(kappa)]), params={"kappa": kappa}, name="ill_quadratic2d")


def _double_well_1d(h1=2.0, h2=8.0):
    p = WellPair1D(h1, h2, params={"h1": h1, "h2": h2})
    p.name = "double_well_1d"
    return p


def _global_local_1d(depth_global=1.5, depth_local=0.5, width=0.2, separation=0.5):
    p = GaussianWells([[-separation], [separation]], [depth_local, depth_global], width,
                      params={"depth_global": depth_global, "depth_local": depth_local,
                              "width": width, "separation": separation})
    if not p.local_minima:
        raise ParameterError("global_local_1d needs depth_global > depth_local")
    p.name = "global_local_1d"
    return p


def _quartic_degenerate_1d(offset=1.0):
    return Quartic1D(offset, params={"offset": offset})


def _sigmoid_regression(M=64, lam=0.5, seed=0, dim=3):
    return SigmoidRegression(int(M), lam, int(seed), int(dim),
                             params={"M": int(M), "lam": lam, "seed": int(seed), "dim": int(dim)})


CATALOG = {
    "quadratic1d": (_quadratic1d, "V = c x^2 + 1"),
    "ill_quadratic2d": (_ill_quadratic2d, "V = (x1^2 + kappa x2^2)/2 + 1"),
    "double_well_1d": (_double_well_1d, "C^2 double well, minima at -1/+1 with curvatures h1/h2, equal depth"),
    "global_local_1d": (_global_local_1d, "global well at +s and shallower local well at -s (s = separation)"),
    "quartic_degenerate_1d": (_quartic_degenerate_1d, "V = x^4 + 1, degenerate minimum of order 4"),
    "sigmoid_regression": (_sigmoid_regression, "single-layer sigmoid regression with ridge penalty"),
}


def catalog_get(name, params=None, **kwargs):
    """Build a catalog potential by name."""
    if name not in CATALOG:
        raise ParameterError(f"unknown potential {name!r}; choose from {sorted(CATALOG)}")
    kw = dict(params or {})
    kw.update(kwargs)
    try:
        return CATALOG[name][0](**kw)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {name}: {exc}") from None


# assumption checks

@dataclass
class AssumptionReport:
    grad_ratio_sup: float
    hess_norm_sup: float
    R0: Optional[float]
    alpha0: Optional[float]
    integrability_rel_change: Optional[float]
    notes: list = field(default_factory=list)

    @property
    def dissipative_outside_compact(self):
        return self.R0 is not None

    @property
    def integrable(self):
        return self.integrability_rel_change is not None and self.integrability_rel_change < 1e-6

    def lines(self):
        out = [f"sup |grad V|^2 / V        = {self.grad_ratio_sup:.6g}",
               f"sup ||hess V||            = {self.hess_norm_sup:.6g}"]
        if self.R0 is None:
            out.append("convexity outside compact: not witnessed on the ladder")
        else:
            out.append(f"convexity outside compact: R0 = {self.R0:g}, alpha0 = {self.alpha0:.6g}")
        if self.integrability_rel_change is None:
            out.append("integrability of |x|^2 exp(-2V/A^2): not checked")
        else:
            out.append(f"integrability rel. change on box doubling = {self.integrability_rel_change:.3g}")
        return out + self.notes


def _as_box(box, dim):
    b = np.asarray(box, dtype=float)
    if b.ndim == 1:
        b = np.tile(b, (dim, 1))
    if b.shape != (dim, 2) or np.any(b[:, 1] <= b[:, 0]):
        raise ParameterError("box must be a nonempty (lo, hi) pair per axis")
    return b


def probe_points(box, n, seed=0):
    """Quasi-random (Sobol) probe points inside an axis-aligned box."""
    b = np.asarray(box, dtype=float)
    with warnings.catch_warnings():
        # balance properties only matter for powers of two; probes need coverage
        warnings.simplefilter("ignore", UserWarning)
        pts = qmc.Sobol(d=len(b), scramble=True, seed=seed).random(n)
    return qmc.scale(pts, b[:, 0], b[:, 1])


def _grid_points(box, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


R0_LADDER = (0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0)


def check_assumptions(p, domain_box, A, field=None, resolution=41, max_pairs_points=400):
    """Empirical report on the growth, curvature, dissipativity and
    integrability assumptions over a probe grid in ``domain_box``."""
    if resolution < 10:
        raise ParameterError("probe resolution must be >= 10 points per axis")
    box = _as_box(domain_box, p.dim)
    if p.dim <= 2:
        X = _grid_points(box, resolution)
    else:
        X = probe_points(box, 4096)
    V = p.value(X)
    G = p.gradient(X)
    H = p.hessian(X)
    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(G)) and np.all(np.isfinite(H))):
        raise AssumptionError("non-finite V or gradient on the probe grid")
    if np.any(V <= 0):
        raise AssumptionError("non-positive V detected")
    ratio = float(np.max(np.sum(G**2, axis=1) / V))
    hnorm = float(np.max(np.linalg.norm(H, 2, axis=(1, 2))))

    P = X
    if len(P) > max_pairs_points:
        P = probe_points(box, max_pairs_points, seed=1)
    F = p.gradient(P)
    if field is not None:
        F = np.einsum("nij,nj->ni", field.sst(P), F)
    radius = np.linalg.norm(P, axis=1)
    R0 = alpha0 = None
    rmax = float(np.max(np.abs(box)))
    for R in R0_LADDER:
        if R >= rmax:
            break
        keep = radius >= R
        if keep.sum() < 2:
            break
        Q, FQ = P[keep], F[keep]
        i, j = np.triu_indices(len(Q), k=1)
        dx = Q[i] - Q[j]
        inner = np.sum((FQ[i] - FQ[j]) * dx, axis=1)
        a = float(np.min(inner / np.sum(dx**2, axis=1)))
        if a > 1e-6:
            R0, alpha0 = R, a
            break

    rel = None
    notes = []
    if p.dim <= 2:
        rel = _integrability_change(p, box, A)
    else:
        notes.append("integrability check skipped for d > 2")
    return AssumptionReport(ratio, hnorm, R0, alpha0, rel, notes)


def _integrability_change(p, box, A):
    # nested trapezoid grids: the doubled box reuses every node of the original
    center = box.mean(axis=1)
    half = (box[:, 1] - box[:, 0]) / 2
    n_inner = 2000 if p.dim == 1 else 400
    vals = []
    for scale, n in ((1, n_inner), (2, 2 * n_inner)):
        axes = [np.linspace(c - scale * h, c + scale * h, n + 1) for c, h in zip(center, half)]
        pts = _grid_points(np.array([[a[0], a[-1]] for a in axes]), n + 1)
        v = p.value(pts)
        vals.append((axes, pts, v))
    vmin = min(np.min(v) for _, _, v in vals)
    out = []
    for axes, pts, v in vals:
        f = np.sum(pts**2, axis=1) * np.exp(-2.0 * (v - vmin) / A**2)
        f = f.reshape([len(a) for a in axes])
        for ax in reversed(axes):
            f = np.trapezoid(f, ax, axis=-1)
        out.append(float(f))
    if not np.isfinite(out[1]) or out[1] == 0:
        return float("inf")
    return abs(out[1] - out[0]) / abs(out[1])

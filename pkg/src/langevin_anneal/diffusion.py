"""Position-dependent diffusion fields, the divergence correction and the
annealed drift.

Fields work on batches ``(n, d)``: ``sigma`` and ``sst`` return ``(n, d, d)``
and ``jac_sst`` returns ``T[n, i, j, k] = d_k (sigma sigma^T)_{ij}``.
"""
from dataclasses import dataclass

import numpy as np

from .potentials import ParameterError, Potential, probe_points


class DiffusionField:
    name = "field"

    def __init__(self, dim, sigma0_sq, bound=np.inf, params=None):
        if sigma0_sq <= 0:
            raise ParameterError("lower ellipticity constant must be positive")
        self.dim = int(dim)
        self.sigma0_sq = float(sigma0_sq)
        self.bound = float(bound)
        self.params = dict(params or {})

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{self.name}({args})"

    def sigma(self, X):
        raise NotImplementedError

    def sst(self, X):
        s = self.sigma(X)
        return s @ np.swapaxes(s, 1, 2)

    def apply(self, X, W):
        """``sigma(X) W`` row by row."""
        return np.einsum("nij,nj->ni", self.sigma(X), W)

    has_jac = False
    constant = False

    def jac_sst(self, X):
        raise NotImplementedError


class ConstantField(DiffusionField):
    name = "constant"

    def __init__(self, c=1.0, dim=1):
        if c <= 0:
            raise ParameterError("c must be positive")
        super().__init__(dim, c * c, c, {"c": c, "dim": dim})
        self.c = float(c)

    has_jac = True
    constant = True

    def apply(self, X, W):
        return self.c * W

    def sigma(self, X):
        return np.broadcast_to(self.c * np.eye(self.dim), (len(X), self.dim, self.dim)).copy()

    def sst(self, X):
        return np.broadcast_to(self.c**2 * np.eye(self.dim), (len(X), self.dim, self.dim)).copy()

    def jac_sst(self, X):
        return np.zeros((len(X), self.dim, self.dim, self.dim))


class ScalarSmoothField(DiffusionField):
    """``sigma(x) = sqrt(1 + |x|^2) I``. Elliptic with ``sigma0 = 1`` but not
    bounded; meant as the simplest genuinely multiplicative example."""

    name = "scalar_smooth"

    def __init__(self, dim=1):
        super().__init__(dim, 1.0, np.inf, {"dim": dim})

    has_jac = True

    def apply(self, X, W):
        return np.sqrt(1.0 + np.sum(X**2, axis=1))[:, None] * W

    def sigma(self, X):
        s = np.sqrt(1.0 + np.sum(X**2, axis=1))
        return s[:, None, None] * np.eye(self.dim)

    def sst(self, X):
        s2 = 1.0 + np.sum(X**2, axis=1)
        return s2[:, None, None] * np.eye(self.dim)

    def jac_sst(self, X):
        # d_k (1 + |x|^2) delta_ij = 2 x_k delta_ij
        return 2.0 * np.einsum("ij,nk->nijk", np.eye(self.dim), X)


class DiagRMSpropField(DiffusionField):
    """``sigma(x) = diag((lam + |d_i V(x)|)^(-1/2))`` clipped entrywise into
    ``[sigma0, sigma_max]``.

    The gradient is the exact current one, so the field is a pure function
    of position.
    """

    name = "diag_rmsprop"

    def __init__(self, potential, lam=0.1, sigma0=0.05, sigma_max=10.0):
        if potential is None:
            raise ParameterError("diag_rmsprop needs a potential to read gradients from")
        if lam <= 0:
            raise ParameterError("lam must be positive")
        if not 0 < sigma0 <= sigma_max:
            raise ParameterError("need 0 < sigma0 <= sigma_max")
        super().__init__(potential.dim, sigma0**2, sigma_max,
                         {"lam": lam, "sigma0": sigma0, "sigma_max": sigma_max})
        self.potential = potential
        self.lam, self.lo, self.hi = float(lam), float(sigma0) ** 2, float(sigma_max) ** 2

    has_jac = True

    def _diag(self, X):
        g = self.potential.gradient(X)
        raw = 1.0 / (self.lam + np.abs(g))
        return g, raw, np.clip(raw, self.lo, self.hi)

    def sigma(self, X):
        _, _, s2 = self._diag(X)
        return np.sqrt(s2)[:, :, None] * np.eye(self.dim)

    def apply(self, X, W):
        return np.sqrt(self._diag(X)[2]) * W

    def sst(self, X):
        _, _, s2 = self._diag(X)
        return s2[:, :, None] * np.eye(self.dim)

    def jac_sst(self, X):
        g, raw, _ = self._diag(X)
        H = self.potential.hessian(X)
        active = (raw > self.lo) & (raw < self.hi)
        # d_k (lam + |g_i|)^-1 = -sign(g_i) H_ik (lam + |g_i|)^-2
        dii = -(np.sign(g) * raw**2 * active)[:, :, None] * H
        T = np.zeros((len(X), self.dim, self.dim, self.dim))
        idx = np.arange(self.dim)
        T[:, idx, idx, :] = dii
        return T


class RotationMixedField(DiffusionField):
    """Non-diagonal smooth 2D field ``sigma = R(theta) diag(s1, s2) R(theta)^T``
    with ``theta(x) = (pi/4) tanh(x1 + x2)``."""

    name = "rotation_mixed"

    def __init__(self, s1=1.0, s2=0.5):
        if s1 <= 0 or s2 <= 0:
            raise ParameterError("s1 and s2 must be positive")
        super().__init__(2, min(s1, s2) ** 2, max(s1, s2), {"s1": s1, "s2": s2})
        self.s1, self.s2 = float(s1), float(s2)

    has_jac = True

    def _theta(self, X):
        u = np.tanh(X[:, 0] + X[:, 1])
        return 0.25 * np.pi * u, 0.25 * np.pi * (1 - u**2)

    def sigma(self, X):
        th, _ = self._theta(X)
        c, s = np.cos(th), np.sin(th)
        R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        D = np.diag([self.s1, self.s2])
        return R @ D @ np.swapaxes(R, 1, 2)

    def sst(self, X):
        th, _ = self._theta(X)
        m = 0.5 * (self.s1**2 + self.s2**2)
        r = 0.5 * (self.s1**2 - self.s2**2)
        c2, s2 = np.cos(2 * th), np.sin(2 * th)
        S = np.empty((len(X), 2, 2))
        S[:, 0, 0] = m + r * c2
        S[:, 1, 1] = m - r * c2
        S[:, 0, 1] = S[:, 1, 0] = r * s2
        return S

    def jac_sst(self, X):
        th, dth = self._theta(X)
        r = 0.5 * (self.s1**2 - self.s2**2)
        c2, s2 = np.cos(2 * th), np.sin(2 * th)
        dS = np.empty((len(X), 2, 2))
        dS[:, 0, 0] = -2 * r * s2
        dS[:, 1, 1] = 2 * r * s2
        dS[:, 0, 1] = dS[:, 1, 0] = 2 * r * c2
        # d theta / d x_k is the same for both coordinates
        return np.repeat((dS * dth[:, None, None])[..., None], 2, axis=-1)


FIELDS = {
    "constant": "sigma = c I",
    "scalar_smooth": "sigma = sqrt(1 + |x|^2) I",
    "diag_rmsprop": "sigma = diag((lam + |grad V|)^-1/2), clipped into [sigma0, sigma_max]",
    "rotation_mixed": "2D rotated anisotropic field, non-diagonal",
}


def field_get(name, params=None, potential=None, dim=None):
    kw = dict(params or {})
    if dim is None:
        dim = potential.dim if potential is not None else 1
    try:
        if name == "constant":
            return ConstantField(kw.pop("c", 1.0), kw.pop("dim", dim), **kw)
        if name == "scalar_smooth":
            return ScalarSmoothField(kw.pop("dim", dim), **kw)
        if name == "diag_rmsprop":
            return DiagRMSpropField(potential, **kw)
        if name == "rotation_mixed":
            return RotationMixedField(**kw)
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {name}: {exc}") from None
    raise ParameterError(f"unknown field {name!r}; choose from {sorted(FIELDS)}")


@dataclass(frozen=True)
class DriftSpec:
    """Potential plus diffusion field.

    ``correction`` multiplies ``a^2 Upsilon`` in the drift. The default 1/2
    is the coefficient that makes the Gibbs measure ``exp(-2V/a^2)``
    invariant for ``dX = b_a dt + a sigma dW``; 0 disables the correction
    and 1 reproduces the unhalved form.
    """
    potential: Potential
    field: DiffusionField
    correction: float = 0.5

    def __post_init__(self):
        if self.potential.dim != self.field.dim:
            raise ParameterError(
                f"dimension mismatch: potential {self.potential.dim}, field {self.field.dim}")


def _batch(x, dim):
    X = np.asarray(x, dtype=float)
    if X.ndim <= 1:
        return X.reshape(1, dim), True
    return X, False


def upsilon_fd(field, x):
    """``Upsilon_i = sum_j d_j (sigma sigma^T)_ij`` by central differences."""
    X, single = _batch(x, field.dim)
    h = 1e-5 * (1.0 + np.abs(X))
    out = np.zeros_like(X)
    for j in range(field.dim):
        e = np.zeros_like(X)
        e[:, j] = h[:, j]
        out += (field.sst(X + e)[:, :, j] - field.sst(X - e)[:, :, j]) / (2 * h[:, j, None])
    return out[0] if single else out


def upsilon(spec, x):
    """Divergence correction, analytic when the field provides it."""
    field = spec.field if isinstance(spec, DriftSpec) else spec
    X, single = _batch(x, field.dim)
    if not np.all(np.isfinite(X)):
        raise FloatingPointError("non-finite position")
    if field.has_jac:
        out = np.einsum("nijj->ni", field.jac_sst(X))
    else:
        out = upsilon_fd(field, X)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite correction term")
    return out[0] if single else out


def drift(spec, x, a):
    """``b_a(x) = -(sigma sigma^T grad V)(x) + correction * a^2 Upsilon(x)``."""
    X, single = _batch(x, spec.field.dim)
    if spec.field.constant:
        # sigma sigma^T = c^2 I and Upsilon = 0
        out = -spec.field.c**2 * spec.potential.gradient(X)
        return out[0] if single else out
    S = spec.field.sst(X)
    out = -np.einsum("nij,nj->ni", S, spec.potential.gradient(X))
    if spec.correction != 0.0:
        out = out + spec.correction * a * a * upsilon(spec, X)
    return out[0] if single else out


@dataclass
class EllipticityReport:
    min_eigenvalue: float
    declared: float
    violated: bool
    max_sigma_norm: float


def ellipticity_scan(field, box, n_points=1024, seed=0):
    """Smallest eigenvalue of ``sigma sigma^T`` over quasi-random probes."""
    if n_points < 100:
        raise ParameterError("n_points must be >= 100")
    b = np.asarray(box, dtype=float)
    if b.ndim == 1:
        b = np.tile(b, (field.dim, 1))
    X = probe_points(b, n_points, seed)
    S = field.sst(X)
    lam = float(np.min(np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, 1, 2)))))
    snorm = float(np.max(np.linalg.norm(field.sigma(X), 2, axis=(1, 2))))
    return EllipticityReport(lam, field.sigma0_sq, lam < field.sigma0_sq * (1 - 1e-12), snorm)

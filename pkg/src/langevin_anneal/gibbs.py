"""Gibbs measures ``nu_a`` with density ``Z_a exp(-2(V - V*)/a^2)``.

Normalisation is by quadrature on an automatically chosen box (1D composite
Simpson, 2D tensor trapezoid with a Richardson check). The box is centred on
the known minima, ``k = 12`` local standard deviations wide, and validated by
doubling it.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.special import ndtri

from . import streams
from .metrics import w1_from_cdfs
from .potentials import AssumptionError, ParameterError

BOX_WIDTH_K = 12.0
COUPLING_SAFETY = 1.01
MIN_ACCEPTANCE = 1e-4
AUTO_BOX_DOUBLINGS = 4


class TruncationError(ValueError):
    """The quadrature box does not contain the bulk of the measure."""


class EnvelopeError(RuntimeError):
    """Rejection sampling acceptance rate fell below the floor."""


def _centers(potential):
    return list(potential.minima) + list(getattr(potential, "local_minima", ()))


def _local_scale(m, a):
    """Length scale of ``exp(-2(V - V(x_m))/a^2)`` around a minimum."""
    if m.degenerate is not None:
        return (0.5 * a * a) ** m.degenerate.alpha_min
    lam = float(np.min(np.linalg.eigvalsh(np.atleast_2d(m.hessian))))
    if lam <= 0:
        return (0.5 * a * a) ** 0.25
    return a / math.sqrt(lam)


def _axis_scales(m, a):
    """Per-axis (marginal, conditional) length scales around a minimum."""
    H = np.atleast_2d(m.hessian)
    if m.degenerate is not None or np.min(np.linalg.eigvalsh(H)) <= 0:
        s = _local_scale(m, a)
        return np.full(len(H), s), np.full(len(H), s)
    return a * np.sqrt(np.diag(np.linalg.inv(H))), a / np.sqrt(np.diag(H))


def auto_box(potential, a, k=BOX_WIDTH_K):
    """Per-axis ``[lo, hi]`` covering every minimum +- ``k`` local scales."""
    cs = _centers(potential)
    if not cs:
        raise ParameterError("potential has no minima metadata")
    lo = np.full(potential.dim, np.inf)
    hi = np.full(potential.dim, -np.inf)
    for m in cs:
        r = k * _axis_scales(m, a)[0]
        x = np.atleast_1d(np.asarray(m.location, dtype=float))
        lo, hi = np.minimum(lo, x - r), np.maximum(hi, x + r)
    return np.stack([lo, hi], axis=1)


def _spacing(potential, a):
    """Per-axis grid spacing: 1/60 of the narrowest conditional scale."""
    return np.min([_axis_scales(m, a)[1] for m in _centers(potential)], axis=0) / 60.0


def _axis(lo, hi, h, min_points, max_points=None):
    n = max(min_points, int(math.ceil((hi - lo) / h)) + 1)
    if max_points is not None:
        n = min(n, max_points)
    n += (n + 1) % 2  # odd, for Simpson
    return np.linspace(lo, hi, n)


def _doubled(box):
    c = box.mean(axis=1)
    w = box[:, 1] - box[:, 0]
    return np.stack([c - w, c + w], axis=1)


@dataclass
class GibbsMeasure:
    """A normalised Gibbs measure tabulated on its quadrature grid.

    ``log_Z`` is ``log Z_a`` with ``Z_a = (int exp(-2(V - V*)/a^2))^-1``.
    In 1D ``cdf`` holds the cumulative distribution on ``grid[0]``.
    """
    potential: object
    a: float
    log_Z: float
    box: np.ndarray
    grid: tuple
    density_grid: np.ndarray
    cdf: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def v_star(self):
        return self.potential.v_star

    @property
    def dim(self):
        return self.potential.dim

    @property
    def x(self):
        """The 1D grid."""
        return self.grid[0]

    def log_density(self, x):
        if self.log_Z is None or not np.isfinite(self.log_Z):
            raise ValueError("measure is not normalized")
        return self.log_Z - 2.0 * (self.potential.value(x) - self.v_star) / self.a**2

    def density(self, x):
        return np.exp(self.log_density(x))

    def cdf_on(self, grid):
        """CDF interpolated onto another 1D grid."""
        return np.interp(grid, self.x, self.cdf, left=0.0, right=1.0)

    def basin_masses(self):
        """Mass of each global minimum's nearest-point basin (quadrature)."""
        pts = np.array([np.atleast_1d(m.location) for m in self.potential.minima])
        others = np.array([np.atleast_1d(m.location) for m in _centers(self.potential)])
        if self.dim == 1:
            X = self.x[:, None]
        else:
            g1, g2 = np.meshgrid(*self.grid, indexing="ij")
            X = np.stack([g1.ravel(), g2.ravel()], axis=1)
        dist = np.linalg.norm(X[:, None, :] - others[None, :, :], axis=2)
        owner = np.argmin(dist, axis=1)
        out = []
        for i in range(len(pts)):
            mask = (owner == i).reshape(self.density_grid.shape)
            out.append(_integrate(self.grid, self.density_grid * mask, trapezoid=True))
        return np.array(out)

    def to_csv(self, path):
        """Grid export: ``x,density`` (1D) or ``x_1,x_2,density`` (2D)."""
        path = Path(path)
        if self.dim == 1:
            rows = np.column_stack([self.x, self.density_grid])
            header = "x,density"
        else:
            g1, g2 = np.meshgrid(*self.grid, indexing="ij")
            rows = np.column_stack([g1.ravel(), g2.ravel(), self.density_grid.ravel()])
            header = "x_1,x_2,density"
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def _integrate(grid, f, trapezoid=False):
    if len(grid) == 1:
        if trapezoid:
            return float(np.trapezoid(f, grid[0]))
        return float(simpson(f, x=grid[0]))
    return float(np.trapezoid(np.trapezoid(f, grid[1], axis=1), grid[0]))


def _exponent_on(potential, a, grid):
    if len(grid) == 1:
        X = grid[0][:, None]
        shape = (len(grid[0]),)
    else:
        g1, g2 = np.meshgrid(*grid, indexing="ij")
        X = np.stack([g1.ravel(), g2.ravel()], axis=1)
        shape = g1.shape
    E = -2.0 * (potential.value(X) - potential.v_star) / a**2
    if not np.all(np.isfinite(E)):
        raise AssumptionError("potential not finite on the quadrature grid")
    if np.max(E) > 1e-9 * max(1.0, abs(potential.v_star)) * 2 / a**2:
        raise AssumptionError("V drops below the declared V* on the quadrature grid")
    return E.reshape(shape)


def _mass(potential, a, box, h, min_points, max_points=None):
    grid = tuple(_axis(lo, hi, hj, min_points, max_points) for (lo, hi), hj in zip(box, h))
    E = _exponent_on(potential, a, grid)
    return grid, E, _integrate(grid, np.exp(E))


def normalize(potential, a, box=None, spacing=None, truncation_tol=1e-6):
    """Tabulate and normalise ``nu_a``.

    ``box`` defaults to :func:`auto_box`; ``spacing`` to 1/60 of the
    narrowest local scale. Raises :class:`TruncationError` if doubling the
    box changes the mass by ``truncation_tol`` or more (relative).
    """
    if a <= 0:
        raise ParameterError("a must be positive")
    d = potential.dim
    if d > 2:
        raise ParameterError("quadrature only for d <= 2; use sampling-only mode")
    auto = box is None
    box = auto_box(potential, a) if auto else np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape != (d, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ParameterError(f"box must have shape ({d}, 2) with lo < hi")
    h = _spacing(potential, a) if spacing is None else np.full(d, float(spacing))
    min_points, max_points = (2001, None) if d == 1 else (201, 801)
    # an automatic box is sized from the curvature at the minima, which can
    # be too narrow at large a; it is doubled until the truncation test passes
    for attempt in range(AUTO_BOX_DOUBLINGS + 1 if auto else 1):
        grid, E, mass = _mass(potential, a, box, h, min_points, max_points)
        if not mass > 0:
            raise TruncationError("no mass on the quadrature grid")
        h2 = np.array([g[1] - g[0] for g in grid])
        _, _, mass2 = _mass(potential, a, _doubled(box), h2, 2 * min_points - 1,
                            None if max_points is None else 2 * max_points - 1)
        change = abs(mass2 - mass) / mass2
        if change < truncation_tol:
            break
        if auto and attempt < AUTO_BOX_DOUBLINGS:
            box = _doubled(box)
    diag = {"mass": mass, "doubled_mass": mass2, "truncation_change": change,
            "n_points": int(np.prod([len(g) for g in grid])), "spacing": float(np.min(h2))}
    if d == 1:
        trap = float(np.trapezoid(np.exp(E), grid[0]))
        diag["rule_change"] = abs(trap - mass) / mass
    else:
        coarse = _integrate(tuple(g[::2] for g in grid), np.exp(E[::2, ::2]))
        diag["richardson_change"] = abs(mass - coarse) / (3 * mass)
        mass = mass + (mass - coarse) / 3.0
    if change >= truncation_tol:
        raise TruncationError(
            f"doubling the box changes the mass by {change:.3g} (tolerance {truncation_tol:g})")
    log_Z = -math.log(mass)
    dens = np.exp(E + log_Z)
    cdf = None
    if d == 1:
        cdf = cumulative_trapezoid(dens, grid[0], initial=0.0)
        diag["normalization_error"] = abs(float(simpson(dens, x=grid[0])) - 1.0)
        cdf /= cdf[-1]
    else:
        diag["normalization_error"] = abs(_integrate(grid, dens) * (1 + diag["richardson_change"]) - 1.0)
    return GibbsMeasure(potential, float(a), log_Z, box, grid, dens, cdf, diag)


# sampling

def _sample_1d(g, n, seed, first, step):
    u = streams.uniforms(seed, streams.SAMPLE, step, first, n)
    keep = np.concatenate([[True], np.diff(g.cdf) > 0])
    return np.interp(u, g.cdf[keep], g.x[keep])[:, None]


def _envelope(g, inflate=1.5):
    """Gaussian mixture centred at the minima; covariances from the local
    Hessians, widened by ``inflate``."""
    comps = []
    for m in _centers(g.potential):
        H = np.atleast_2d(m.hessian)
        cov = (inflate**2) * 0.5 * g.a**2 * np.linalg.inv(H)
        w = np.linalg.det(H) ** -0.5 * math.exp(-2 * (m.value - g.v_star) / g.a**2)
        comps.append((np.atleast_1d(m.location).astype(float), cov, w))
    ws = np.array([c[2] for c in comps])
    return comps, ws / ws.sum()


def _mix_logpdf(X, comps, weights):
    d = X.shape[1]
    out = np.full(len(X), -np.inf)
    for (mu, cov, _), w in zip(comps, weights):
        L = np.linalg.cholesky(cov)
        z = np.linalg.solve(L, (X - mu).T).T
        lp = math.log(w) - 0.5 * np.sum(z**2, axis=1) - np.log(np.diag(L)).sum() - 0.5 * d * math.log(2 * math.pi)
        out = np.logaddexp(out, lp)
    return out


def _sample_2d(g, n, seed, first, step):
    comps, weights = _envelope(g)
    g1, g2 = np.meshgrid(*g.grid, indexing="ij")
    X = np.stack([g1.ravel(), g2.ravel()], axis=1)
    logp = g.log_density(X)
    logM = float(np.max(logp - _mix_logpdf(X, comps, weights))) + math.log(1.1)
    if -logM < math.log(MIN_ACCEPTANCE):
        raise EnvelopeError(f"envelope acceptance {math.exp(-logM):.2e} below {MIN_ACCEPTANCE}")
    out = np.full((n, 2), np.nan)
    todo = np.arange(n)
    cum = np.cumsum(weights)
    box = g.box
    attempt = 0
    while todo.size:
        if attempt > 50 * math.exp(logM) + 1000:
            raise EnvelopeError("rejection sampler did not finish")
        # chain-addressed draws: (component, 2 normals, accept) per attempt
        U = streams.chain_uniforms(seed, streams.SAMPLE, step * 65536 + attempt, first, n, 4)[todo]
        k = np.minimum(np.searchsorted(cum, U[:, 0]), len(comps) - 1)
        Z = ndtri(U[:, 1:3])
        Y = np.empty((len(todo), 2))
        for j, (mu, cov, _) in enumerate(comps):
            sel = k == j
            Y[sel] = mu + Z[sel] @ np.linalg.cholesky(cov).T
        inside = np.all((Y >= box[:, 0]) & (Y <= box[:, 1]), axis=1)
        lp = np.where(inside, g.log_density(Y) if len(Y) else 0.0, -np.inf)
        acc = np.log(U[:, 3]) <= lp - _mix_logpdf(Y, comps, weights) - logM
        out[todo[acc]] = Y[acc]
        todo = todo[~acc]
        attempt += 1
    return out


def sample(g, n, seed=0, first=0, step=0):
    """``n`` draws from ``g`` for sample ids ``first .. first+n-1``.

    1D: inverse CDF on the quadrature grid (linear interpolation keeps it
    monotone). 2D: rejection from a Gaussian mixture envelope whose constant
    is taken on the grid. Each draw depends only on ``(seed, step, id)``.
    """
    if n == 0:
        return np.empty((0, g.dim))
    if g.dim == 1:
        return _sample_1d(g, n, seed, first, step)
    return _sample_2d(g, n, seed, first, step)


def sampler(g, seed, step=0):
    """``init(first, count)`` callable for :func:`simulate.run_ensemble`."""
    return lambda first, count: sample(g, count, seed, first, step)


# limit measure

@dataclass(frozen=True)
class DiracMixture:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    def cdf_on(self, grid):
        """CDF on a 1D grid (right-continuous)."""
        p = self.points[:, 0]
        return np.array([self.weights[p <= x].sum() for x in np.asarray(grid)])


def nu_star(potential, degenerate_ok=False):
    """Weights ``(det Hess V(x_i*))^(-1/2)``, normalised.

    Degenerate minima raise unless ``degenerate_ok``; then (1D, all minima
    sharing one exponent) the weights are ``int exp(-g_i)`` of the limit
    polynomials, which is what the same Laplace argument gives.
    """
    ms = list(potential.minima)
    if not ms:
        raise ParameterError("potential has no minima metadata")
    pts = np.array([np.atleast_1d(m.location).astype(float) for m in ms])
    if all(m.positive_definite for m in ms):
        w = np.array([np.linalg.det(np.atleast_2d(m.hessian)) ** -0.5 for m in ms])
        return DiracMixture(pts, w / w.sum())
    if not degenerate_ok:
        raise AssumptionError("degenerate minimum present; use the degenerate path")
    if len(ms) == 1:
        return DiracMixture(pts, np.ones(1))
    specs = [m.degenerate for m in ms]
    if potential.dim != 1 or any(s is None for s in specs) or len({s.alpha_min for s in specs}) > 1:
        raise AssumptionError("mixed degenerate minima are not supported")
    t = np.linspace(-20, 20, 40001)
    w = np.array([np.trapezoid(np.exp(-s.limit_polynomial(t[:, None])), t) for s in specs])
    return DiracMixture(pts, w / w.sum())


def w1_to_nu_star(g, star=None):
    """Exact 1D ``W1(nu_a, nu*) = int |F_a - F*|``.

    ``F*`` is piecewise constant with jumps at the minima; ``F_a`` is linear
    between grid nodes, so the integral is evaluated exactly on the union of
    the grid and the atoms.
    """
    if g.dim != 1:
        raise ParameterError("exact W1 to nu* implemented in 1D")
    star = nu_star(g.potential, degenerate_ok=True) if star is None else star
    atoms = star.points[:, 0]
    pts = np.union1d(g.x, atoms)
    F = np.interp(pts, g.x, g.cdf, left=0.0, right=1.0)
    Fs = np.array([star.weights[atoms <= p].sum() for p in pts[:-1]])
    d0, d1 = F[:-1] - Fs, F[1:] - Fs
    w = np.diff(pts)
    same = d0 * d1 >= 0
    area = np.where(same, 0.5 * np.abs(d0 + d1) * w,
                    0.5 * (d0**2 + d1**2) / np.maximum(np.abs(d0 - d1), 1e-300) * w)
    return float(np.sum(area))


# pairs of measures on a shared grid

def shared_grid(*measures):
    """A 1D grid covering all boxes at the finest spacing."""
    lo = min(m.x[0] for m in measures)
    hi = max(m.x[-1] for m in measures)
    h = min(m.x[1] - m.x[0] for m in measures)
    return _axis(lo, hi, h, 2001)


def density_on(g, grid):
    """Density of ``g`` re-tabulated and re-normalised on ``grid`` (1D)."""
    E = _exponent_on(g.potential, g.a, (grid,))
    f = np.exp(E)
    return f / simpson(f, x=grid)


def w1_exact_1d(g1, g2, grid=None):
    """``int |F1 - F2|`` on a shared quadrature grid."""
    grid = shared_grid(g1, g2) if grid is None else grid
    F1 = cumulative_trapezoid(density_on(g1, grid), grid, initial=0.0)
    F2 = cumulative_trapezoid(density_on(g2, grid), grid, initial=0.0)
    return w1_from_cdfs(F1 / F1[-1], F2 / F2[-1], grid)


def mean_abs_difference(F, G, grid):
    """``E|X - Y|`` for independent ``X ~ F``, ``Y ~ G`` (1D), using
    ``E|X - Y| = int F (1 - G) + G (1 - F)``."""
    return float(np.trapezoid(F * (1 - G) + G * (1 - F), grid))


def ratio_bound(mu, nu, grid=None, safety=COUPLING_SAFETY):
    """Grid maximum of ``f/g`` times ``safety``."""
    grid = shared_grid(mu, nu) if grid is None else grid
    lf = _exponent_on(mu.potential, mu.a, (grid,)) + mu.log_Z
    lg = _exponent_on(nu.potential, nu.a, (grid,)) + nu.log_Z
    return float(safety * np.exp(np.max(lf - lg)))


def analytic_ratio_bound(mu, nu):
    """``Z_mu / Z_nu``, a valid bound when both are Gibbs measures of the
    same potential and ``mu.a <= nu.a``."""
    if mu.potential is not nu.potential or mu.a > nu.a:
        raise ParameterError("analytic bound needs the same potential and mu.a <= nu.a")
    return math.exp(mu.log_Z - nu.log_Z)


def coupling_bound_exact(mu, nu, M, grid=None):
    """``E|X - Y| - E|X - X~| / M`` by quadrature (1D): the mean transport
    cost of the acceptance-rejection coupling, hence an upper bound on
    ``W1(mu, nu)``."""
    grid = shared_grid(mu, nu) if grid is None else grid
    F = cumulative_trapezoid(density_on(mu, grid), grid, initial=0.0)
    G = cumulative_trapezoid(density_on(nu, grid), grid, initial=0.0)
    F, G = F / F[-1], G / G[-1]
    return mean_abs_difference(F, G, grid) - mean_abs_difference(F, F, grid) / M


def coupled_pair(mu, nu, M=None, n=1000, seed=0, first=0):
    """Acceptance-rejection coupling ``(X', Y)`` with ``X' ~ mu``, ``Y ~ nu``.

    ``X' = Y`` when ``U <= f(Y) / (M g(Y))`` and ``X' = X`` otherwise, with
    ``X ~ mu``, ``Y ~ nu`` and ``U`` independent. ``M`` defaults to
    :func:`ratio_bound` and is checked against the grid.
    """
    grid_max = ratio_bound(mu, nu, safety=1.0) if mu.dim == 1 else None
    if M is None:
        M = grid_max * COUPLING_SAFETY if grid_max is not None else None
        if M is None:
            raise ParameterError("M must be given in 2D")
    if grid_max is not None and grid_max > M * (1 + 1e-12):
        raise AssumptionError(f"f <= M g fails on the grid (max ratio {grid_max:.6g} > M={M:.6g})")
    X = sample(mu, n, seed, first, step=1)
    Y = sample(nu, n, seed, first, step=2)
    U = streams.uniforms(seed, streams.COUPLING, 0, first, n)
    ratio = np.exp(mu.log_density(Y) - nu.log_density(Y)) / M
    accept = (U <= ratio)[:, None]
    return np.where(accept, Y, X), Y, float(np.mean(accept))


# degenerate minima

def _rescaling(potential):
    m = potential.minima[0]
    if m.degenerate is not None:
        return m.degenerate.alpha_min, m.degenerate.limit_polynomial
    H = np.atleast_2d(m.hessian)
    return 0.5, lambda h: 0.5 * np.einsum("ni,ij,nj->n", h, H, h)


def degenerate_rescaled_law(potential, s, n, seed=0, first=0):
    """Samples of ``(Z_s - x*) / s^alpha`` with ``Z_s ~ nu_{sqrt(2 s)}``.

    As ``s -> 0`` these approach the law with density proportional to
    ``exp(-g)``, ``g`` the limit polynomial of the minimum (``hHh/2`` and
    ``alpha = 1/2`` for a positive definite one).
    """
    if potential.dim != 1:
        raise ParameterError("degenerate rescaling implemented in 1D")
    if s <= 0:
        raise ParameterError("s must be positive")
    if len(potential.minima) != 1:
        raise ParameterError("rescaling needs a single global minimum")
    alpha, _ = _rescaling(potential)
    x_star = float(np.atleast_1d(potential.minima[0].location)[0])
    g = normalize(potential, math.sqrt(2 * s))
    return (sample(g, n, seed, first) - x_star) / s**alpha


def limit_law(potential, half_width=8.0, n=40001):
    """Grid, density and CDF of ``exp(-g) / int exp(-g)`` (1D)."""
    _, gpoly = _rescaling(potential)
    t = np.linspace(-half_width, half_width, n)
    f = np.exp(-gpoly(t[:, None]))
    f /= simpson(f, x=t)
    F = cumulative_trapezoid(f, t, initial=0.0)
    return t, f, F / F[-1]

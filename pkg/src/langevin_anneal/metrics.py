"""Wasserstein-1 estimators and log-log rate fits."""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

ASSIGNMENT_CAP = 4096


class EmpiricalMeasure:
    """Equal-weight point cloud, stored as an ``(n, d)`` array."""

    def __init__(self, points):
        P = np.asarray(points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.ndim != 2 or P.shape[0] == 0:
            raise ValueError("empirical measure needs at least one point")
        if not np.all(np.isfinite(P)):
            raise ValueError("empirical measure has non-finite coordinates")
        self.points = P

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def _as_measure(x):
    return x if isinstance(x, EmpiricalMeasure) else EmpiricalMeasure(x)


def w1_1d_sorted(a, b):
    """W1 between two 1D samples through the comonotone (sorted) coupling.

    For equal sizes this is ``mean |x_(i) - y_(i)|``. Unequal sizes are
    aligned through their quantile functions, i.e. ``int |F - G|`` of the
    two empirical CDFs, which needs no resampling.
    """
    A, B = _as_measure(a), _as_measure(b)
    if A.dim != 1 or B.dim != 1:
        raise ValueError("w1_1d_sorted needs 1D samples")
    x = np.sort(A.points[:, 0])
    y = np.sort(B.points[:, 0])
    if len(x) == len(y):
        return float(np.mean(np.abs(x - y)))
    return _w1_1d_exact_unequal(x, y)


def _w1_1d_exact_unequal(x, y):
    """Exact ``int |F - G|`` for two sorted samples of different sizes."""
    pts = np.concatenate([x, y])
    pts.sort(kind="mergesort")
    F = np.searchsorted(x, pts[:-1], side="right") / len(x)
    G = np.searchsorted(y, pts[:-1], side="right") / len(y)
    return float(np.sum(np.abs(F - G) * np.diff(pts)))


def w1_1d_cdf(f_grid, g_grid, grid, normalized_tol=1e-6):
    """``int |F - G|`` for two densities tabulated on a shared grid."""
    x = np.asarray(grid, dtype=float)
    f = np.asarray(f_grid, dtype=float)
    g = np.asarray(g_grid, dtype=float)
    F = cumulative_trapezoid(f, x, initial=0.0)
    G = cumulative_trapezoid(g, x, initial=0.0)
    if abs(F[-1] - 1) > normalized_tol or abs(G[-1] - 1) > normalized_tol:
        raise ValueError(f"densities not normalized (masses {F[-1]:.8g}, {G[-1]:.8g})")
    return w1_from_cdfs(F, G, x)


def w1_from_cdfs(F, G, grid):
    """Trapezoid integral of ``|F - G|``."""
    return float(np.trapezoid(np.abs(np.asarray(F) - np.asarray(G)), np.asarray(grid)))


def w1_samples_vs_cdf(samples, F, grid):
    """W1 between a 1D sample and a law given by its CDF on a grid.

    The empirical CDF is a step function; ``|F_n - F|`` is integrated on the
    union of the grid and the sample points with linear interpolation of
    ``F`` between grid nodes.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    grid = np.asarray(grid, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    lo, hi = min(grid[0], x[0]), max(grid[-1], x[-1])
    pts = np.union1d(np.clip(x, lo, hi), grid)
    pts = np.union1d(pts, [lo, hi])
    Fi = np.interp(pts, grid, F, left=0.0, right=1.0)
    Fn = np.searchsorted(x, pts, side="right") / x.size
    # Fn is constant on [pts_i, pts_{i+1}); F is linear there. Integrate
    # |Fn - F| exactly on each piece.
    d0 = Fn[:-1] - Fi[:-1]
    d1 = Fn[:-1] - Fi[1:]
    w = np.diff(pts)
    same = d0 * d1 >= 0
    area = np.where(same, 0.5 * np.abs(d0 + d1) * w,
                    0.5 * (d0**2 + d1**2) / np.maximum(np.abs(d0 - d1), 1e-300) * w)
    return float(np.sum(area))


def w1_assignment(a, b):
    """Exact W1 between two equal-size clouds by optimal assignment."""
    A, B = _as_measure(a), _as_measure(b)
    if len(A) != len(B):
        raise ValueError("w1_assignment needs equal sample counts")
    if len(A) > ASSIGNMENT_CAP:
        raise ValueError(f"assignment capped at n={ASSIGNMENT_CAP}; use w1_assignment_subsampled")
    C = cdist(A.points, B.points)
    r, c = linear_sum_assignment(C)
    return float(C[r, c].sum() / len(A))


def w1_assignment_subsampled(a, b, n=ASSIGNMENT_CAP, repeats=8, seed=0):
    """Mean and bootstrap standard error of assignment W1 on random
    equal-size subsamples."""
    A, B = _as_measure(a), _as_measure(b)
    n = min(n, len(A), len(B))
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(repeats):
        ia = rng.choice(len(A), n, replace=False)
        ib = rng.choice(len(B), n, replace=False)
        vals.append(w1_assignment(A.points[ia], B.points[ib]))
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / np.sqrt(repeats)) if repeats > 1 else float("nan")
    return float(vals.mean()), se


def w1(a, b):
    """Dispatch: sorted coupling in 1D, (subsampled) assignment otherwise."""
    A, B = _as_measure(a), _as_measure(b)
    if A.dim == 1:
        return w1_1d_sorted(A, B)
    if len(A) == len(B) and len(A) <= ASSIGNMENT_CAP:
        return w1_assignment(A, B)
    return w1_assignment_subsampled(A, B)[0]


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float

    def predict(self, x):
        return np.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope


def rate_fit(xs, ys):
    """Least-squares line through ``(log x, log y)``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.size < 4:
        raise ValueError("rate_fit needs at least 4 paired points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("rate_fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 if tot == 0 else float(np.clip(1 - np.sum(resid**2) / tot, 0.0, 1.0))
    return RateFit(float(slope), float(intercept), r2)


def decay_rate_fit(ts, ys):
    """Exponential rate ``lambda`` in ``y ~ C exp(-lambda t)`` from a
    least-squares fit of ``log y`` against ``t``."""
    t = np.asarray(ts, dtype=float)
    y = np.asarray(ys, dtype=float)
    if t.size < 3 or np.any(y <= 0):
        raise ValueError("decay fit needs >= 3 positive values")
    slope, intercept = np.polyfit(t, np.log(y), 1)
    return float(-slope), float(intercept)

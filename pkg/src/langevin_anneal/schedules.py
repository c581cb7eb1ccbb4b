"""Noise-level schedules and decreasing step sequences.

Every schedule exposes ``level(t)``, the noise level the integrators use at
time ``t``:

* :class:`AnnealSchedule` -- ``a(t) = A / sqrt(log(t + e))``;
* :class:`LogPowerSchedule` -- ``A log(t + e)^(-(1+eps)/2)``, a cooling law
  that is too fast (negative control);
* :class:`PlateauSchedule` -- piecewise constant, ``a(T_{n+1})`` held on
  ``[T_n, T_{n+1})`` with ``T_n = C_T n^(1+beta)``;
* :class:`ConstantLevel` -- frozen ``a``.
"""
import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import zeta

from .potentials import ParameterError

# largest prefix-sum table N_of will build (float64, so about 400 MB)
MAX_TABLE = 5 * 10**7
EULER_GAMMA = float(np.euler_gamma)


@dataclass(frozen=True)
class AnnealSchedule:
    A: float = 1.0

    def __post_init__(self):
        if self.A <= 0:
            raise ParameterError("A must be positive")

    def a_of(self, t):
        if np.any(np.asarray(t) < 0):
            raise ValueError("t must be non-negative")
        return self.A / np.sqrt(np.log(np.asarray(t, dtype=float) + math.e))

    level = a_of
    levels = a_of


@dataclass(frozen=True)
class LogPowerSchedule:
    A: float = 1.0
    eps: float = 1.0

    def __post_init__(self):
        if self.A <= 0 or self.eps <= 0:
            raise ParameterError("A and eps must be positive")

    def a_of(self, t):
        return self.A * np.log(np.asarray(t, dtype=float) + math.e) ** (-(1 + self.eps) / 2)

    level = a_of
    levels = a_of


@dataclass(frozen=True)
class ConstantLevel:
    a: float

    def __post_init__(self):
        if self.a < 0:
            raise ParameterError("a must be non-negative")

    def a_of(self, t):
        return self.a if np.ndim(t) == 0 else np.full(np.shape(t), self.a)

    level = a_of
    levels = a_of


@dataclass(frozen=True)
class PlateauSchedule:
    C_T: float = 10.0
    beta: float = 1.0
    A: float = 1.0
    base: object = None  # continuous profile sampled at T_n; AnnealSchedule(A) if None

    def __post_init__(self):
        if self.C_T <= 0 or self.beta <= 0 or self.A <= 0:
            raise ParameterError("C_T, beta and A must be positive")
        if self.base is None:
            object.__setattr__(self, "base", AnnealSchedule(self.A))

    def T(self, n):
        return self.C_T * np.asarray(n, dtype=float) ** (1 + self.beta)

    def a_n(self, n):
        return self.base.a_of(self.T(n))

    def plateau_times(self, n):
        """``(T_n, a_n)`` for ``n >= 1``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        T = float(self.T(n))
        return T, float(self.base.a_of(T))

    def index(self, t):
        """The ``n`` with ``T_n <= t < T_{n+1}`` (``T_0 = 0``)."""
        n = int(math.floor((t / self.C_T) ** (1.0 / (1 + self.beta))))
        while n > 0 and self.T(n) > t:
            n -= 1
        while self.T(n + 1) <= t:
            n += 1
        return n

    def level(self, t):
        return float(self.a_n(self.index(t) + 1))

    a_of = level

    def levels(self, times):
        """Vectorised :meth:`level`."""
        times = np.asarray(times, dtype=float)
        if times.size == 0:
            return np.empty(0)
        top = self.index(float(np.max(times))) + 1
        Tn = self.T(np.arange(1, top + 1))
        idx = np.searchsorted(Tn, times, side="right")
        return self.a_n(idx + 1)


class StepSequence:
    """``gamma_n = gamma1 / n^alpha`` (power), ``gamma1 / n`` (harmonic) or
    ``gamma1`` (constant; used for frozen-level runs and references).

    ``Gamma`` and ``N_of`` use prefix sums grown lazily under a lock; the
    growth continues the running sum so every cached value is the same no
    matter how the cache was extended.
    """

    def __init__(self, kind="power", gamma1=0.1, alpha=0.6):
        if kind not in ("power", "harmonic", "constant"):
            raise ParameterError(f"unknown step kind {kind!r}")
        if gamma1 <= 0:
            raise ParameterError("gamma1 must be positive")
        if kind == "power" and not 0 < alpha <= 1:
            raise ParameterError("alpha must lie in (0, 1]")
        self.kind = kind
        self.gamma1 = float(gamma1)
        self.alpha = 1.0 if kind == "harmonic" else (0.0 if kind == "constant" else float(alpha))
        self._lock = threading.Lock()
        self._prefix = np.zeros(1)

    def __repr__(self):
        return f"StepSequence(kind={self.kind!r}, gamma1={self.gamma1}, alpha={self.alpha})"

    def gamma(self, n):
        n = np.asarray(n, dtype=float)
        if np.any(n < 1):
            raise ValueError("step index starts at 1")
        if self.kind == "constant":
            return self.gamma1 + 0.0 * n
        return self.gamma1 / n**self.alpha

    def _grow(self, upto):
        with self._lock:
            have = len(self._prefix) - 1
            if upto <= have:
                return self._prefix
            new_n = max(upto, 2 * have, 1024)
            g = self.gamma(np.arange(have + 1, new_n + 1))
            ext = np.cumsum(np.concatenate([[self._prefix[-1]], g]))[1:]
            self._prefix = np.concatenate([self._prefix, ext])
            return self._prefix

    def Gamma(self, n):
        """``Gamma_n = gamma_1 + ... + gamma_n`` (``Gamma_0 = 0``)."""
        n = np.asarray(n)
        pre = self._grow(int(np.max(n)))
        return pre[n]

    def prefix(self, upto):
        """Snapshot of ``Gamma_0 .. Gamma_upto``."""
        return self._grow(upto)[: upto + 1]

    def log_N_estimate(self, t):
        """``log n`` solving ``Gamma_n = t`` from the Euler-Maclaurin
        expansion of the partial sums; no table is built."""
        s = t / self.gamma1
        if s <= 1.0:
            return 0.0
        if self.kind == "constant":
            return math.log(s)
        if self.alpha == 1.0:
            u = max(s - EULER_GAMMA, 0.0)
            for _ in range(50):
                u = s - EULER_GAMMA - 0.5 * math.exp(-u)
            return u
        a, z = self.alpha, float(zeta(self.alpha))
        u = math.log(max((1 - a) * (s - z), 1.0)) / (1 - a)
        for _ in range(100):
            f = math.exp((1 - a) * u) / (1 - a) + z + 0.5 * math.exp(-a * u) - s
            df = math.exp((1 - a) * u) - 0.5 * a * math.exp(-a * u)
            step = f / df
            u = max(u - step, 0.0)
            if abs(step) < 1e-14 * max(1.0, u):
                break
        return u

    def N_of(self, t):
        """``max{k >= 0 : Gamma_k <= t}``; :class:`OverflowError` when that
        needs more than ``MAX_TABLE`` steps."""
        if t < 0:
            raise ValueError("t must be non-negative")
        if self.log_N_estimate(t) > math.log(MAX_TABLE):
            raise OverflowError(f"reaching t={t:g} needs more than {MAX_TABLE} steps")
        pre = self._prefix
        while pre[-1] <= t:
            pre = self._grow(2 * len(pre))
        return int(np.searchsorted(pre, t, side="right") - 1)

    def log_gamma_at(self, t):
        """``log gamma_{N(t)}`` (with ``N`` floored at 1), exact from the
        prefix table when it is small and asymptotic beyond ``MAX_TABLE``."""
        u = self.log_N_estimate(t)
        if u <= math.log(MAX_TABLE) - 1.0:
            return math.log(float(self.gamma(max(1, self.N_of(t)))))
        return math.log(self.gamma1) - self.alpha * u

    def steps_to(self, t):
        """Number of steps until ``Gamma`` passes ``t`` (``N(t) + 1``)."""
        return self.N_of(t) + 1

    def conditions(self):
        """Classical conditions: steps decrease to 0, sum diverges, sum of
        squares converges. Decided from the kind's exponent."""
        return {
            "decreasing_to_zero": self.kind != "constant",
            "sum_diverges": self.alpha <= 1.0,
            "sum_squares_converges": self.alpha > 0.5,
        }

    def violations(self):
        msgs = {
            "decreasing_to_zero": "steps do not decrease to 0",
            "sum_diverges": "sum of gamma_n converges",
            "sum_squares_converges": "sum of gamma_n^2 diverges",
        }
        return [msgs[k] for k, ok in self.conditions().items() if not ok]


def varpi_estimate(seq, n_max=10**5):
    """Limsup proxy for ``(gamma_n - gamma_{n+1}) / gamma_{n+1}^2``: the
    maximum of the ratio over the tail ``n >= n_max / 2``."""
    if n_max < 1000:
        raise ValueError("n_max must be >= 1000")
    n = np.arange(n_max // 2, n_max, dtype=float)
    g, g1 = seq.gamma(n), seq.gamma(n + 1)
    return float(np.max((g - g1) / g1**2))


def varpi_profile(seq, n_values):
    n = np.asarray(n_values, dtype=float)
    g, g1 = seq.gamma(n), seq.gamma(n + 1)
    return (g - g1) / g1**2

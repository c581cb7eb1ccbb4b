"""Euler-Maruyama integrators with decreasing steps.

Three drivers share one update rule

    x' = x + gamma_{k+1} (b_a(x) + zeta_{k+1}(x)) + a sigma(x) dW,
    dW ~ Normal(0, gamma_{k+1} I),

and differ only in the level ``a`` used on step ``k -> k+1``: the continuous
schedule at ``Gamma_k``, the plateau value of the plateau holding
``Gamma_k``, or a frozen constant.

All randomness is addressed by ``(seed, purpose, step, chain id)`` through
:mod:`langevin_anneal.streams`. Two ensembles run with the same seed and chain
ids therefore see the same Brownian increments (synchronous coupling), and
results do not depend on how chains are split across workers.
"""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import streams
from .diffusion import drift
from .potentials import ParameterError, SigmoidRegression
from .schedules import ConstantLevel, PlateauSchedule

DIVERGENCE_RADIUS = 1e8
SURVIVAL_FRACTION = 0.9


class DivergedChainError(FloatingPointError):
    """A single chain left the finite region; carries its last finite state."""

    def __init__(self, message, last_state):
        super().__init__(message)
        self.last_state = last_state


class EnsembleDivergedError(RuntimeError):
    """Fewer than the required fraction of chains survived."""

    def __init__(self, n_diverged, n_chains, first_failures):
        self.n_diverged, self.n_chains = int(n_diverged), int(n_chains)
        self.first_failures = list(first_failures)
        super().__init__(
            f"{n_diverged} of {n_chains} chains diverged "
            f"(survival below {SURVIVAL_FRACTION:.0%}); first failures at "
            + ", ".join(f"chain {c} step {k}" for c, k in self.first_failures[:5]))


# noise model

@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean gradient noise ``zeta``.

    ``none``; ``gaussian_v`` with ``zeta(x) = c V(x)^(1/2) xi``; ``minibatch``
    with the gradient of ``m`` data rows drawn without replacement minus
    the full gradient (sigmoid_regression only).
    """
    kind: str = "none"
    c: float = 0.0
    m: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian_v", "minibatch"):
            raise ParameterError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian_v" and self.c < 0:
            raise ParameterError("c must be non-negative")
        if self.kind == "minibatch" and self.m < 1:
            raise ParameterError("minibatch size must be >= 1")

    @classmethod
    def parse(cls, text, params=None):
        kw = dict(params or {})
        if text in (None, "", "none"):
            return cls()
        if text == "gaussian_v":
            return cls("gaussian_v", c=float(kw.get("c", 0.1)))
        if text == "minibatch":
            return cls("minibatch", m=int(kw.get("m", 8)))
        raise ParameterError(f"unknown noise kind {text!r}")

    def check_potential(self, potential):
        if self.kind == "minibatch":
            if not isinstance(potential, SigmoidRegression):
                raise ParameterError("minibatch noise needs the sigmoid_regression potential")
            if self.m > potential.M:
                raise ParameterError("minibatch size exceeds the data set")

    def draw(self, potential, X, seed, step, first_chain):
        """``zeta_step(X)`` for the chains ``first_chain ..`` in ``X``."""
        n, d = X.shape
        if self.kind == "none":
            return None
        if self.kind == "gaussian_v":
            xi = streams.normals(seed, streams.ZETA, step, first_chain, n, d)
            return self.c * np.sqrt(potential.value(X))[:, None] * xi
        u = streams.chain_uniforms(seed, streams.MINIBATCH, step, first_chain, n, potential.M)
        idx = np.argsort(u, axis=1)[:, : self.m]
        return potential.minibatch_gradient(X, idx) - potential.gradient(X)


NO_NOISE = NoiseModel()


# single steps

@dataclass
class StepRecord:
    """What a step used, kept so the step can be interpolated."""
    increment: np.ndarray  # b + zeta, shape (n, d)
    a: float
    x: np.ndarray  # start of the step
    field: object
    dW: np.ndarray  # (n, d)
    gamma: float

    def sigma_times(self, W):
        return self.field.apply(self.x, W)


@dataclass
class ChainState:
    """A batch of chains (``x`` has shape ``(n, d)``) on the step grid.

    ``seed`` and ``first_chain`` identify the chains' random streams.
    ``record`` is the step that produced this state (``None`` at start).
    """
    x: np.ndarray
    t: float = 0.0
    step_index: int = 0
    seed: int = 0
    first_chain: int = 0
    record: Optional[StepRecord] = field(default=None, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if not np.all(np.isfinite(x)):
            raise ParameterError("initial state must be finite")
        self.x = x

    @property
    def n_chains(self):
        return self.x.shape[0]


def _advance(X, a, gamma, spec, noise, seed, step, first_chain, dW=None):
    """One EM step for rows of ``X``; ``step`` is the index of the new point."""
    n, d = X.shape
    if dW is None:
        dW = math.sqrt(gamma) * streams.normals(seed, streams.BROWNIAN, step, first_chain, n, d)
    inc = drift(spec, X, a)
    zeta = noise.draw(spec.potential, X, seed, step, first_chain)
    if zeta is not None:
        inc = inc + zeta
    Xn = X + gamma * inc + a * spec.field.apply(X, dW)
    return Xn, StepRecord(inc, float(a), X, spec.field, dW, float(gamma))


def _bad_rows(X):
    # NaN fails the comparison, so non-finite rows are caught too
    with np.errstate(over="ignore", invalid="ignore"):
        return ~(np.sum(X * X, axis=1) <= DIVERGENCE_RADIUS**2)


def em_step(state, spec, a, seq, noise=NO_NOISE, dW=None):
    """One step at a given level ``a``. ``dW`` overrides the stream draw."""
    k = state.step_index
    if abs(state.t - float(seq.Gamma(k))) > 1e-12 * max(1.0, state.t):
        raise ValueError("state is not on the step grid")
    gamma = float(seq.gamma(k + 1))
    if dW is not None:
        dW = np.broadcast_to(np.asarray(dW, dtype=float), state.x.shape)
    Xn, rec = _advance(state.x, a, gamma, spec, noise, state.seed, k + 1, state.first_chain, dW)
    bad = _bad_rows(Xn)
    if np.any(bad):
        raise DivergedChainError(
            f"chain {state.first_chain + int(np.argmax(bad))} diverged at step {k + 1}", state)
    return ChainState(Xn, float(seq.Gamma(k + 1)), k + 1, state.seed, state.first_chain, rec)


def em_step_continuous(state, spec, sched, seq, noise=NO_NOISE, dW=None, a_override=None):
    """Step with the level ``a(Gamma_k)`` of a continuous schedule.
    ``a_override`` and ``dW`` are test hooks."""
    a = float(sched.a_of(state.t)) if a_override is None else float(a_override)
    return em_step(state, spec, a, seq, noise, dW)


def em_step_plateau(state, spec, plateau, seq, noise=NO_NOISE, dW=None):
    """Step with the plateau value ``a_{n+1}`` where ``T_n <= Gamma_k < T_{n+1}``."""
    return em_step(state, spec, plateau.level(state.t), seq, noise, dW)


def _bridge(rec, s, seed, step, first_chain, sub=0):
    """``W_{t} - W_{Gamma_k}`` at ``s = t - Gamma_k`` given the whole step's ``dW``."""
    g = rec.gamma
    z = streams.normals(seed, streams.BRIDGE, step, first_chain, rec.dW.shape[0], rec.dW.shape[1], sub)
    return (s / g) * rec.dW + math.sqrt(s * (g - s) / g) * z


def interpolate(before, after, t, sub=0):
    """Genuine interpolation between two consecutive grid states.

    The Brownian path inside the step is the bridge pinned at the stored
    increment; its normal comes from a dedicated stream (``sub`` selects one
    of several independent bridge draws for the same step).
    """
    if after.record is None or after.step_index != before.step_index + 1:
        raise ValueError("states must be consecutive grid points")
    if not before.t <= t < after.t:
        raise ValueError(f"t={t} outside [{before.t}, {after.t})")
    s = t - before.t
    if s == 0.0:
        return before.x.copy()
    rec = after.record
    W = _bridge(rec, s, before.seed, after.step_index, before.first_chain, sub)
    return before.x + s * rec.increment + rec.a * rec.sigma_times(W)


# trajectories

@dataclass
class Trajectory:
    """Recorded positions ``positions[r, chain, :]`` at ``times[r]``.

    Chains that diverged carry NaN from the divergence onwards and are
    listed in ``diverged``.
    """
    times: np.ndarray
    positions: np.ndarray
    chain_ids: np.ndarray
    diverged: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("record times must be strictly increasing")

    @property
    def dim(self):
        return self.positions.shape[2]

    def at(self, i, surviving=True):
        """Positions at the ``i``-th record time, shape ``(n, d)``."""
        P = self.positions[i]
        return P[~self.diverged] if surviving else P

    def final(self):
        return self.at(len(self.times) - 1)

    def survival(self):
        return 1.0 - float(np.mean(self.diverged))

    def to_csv(self, path, config=None):
        """Long-format CSV ``chain_id,t,x_1..x_d`` plus a JSON sidecar with
        the metadata and ``config``."""
        path = Path(path)
        d = self.dim
        with open(path, "w") as fh:
            fh.write(",".join(["chain_id", "t"] + [f"x_{i + 1}" for i in range(d)]) + "\n")
            for r, t in enumerate(self.times):
                for c, cid in enumerate(self.chain_ids):
                    xs = ",".join(repr(float(v)) for v in self.positions[r, c])
                    fh.write(f"{int(cid)},{float(t)!r},{xs}\n")
        side = dict(self.meta)
        if config is not None:
            side["config"] = config
        side["diverged_chains"] = [int(c) for c in self.chain_ids[self.diverged]]
        path.with_suffix(".meta.json").write_text(json.dumps(side, indent=2, sort_keys=True, default=str))

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        ids = np.unique(data[:, 0]).astype(int)
        times = np.unique(data[:, 1])
        P = data[:, 2:].reshape(len(times), len(ids), -1)
        side = path.with_suffix(".meta.json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        bad = set(meta.get("diverged_chains", []))
        return cls(times, P, ids, np.array([c in bad for c in ids]), meta)


def _levels_for(mode, schedule, times):
    if mode == "constant":
        return np.full(len(times), float(schedule.a if isinstance(schedule, ConstantLevel) else schedule))
    if mode == "plateau":
        if not isinstance(schedule, PlateauSchedule):
            raise ParameterError("plateau mode needs a PlateauSchedule")
        return np.asarray(schedule.levels(times), dtype=float)
    if mode == "continuous":
        return np.asarray(schedule.levels(times), dtype=float)
    raise ParameterError(f"unknown mode {mode!r}")


def _initial(init, offset, first, count, dim):
    """Rows ``offset ..`` of an array init, or chains ``first ..`` of a sampler."""
    if callable(init):
        X = np.asarray(init(first, count), dtype=float).reshape(count, dim)
    else:
        x0 = np.asarray(init, dtype=float)
        if x0.ndim == 2:
            X = x0[offset:offset + count].copy()
        else:
            X = np.broadcast_to(x0.reshape(1, dim), (count, dim)).copy()
    if not np.all(np.isfinite(X)):
        raise ParameterError("initial positions must be finite")
    return X


def _run_chunk(init, offset, first, count, spec, noise, seed, levels, gammas, Gammas, plan):
    """Integrate chains ``first .. first+count-1``; ``plan[k]`` lists the
    records taken on step ``k -> k+1`` as ``(slot, s)`` with ``s`` the offset
    from ``Gamma_k`` (``s == 0`` records the state at ``Gamma_k``)."""
    d = spec.potential.dim
    X = _initial(init, offset, first, count, d)
    n_rec = sum(len(v) for v in plan.values())
    out = np.full((n_rec, count, d), np.nan)
    alive = np.ones(count, dtype=bool)
    died_at = np.full(count, -1, dtype=np.int64)
    K = len(gammas)
    for k in range(K + 1):
        todo = plan.get(k, ())
        for slot, s in todo:
            if s == 0.0:
                out[slot] = np.where(alive[:, None], X, np.nan)
        if k == K:
            break
        a, g = float(levels[k]), float(gammas[k])
        dW = math.sqrt(g) * streams.normals(seed, streams.BROWNIAN, k + 1, first, count, d)
        if np.all(alive):
            Xn, rec = _advance(X, a, g, spec, noise, seed, k + 1, first, dW)
        else:
            # dead rows are frozen as NaN; only live rows are evaluated
            idx = np.flatnonzero(alive)
            sub = np.full_like(X, np.nan)
            Xa, rec = _advance(X[idx], a, g, spec, _SubsetNoise(noise, idx, count), seed,
                               k + 1, first, dW[idx])
            sub[idx] = Xa
            Xn = sub
            rec = _expand(rec, idx, count, d)
        for j, (slot, s) in enumerate(r for r in todo if r[1] > 0.0):
            W = _bridge(rec, s, seed, k + 1, first, sub=j)
            with np.errstate(invalid="ignore"):
                Y = X + s * rec.increment + a * rec.sigma_times(W)
            out[slot] = np.where(alive[:, None], Y, np.nan)
        bad = alive & _bad_rows(Xn)
        if np.any(bad):
            died_at[bad] = k + 1
            alive &= ~bad
            Xn[bad] = np.nan
        X = Xn
    return out, alive, died_at


class _SubsetNoise:
    """Noise draws for a subset of rows, addressed by their full chain ids."""

    def __init__(self, noise, idx, count):
        self.noise, self.idx, self.count = noise, idx, count

    def draw(self, potential, X, seed, step, first_chain):
        if self.noise.kind == "none":
            return None
        full = np.zeros((self.count, X.shape[1]))
        full[self.idx] = X
        # fill dead rows with a finite dummy so the full draw is well defined
        return self.noise.draw(potential, full, seed, step, first_chain)[self.idx]


def _expand(rec, idx, count, d):
    inc = np.full((count, d), np.nan)
    inc[idx] = rec.increment
    x = np.zeros((count, d))
    x[idx] = rec.x
    dW = np.zeros((count, d))
    dW[idx] = rec.dW
    return replace(rec, increment=inc, x=x, dW=dW)


def run_ensemble(init, n_chains, horizon, mode, spec, schedule, steps, noise=NO_NOISE,
                 record_at=None, seed=0, jobs=1, chunk_size=8192, first_chain=0,
                 survival=SURVIVAL_FRACTION):
    """Integrate ``n_chains`` independent chains up to ``horizon``.

    ``init`` is a point, an ``(n_chains, d)`` array, or a callable
    ``init(first_chain, count) -> (count, d)``. ``mode`` is ``continuous``,
    ``plateau`` or ``constant`` (``schedule`` is then a number or a
    :class:`ConstantLevel`). Positions are recorded at ``record_at`` (default:
    the horizon), interpolating off the step grid. The result is a pure
    function of ``seed`` and the arguments, for any ``jobs`` and
    ``chunk_size``.
    """
    if n_chains < 1:
        raise ParameterError("n_chains must be >= 1")
    if horizon <= 0:
        raise ParameterError("horizon must be positive")
    noise.check_potential(spec.potential)
    rec_times = np.array([horizon] if record_at is None else sorted(record_at), dtype=float)
    if len(rec_times) == 0 or rec_times[-1] > horizon or rec_times[0] < 0:
        raise ParameterError("record times must lie in [0, horizon]")
    plan, K = {}, 0
    for slot, r in enumerate(rec_times):
        k = steps.N_of(float(r))
        s = float(r - steps.Gamma(k))
        plan.setdefault(k, []).append((slot, s))
        K = max(K, k + (1 if s > 0 else 0))
    Gammas = steps.prefix(K)
    gammas = np.diff(Gammas)
    levels = _levels_for(mode, schedule, Gammas[:-1])
    starts = list(range(0, n_chains, chunk_size))
    work = lambda c0: _run_chunk(init, c0, first_chain + c0, min(chunk_size, n_chains - c0), spec, noise,
                                 seed, levels, gammas, Gammas, plan)
    if jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(c0) for c0 in starts]
    P = np.concatenate([p[0] for p in parts], axis=1)
    alive = np.concatenate([p[1] for p in parts])
    died = np.concatenate([p[2] for p in parts])
    ids = np.arange(first_chain, first_chain + n_chains)
    n_dead = int(np.sum(~alive))
    if n_dead and (n_chains - n_dead) < survival * n_chains:
        order = np.argsort(died[~alive], kind="stable")
        fails = list(zip(ids[~alive][order].tolist(), died[~alive][order].tolist()))
        raise EnsembleDivergedError(n_dead, n_chains, fails)
    meta = {"mode": mode, "schedule": repr(schedule), "steps": repr(steps), "noise": repr(noise),
            "seed": int(seed), "n_steps": int(K), "horizon": float(horizon),
            "potential": repr(spec.potential), "field": repr(spec.field),
            "correction": spec.correction}
    return Trajectory(rec_times, P, ids, ~alive, meta)


def fine_reference_solve(init, horizon, spec, a, h=1e-4, seed=0, n_chains=None, coarsen=1,
                         record_at=None, noise=NO_NOISE, first_chain=0, chunk_size=8192):
    """Constant-step EM oracle at frozen level ``a``.

    Brownian increments live on the grid of step ``h``; with ``coarsen=c`` the
    scheme steps by ``c h`` using sums of ``c`` consecutive increments, so
    solutions at different resolutions share one Brownian path. Returns a
    :class:`Trajectory` recorded at ``record_at`` (multiples of ``c h``;
    default the horizon).
    """
    if h > 1e-3:
        raise ParameterError("reference step must be <= 1e-3")
    if coarsen < 1:
        raise ParameterError("coarsen must be >= 1")
    d = spec.potential.dim
    if n_chains is None:
        n_chains = np.asarray(init).shape[0] if np.ndim(init) == 2 else 1
    H = coarsen * h
    n_steps = int(round(horizon / H))
    if abs(n_steps * H - horizon) > 1e-9 * max(1.0, horizon):
        raise ParameterError("horizon must be a multiple of the step")
    rec_times = [horizon] if record_at is None else sorted(record_at)
    rec_steps = {}
    for slot, r in enumerate(rec_times):
        j = int(round(r / H))
        if abs(j * H - r) > 1e-9 * max(1.0, r) or j > n_steps:
            raise ParameterError("record times must be grid multiples within the horizon")
        rec_steps.setdefault(j, []).append(slot)
    sq = math.sqrt(h)
    parts = []
    for c0 in range(0, n_chains, chunk_size):
        cnt = min(chunk_size, n_chains - c0)
        first = first_chain + c0
        X = _initial(init, c0, first, cnt, d)
        out = np.full((len(rec_times), cnt, d), np.nan)
        alive = np.ones(cnt, dtype=bool)
        for j in range(n_steps + 1):
            for slot in rec_steps.get(j, ()):
                out[slot] = np.where(alive[:, None], X, np.nan)
            if j == n_steps:
                break
            dW = np.zeros((cnt, d))
            for q in range(coarsen):
                dW += sq * streams.normals(seed, streams.BROWNIAN, j * coarsen + q + 1, first, cnt, d)
            Xn, _ = _advance(np.where(alive[:, None], X, 0.0), a, H, spec, noise, seed, j + 1, first, dW)
            bad = alive & _bad_rows(Xn)
            alive &= ~bad
            Xn[~alive] = np.nan
            X = Xn
        parts.append((out, alive))
    P = np.concatenate([p[0] for p in parts], axis=1)
    alive = np.concatenate([p[1] for p in parts])
    if np.sum(~alive) and np.sum(alive) < SURVIVAL_FRACTION * n_chains:
        raise EnsembleDivergedError(int(np.sum(~alive)), n_chains, [])
    ids = np.arange(first_chain, first_chain + n_chains)
    meta = {"mode": "reference", "a": float(a), "h": float(H), "seed": int(seed)}
    return Trajectory(np.asarray(rec_times, dtype=float), P, ids, ~alive, meta)


def run_until(init, n_chains, mode, spec, schedule, steps, stop, max_steps, noise=NO_NOISE,
              seed=0, trace_at=()):
    """Step an ensemble until ``stop(X)`` holds for the surviving chains.

    Returns ``(k, trace)``: ``k`` is the first step index at which ``stop``
    held (``None`` if ``max_steps`` was reached) and ``trace`` maps each step
    index in ``trace_at`` (reached before stopping) to ``X`` at that step.
    """
    d = spec.potential.dim
    X = _initial(init, 0, 0, n_chains, d)
    alive = np.ones(n_chains, dtype=bool)
    want = set(int(k) for k in trace_at)
    trace = {}
    t = 0.0
    for k in range(max_steps + 1):
        if k in want:
            trace[k] = X[alive].copy()
        if stop(X[alive]):
            return k, trace
        if k == max_steps:
            break
        g = float(steps.gamma(k + 1))
        a = float(_levels_for(mode, schedule, [t])[0])
        idx = np.flatnonzero(alive)
        dW = math.sqrt(g) * streams.normals(seed, streams.BROWNIAN, k + 1, 0, n_chains, d)
        Xa, _ = _advance(X[idx], a, g, spec, _SubsetNoise(noise, idx, n_chains), seed, k + 1, 0, dW[idx])
        X = np.full_like(X, np.nan)
        X[idx] = Xa
        bad = alive & _bad_rows(X)
        alive &= ~bad
        if np.sum(alive) < SURVIVAL_FRACTION * n_chains:
            raise EnsembleDivergedError(int(np.sum(~alive)), n_chains,
                                        [(int(c), k + 1) for c in np.flatnonzero(~alive)])
        t = float(steps.Gamma(k + 1))
    return None, trace

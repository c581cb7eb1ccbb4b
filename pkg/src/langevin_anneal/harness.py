"""Named experiments, their reports and the files they leave behind.

An experiment turns an :class:`ExperimentConfig` into an
:class:`ExperimentReport`: a list of long-format rows ``(metric, key,
value)`` plus pass/fail flags. Flags are computed by :func:`derive_flags`
from the rows and the frozen tolerance file only, so ``metrics.csv`` alone
is enough to audit (or re-derive) a verdict.

Output layout::

    <outdir>/<experiment>/<tag>/metrics.csv
                                config.echo
                                verdict.txt
                                *.svg
"""
import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import gibbs, metrics, streams
from .diffusion import ConstantField, DriftSpec, field_get
from .potentials import CATALOG, ParameterError, catalog_get, check_assumptions
from .schedules import AnnealSchedule, ConstantLevel, LogPowerSchedule, PlateauSchedule, StepSequence
from .simulate import NO_NOISE, NoiseModel, fine_reference_solve, run_ensemble, run_until

log = logging.getLogger(__name__)

# Values every experiment starts from; per-experiment tables override them.
COMMON = {
    "seed": 0,
    "potential.name": "quadratic1d",
    "field.name": "constant",
    "drift.correction": 0.5,
    "noise.kind": "none",
    "schedule.A": 1.0,
    "schedule.C_T": 10.0,
    "schedule.beta": 1.0,
    "steps.kind": "power",
    "steps.gamma1": 0.1,
    "steps.alpha": 0.6,
    "run.n_chains": 1000,
    "run.horizon": 1.0,
    "run.record_at": None,
    "run.chunk_size": 8192,
}

DEFAULTS = {
    "invariance": {
        "potential.name": "quadratic1d",
        "potential.c": 1.0,
        "field.name": "scalar_smooth",
        "schedule.a": 1.0,
        "steps.kind": "constant",
        "steps.gamma1": 1e-3,
        "run.n_chains": 100000,
        "run.horizon": 1.0,
        "run.record_at": [0.25, 0.5, 0.75, 1.0],
        "invariance.additive_c": 1.0,
        "invariance.literal_correction": 1.0,
        "invariance.reference_h": 1e-4,
        "invariance.reference_chains": 20000,
    },
    "hwang": {
        "potential.name": "double_well_1d",
        "potential.h1": 2.0,
        "potential.h2": 8.0,
        "hwang.ladder": [0.4, 0.3, 0.2, 0.15, 0.1, 0.07, 0.05],
        "hwang.degenerate": "quartic_degenerate_1d",
    },
    "contraction": {
        "potential.name": "quadratic1d",
        "potential.c": 1.0,
        "field.name": "constant",
        "field.c": 1.0,
        "schedule.a": 1.0,
        "steps.kind": "constant",
        "steps.gamma1": 1e-3,
        "run.n_chains": 1000,
        "run.horizon": 3.0,
        "contraction.n_records": 30,
        "contraction.x": 2.0,
        "contraction.y": -1.0,
        "contraction.box": 10.0,
        "contraction.dw_potential": "double_well_1d",
        "contraction.dw_a": 2.0,
        "contraction.dw_horizon": 20.0,
        "contraction.dw_x": -1.0,
        "contraction.dw_y": 1.0,
    },
    "anneal": {
        "potential.name": "global_local_1d",
        "field.name": "constant",
        "field.c": 1.0,
        "schedule.A": None,
        "schedule.C_T": 0.05,
        "schedule.beta": 1.0,
        "steps.kind": "power",
        "steps.gamma1": 0.04,
        "steps.alpha": 0.51,
        "run.n_chains": 1000,
        "anneal.A_factor": 1.5,
        "anneal.n_plateaus": 20,
        "anneal.x0": None,
        "anneal.radius": 0.2,
        "anneal.negative_eps": 1.0,
        "anneal.sensitivity": [0.5, 1.0, 2.0],
    },
    "compare_sigma": {
        "potential.name": "ill_quadratic2d",
        "field.name": "diag_rmsprop",
        "field.lam": 0.1,
        "field.sigma0": 0.05,
        "field.sigma_max": 1.05,
        "schedule.A": 0.05,
        "steps.kind": "power",
        "steps.gamma1": 0.015,
        "steps.alpha": 0.51,
        "run.n_chains": 200,
        "compare_sigma.kappas": [100.0, 1.0],
        "compare_sigma.baseline_c": 1.0,
        "compare_sigma.x0": [1.0, 1.0],
        "compare_sigma.threshold": 0.05,
        "compare_sigma.max_steps": 200000,
        "compare_sigma.n_trace": 40,
    },
    "gibbs_chain": {
        "potential.name": "double_well_1d",
        "potential.h1": 2.0,
        "potential.h2": 8.0,
        "schedule.A": 1.0,
        "schedule.C_T": 10.0,
        "schedule.beta": 1.0,
        "gibbs_chain.n_min": 10,
        "gibbs_chain.n_max": 1000,
        "gibbs_chain.mc_levels": [10, 30, 100],
        "gibbs_chain.mc_samples": 200000,
    },
}

EXPERIMENTS = tuple(DEFAULTS)
_SECTIONS = ("potential.", "field.", "drift.", "noise.", "schedule.", "steps.", "run.", "output.")
_TOP = ("experiment", "seed")


# configuration

@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment (defaults merged in)."""
    experiment: str
    values: dict
    outdir: str = "results"
    tag: str = None

    @classmethod
    def from_flat(cls, flat, outdir=None, tag=None, seed=None):
        flat = dict(flat)
        name = flat.get("experiment")
        if name not in DEFAULTS:
            raise cfgmod.ConfigError(f"unknown experiment {name!r}; choose from {list(EXPERIMENTS)}")
        values = dict(COMMON)
        values.update(DEFAULTS[name])
        for key, v in flat.items():
            if key in _TOP:
                values[key] = v
                continue
            if key.startswith(name + "."):
                if key not in DEFAULTS[name]:
                    raise cfgmod.ConfigError(f"unknown option {key!r} for {name}")
            elif not key.startswith(_SECTIONS):
                raise cfgmod.ConfigError(f"unknown key {key!r}")
            values[key] = v
        if seed is not None:
            values["seed"] = int(seed)
        out = outdir or values.pop("output.dir", None) or "results"
        values.pop("output.dir", None)
        tag = tag or values.pop("output.tag", None)
        values.pop("output.tag", None)
        cfg = cls(name, values, str(out), tag)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, **overrides):
        return cls.from_flat(cfgmod.load(path), **overrides)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self):
        return int(self.values["seed"])

    def opt(self, name):
        return self.values[f"{self.experiment}.{name}"]

    def params(self, prefix):
        return {k: v for k, v in cfgmod.section(self.values, prefix).items() if k != "name"}

    def potential(self, **override):
        kw = self.params("potential")
        kw.update(override)
        return catalog_get(self.values["potential.name"], kw)

    def field(self, potential, name=None, **params):
        if name is None:
            name, params = self.values["field.name"], {**self.params("field"), **params}
        return field_get(name, params, potential=potential)

    def steps(self):
        return StepSequence(self.values["steps.kind"], float(self.values["steps.gamma1"]),
                            float(self.values["steps.alpha"]))

    def noise(self):
        return NoiseModel.parse(self.values["noise.kind"], self.params("noise"))

    def record_times(self):
        r = self.values["run.record_at"]
        if r is None:
            return [float(self["run.horizon"])]
        return sorted(float(x) for x in (r if isinstance(r, list) else [r]))

    def validate(self):
        """Resolve every catalog name and check the run shape; raises
        :class:`ParameterError` or :class:`config.ConfigError`."""
        v = self.values
        try:
            p = self.potential()
            self.field(p)
            self.steps()
            self.noise().check_potential(p)
        except TypeError as exc:
            raise cfgmod.ConfigError(str(exc)) from None
        for key in ("hwang.degenerate", "contraction.dw_potential"):
            if key in v and v[key] not in CATALOG:
                raise ParameterError(f"{key}: unknown potential {v[key]!r}")
        if int(v["run.n_chains"]) < 1:
            raise ParameterError("run.n_chains must be >= 1")
        if float(v["run.horizon"]) <= 0:
            raise ParameterError("run.horizon must be positive")
        rec = self.record_times()
        if rec[-1] > float(v["run.horizon"]) or rec[0] < 0:
            raise ParameterError("run.horizon must be >= every record time")
        if self.experiment == "hwang" and len(self.opt("ladder")) < 4:
            raise ParameterError("hwang.ladder needs at least 4 levels")

    def flat(self):
        out = {"experiment": self.experiment}
        out.update(self.values)
        return out

    def echo(self):
        return cfgmod.dumps(self.flat())


# report rows

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def row_key(**key):
    return ";".join(f"{k}={_fmt(key[k])}" for k in sorted(key))


def _same(stored, wanted):
    if stored is None:
        return False
    if stored == wanted:
        return True
    try:
        return float(stored) == float(wanted)
    except ValueError:
        return False


def parse_key(text):
    if not text:
        return {}
    return dict(part.split("=", 1) for part in text.split(";"))


class Table:
    """Read access to long-format rows ``(metric, key, value)``."""

    def __init__(self, rows):
        self.rows = [(m, k, float(v)) for m, k, v in rows]
        self._parsed = [(m, parse_key(k), v) for m, k, v in self.rows]

    def select(self, metric, **fixed):
        want = {k: _fmt(v) for k, v in fixed.items()}
        return [(key, v) for m, key, v in self._parsed
                if m == metric and all(_same(key.get(k), s) for k, s in want.items())]

    def value(self, metric, **fixed):
        hits = self.select(metric, **fixed)
        if len(hits) != 1:
            raise KeyError(f"{metric} {fixed}: {len(hits)} rows")
        return hits[0][1]

    def series(self, metric, along, **fixed):
        hits = [(float(key[along]), v) for key, v in self.select(metric, **fixed) if along in key]
        hits.sort()
        return np.array([h[0] for h in hits]), np.array([h[1] for h in hits])

    def labels(self, metric, name, **fixed):
        seen = []
        for key, _ in self.select(metric, **fixed):
            if name in key and key[name] not in seen:
                seen.append(key[name])
        return seen


@dataclass
class ExperimentReport:
    experiment: str
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)
    runtime: float = 0.0

    def add(self, metric, value, **key):
        self.rows.append((metric, row_key(**key), float(value)))

    @property
    def table(self):
        return Table(self.rows)

    @property
    def passed(self):
        return all(ok for ok, _ in self.flags.values())

    def failures(self):
        return [name for name, (ok, _) in self.flags.items() if not ok]

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "key", "value"])
        for m, k, v in self.rows:
            w.writerow([m, k, repr(v)])
        return buf.getvalue()


def read_rows(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["metric", "key", "value"]:
            raise ValueError(f"{path}: not a metrics table")
        return [(m, k, float(v)) for m, k, v in r]


# tolerances and flags

def load_tolerances(path=None):
    if path is None:
        text = resources.files(__package__).joinpath("data/tolerances.cfg").read_text()
        return cfgmod.parse_text(text, "tolerances.cfg")
    return cfgmod.load(path)


def _ratio(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.any(~np.isfinite(v)) or np.any(v <= 0):
        return float("inf")
    return float(v.max() / v.min())


def _flags_invariance(tab, tol):
    T = max(tab.series("w1_exact", "t", arm="additive")[0])
    add = tab.value("w1_exact", arm="additive", t=T)
    cor = tab.value("w1_reference", arm="corrected")
    abl = tab.value("w1_reference", arm="ablation")
    ratio = abl / cor if cor > 0 else float("inf")
    return {
        "additive_w1": (add <= tol["invariance.additive_w1_max"], f"W1={add:.4g}"),
        "multiplicative_w1": (cor <= tol["invariance.multiplicative_w1_max"], f"W1={cor:.4g}"),
        "ablation_ratio": (ratio >= tol["invariance.ablation_ratio_min"], f"ratio={ratio:.3g}"),
        "corrected_not_worse": (cor <= abl, f"corrected={cor:.4g} ablation={abl:.4g}"),
    }


def _flags_hwang(tab, tol):
    out = {}
    a_min = min(tab.series("w1_nu_star", "a", potential="definite")[0])
    for basin in tab.labels("nu_star_weight", "basin"):
        m = tab.value("basin_mass", a=a_min, basin=basin)
        w = tab.value("nu_star_weight", basin=basin)
        out[f"mass_basin_{basin}"] = (abs(m - w) <= tol["hwang.mass_tol"], f"mass={m:.4f} weight={w:.4f}")
    for kind, band in (("definite", "hwang.slope_definite"), ("degenerate", "hwang.slope_degenerate")):
        a, w = tab.series("w1_nu_star", "a", potential=kind)
        s = metrics.rate_fit(a, w).slope
        lo, hi = tol[band]
        out[f"slope_{kind}"] = (lo <= s <= hi, f"slope={s:.4f}")
    return out


def _flags_contraction(tab, tol):
    t, d = tab.series("mean_distance", "t", pair="quadratic")
    keep = t > 0
    rate, _ = metrics.decay_rate_fit(t[keep], d[keep])
    target = tab.value("analytic_rate")
    alpha0 = tab.value("alpha0")
    _, dw = tab.series("mean_distance", "t", pair="double_well")
    _, same = tab.series("max_distance", "t", pair="identical")
    rel = abs(rate - target) / target
    return {
        "rate_vs_analytic": (rel <= tol["contraction.rate_rel_tol"], f"rate={rate:.4f} target={target:.4f}"),
        "rate_vs_alpha0": (rate >= tol["contraction.alpha0_fraction"] * alpha0,
                           f"rate={rate:.4f} alpha0={alpha0:.4f}"),
        "double_well_contracts": (dw[-1] < dw[0], f"initial={dw[0]:.4g} final={dw[-1]:.4g}"),
        "identical_stays_zero": (bool(np.all(same == 0.0)), f"max={same.max():.3g}"),
    }


def _flags_anneal(tab, tol):
    n, frac = tab.series("fraction_within_r", "n", mode="plateau", scale=1.0)
    final = frac[-1]
    win = int(tol["anneal.trend_window"])
    ns, w1 = tab.series("w1_nu_an", "n", mode="plateau", scale=1.0)
    ns, w1 = ns[-win:], w1[-win:]
    slope = np.polyfit(ns, np.log(w1), 1)[0] if np.all(w1 > 0) else float("nan")
    main = tab.value("global_basin_mass", mode="plateau", scale=1.0, n=n[-1])
    neg = tab.value("global_basin_mass", mode="negative", scale=1.0, n=n[-1])
    return {
        "concentration": (final >= tol["anneal.concentration_min"], f"fraction={final:.3f}"),
        "w1_trend": (bool(slope < 0 and w1[-1] < w1[0]),
                     f"log-slope={slope:.4g} first={w1[0]:.4g} last={w1[-1]:.4g}"),
        "negative_control": (neg < tol["anneal.negative_ratio_max"] * main,
                             f"negative={neg:.3f} main={main:.3f}"),
    }


def _flags_compare_sigma(tab, tol):
    out = {}
    for kappa in tab.labels("steps_to_threshold", "kappa"):
        base = tab.value("steps_to_threshold", kappa=kappa, field="constant")
        adap = tab.value("steps_to_threshold", kappa=kappa, field="adaptive")
        r = adap / base if base > 0 else float("nan")
        if float(kappa) > 1:
            out[f"faster_kappa_{kappa}"] = (r < tol["compare_sigma.ratio_max_ill"], f"ratio={r:.4g}")
        else:
            out[f"neutral_kappa_{kappa}"] = (abs(r - 1) <= tol["compare_sigma.ratio_band_well"],
                                             f"ratio={r:.4g}")
    return out


def _flags_gibbs_chain(tab, tol):
    n, w = tab.series("w1_successive", "n")
    norm = n * np.log(n) ** 1.5 * w
    _, bound = tab.series("coupling_bound", "n")
    _, da = tab.series("level_difference", "n")
    band = n * np.log(n) ** 1.5 * da
    out = {
        "normalized_bounded": (_ratio(norm) < tol["gibbs_chain.normalized_ratio_max"],
                               f"max/min={_ratio(norm):.4g}"),
        "coupling_dominates": (bool(np.all(bound >= w)),
                               f"min(bound - W1)={np.min(bound - w):.3g}"),
        "level_difference_band": (_ratio(band) < tol["gibbs_chain.adiff_ratio_max"],
                                  f"max/min={_ratio(band):.4g}"),
    }
    z = tol["gibbs_chain.mc_z"]
    for key, mean in tab.select("mc_coupling_cost"):
        nn = key["n"]
        se = tab.value("mc_coupling_se", n=nn)
        exact = tab.value("coupling_bound", n=nn)
        out[f"mc_coupling_n{nn}"] = (abs(mean - exact) <= z * se + 1e-12,
                                     f"mc={mean:.4g}+-{se:.2g} exact={exact:.4g}")
    return out


FLAG_RULES = {
    "invariance": _flags_invariance,
    "hwang": _flags_hwang,
    "contraction": _flags_contraction,
    "anneal": _flags_anneal,
    "compare_sigma": _flags_compare_sigma,
    "gibbs_chain": _flags_gibbs_chain,
}


def derive_flags(experiment, rows, tolerances=None):
    """Pass/fail flags from report rows alone: ``name -> (ok, detail)``."""
    tol = load_tolerances() if tolerances is None else tolerances
    try:
        flags = FLAG_RULES[experiment](Table(rows), tol)
    except (KeyError, ValueError, IndexError) as exc:
        return {"table_complete": (False, f"cannot derive flags: {exc}")}
    return {name: (bool(ok), detail) for name, (ok, detail) in flags.items()}


# experiments

def _pool(jobs):
    return max(1, int(jobs or 1))


def exp_invariance(cfg, jobs=1):
    rep = ExperimentReport("invariance", cfg)
    p = cfg.potential()
    a = float(cfg.get("schedule.a"))
    steps = cfg.steps()
    n = int(cfg["run.n_chains"])
    T = float(cfg["run.horizon"])
    rec = cfg.record_times()
    seed = cfg.seed
    g = gibbs.normalize(p, a)
    init = gibbs.sampler(g, streams.derive_seed(seed, 1))
    mult = cfg.field(p)
    arms = {
        "additive": DriftSpec(p, ConstantField(float(cfg.opt("additive_c")), p.dim)),
        "corrected": DriftSpec(p, mult, float(cfg["drift.correction"])),
        "ablation": DriftSpec(p, mult, 0.0),
        "literal": DriftSpec(p, mult, float(cfg.opt("literal_correction"))),
    }
    if p.dim != 1:
        raise ParameterError("invariance experiment compares exact CDFs; use a 1D potential")
    X0 = init(0, n)
    w0 = metrics.w1_samples_vs_cdf(X0[:, 0], g.cdf, g.x)
    finals = {}
    for arm, spec in arms.items():
        tr = run_ensemble(X0, n, T, "constant", spec, ConstantLevel(a), steps, noise=cfg.noise(),
                          record_at=rec, seed=streams.derive_seed(seed, 2), jobs=_pool(jobs),
                          chunk_size=int(cfg["run.chunk_size"]))
        rep.add("w1_exact", w0, arm=arm, t=0.0)
        for i, t in enumerate(tr.times):
            rep.add("w1_exact", metrics.w1_samples_vs_cdf(tr.at(i)[:, 0], g.cdf, g.x), arm=arm, t=t)
        rep.add("survival", tr.survival(), arm=arm)
        finals[arm] = tr.final()[:, 0]
        log.info("invariance %s: W1(T)=%.4g", arm, rep.rows[-2][2])
    m = int(cfg.opt("reference_chains"))
    ref = fine_reference_solve(gibbs.sampler(g, streams.derive_seed(seed, 3)), T, arms["corrected"], a,
                               h=float(cfg.opt("reference_h")), seed=streams.derive_seed(seed, 4),
                               n_chains=m, chunk_size=int(cfg["run.chunk_size"]))
    Y = ref.final()[:, 0]
    rep.add("reference_w1_exact", metrics.w1_samples_vs_cdf(Y, g.cdf, g.x))
    rep.add("reference_chains", len(Y))
    for arm, X in finals.items():
        rep.add("w1_reference", metrics.w1_1d_sorted(X, Y), arm=arm)
    return rep


def exp_hwang(cfg, jobs=1):
    rep = ExperimentReport("hwang", cfg)
    ladder = sorted((float(a) for a in cfg.opt("ladder")), reverse=True)
    definite = cfg.potential()
    star = gibbs.nu_star(definite)
    for i, w in enumerate(star.weights):
        rep.add("nu_star_weight", w, basin=i)
        rep.add("minimum_location", float(star.points[i, 0]), basin=i)
    degenerate = catalog_get(cfg.opt("degenerate"))
    for kind, p in (("definite", definite), ("degenerate", degenerate)):
        for a in ladder:
            g = gibbs.normalize(p, a)
            rep.add("w1_nu_star", gibbs.w1_to_nu_star(g), potential=kind, a=a)
            if kind == "definite":
                for i, m in enumerate(g.basin_masses()):
                    rep.add("basin_mass", m, a=a, basin=i)
    for kind in ("definite", "degenerate"):
        a, w = Table(rep.rows).series("w1_nu_star", "a", potential=kind)
        rep.add("fitted_slope", metrics.rate_fit(a, w).slope, potential=kind)
    return rep


def _pair_distances(p, fld, a, steps, x, y, n, horizon, rec, seed, jobs, chunk):
    spec = DriftSpec(p, fld)
    args = dict(record_at=[0.0] + list(rec), seed=seed, jobs=jobs, chunk_size=chunk)
    tx = run_ensemble(np.full(p.dim, x), n, horizon, "constant", spec, ConstantLevel(a), steps, **args)
    ty = run_ensemble(np.full(p.dim, y), n, horizon, "constant", spec, ConstantLevel(a), steps, **args)
    alive = ~(tx.diverged | ty.diverged)
    D = np.linalg.norm(tx.positions[:, alive] - ty.positions[:, alive], axis=2)
    return tx.times, D


def exp_contraction(cfg, jobs=1):
    rep = ExperimentReport("contraction", cfg)
    p = cfg.potential()
    fld = cfg.field(p)
    a = float(cfg.get("schedule.a"))
    steps = cfg.steps()
    n = int(cfg["run.n_chains"])
    T = float(cfg["run.horizon"])
    k = int(cfg.opt("n_records"))
    rec = list(np.linspace(T / k, T, k)) if cfg["run.record_at"] is None else cfg.record_times()
    seed = streams.derive_seed(cfg.seed, 1)
    chunk = int(cfg["run.chunk_size"])
    box = float(cfg.opt("box"))
    rpt = check_assumptions(p, (-box, box), a, field=fld)
    if rpt.alpha0 is None:
        raise ParameterError("no convexity witnessed on the probe grid; contraction rate undefined")
    rep.add("alpha0", rpt.alpha0)
    rep.add("R0", rpt.R0)
    hess = np.atleast_2d(p.minima[0].hessian)
    # drift -sigma^2 grad V is linear for a constant field: rate c^2 * lambda_min(Hess V)
    if getattr(fld, "constant", False):
        rep.add("analytic_rate", fld.c**2 * float(np.linalg.eigvalsh(hess)[0]))
    runs = [("quadratic", p, fld, a, float(cfg.opt("x")), float(cfg.opt("y")), T, rec),
            ("identical", p, fld, a, float(cfg.opt("x")), float(cfg.opt("x")), T, rec)]
    dwp = catalog_get(cfg.opt("dw_potential"))
    dT = float(cfg.opt("dw_horizon"))
    runs.append(("double_well", dwp, ConstantField(1.0, dwp.dim), float(cfg.opt("dw_a")),
                 float(cfg.opt("dw_x")), float(cfg.opt("dw_y")), dT, list(np.linspace(dT / k, dT, k))))
    for name, pp, ff, aa, x, y, hor, rr in runs:
        times, D = _pair_distances(pp, ff, aa, steps, x, y, n, hor, rr, seed, _pool(jobs), chunk)
        for t, d in zip(times, D):
            rep.add("mean_distance", float(d.mean()), pair=name, t=t)
            rep.add("max_distance", float(d.max()), pair=name, t=t)
    t, d = Table(rep.rows).series("mean_distance", "t", pair="quadratic")
    rep.add("fitted_rate", metrics.decay_rate_fit(t[t > 0], d[t > 0])[0])
    return rep


def _anneal_amplitude(cfg, p):
    A = cfg.get("schedule.A")
    if A is not None:
        return float(A)
    if not hasattr(p, "barrier"):
        raise ParameterError("schedule.A must be given for potentials without a barrier height")
    return float(cfg.opt("A_factor")) * math.sqrt(p.barrier())


def _nearest_is_global(p, X):
    glob = np.array([np.atleast_1d(m.location) for m in p.minima])
    loc = np.array([np.atleast_1d(m.location) for m in p.local_minima])
    dg = np.min(np.linalg.norm(X[:, None, :] - glob[None], axis=2), axis=1)
    if len(loc) == 0:
        return np.ones(len(X), dtype=bool)
    dl = np.min(np.linalg.norm(X[:, None, :] - loc[None], axis=2), axis=1)
    return dg <= dl


def exp_anneal(cfg, jobs=1):
    rep = ExperimentReport("anneal", cfg)
    p = cfg.potential()
    if p.dim != 1 or len(p.minima) != 1:
        raise ParameterError("anneal experiment needs a 1D potential with one global minimum")
    spec = DriftSpec(p, cfg.field(p), float(cfg["drift.correction"]))
    steps = cfg.steps()
    A = _anneal_amplitude(cfg, p)
    N = int(cfg.opt("n_plateaus"))
    C_T, beta = float(cfg["schedule.C_T"]), float(cfg["schedule.beta"])
    x0 = cfg.opt("x0")
    if x0 is None:
        if not p.local_minima:
            raise ParameterError("anneal.x0 must be given for potentials without a local minimum")
        x0 = float(np.atleast_1d(p.local_minima[0].location)[0])
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x_star = float(np.atleast_1d(p.minima[0].location)[0])
    r = float(cfg.opt("radius"))
    n = int(cfg["run.n_chains"])
    seed = streams.derive_seed(cfg.seed, 1)
    rep.add("A", A)
    rep.add("x0", float(x0[0]))
    rep.add("global_minimizer", x_star)
    runs = []
    for s in cfg.opt("sensitivity") if isinstance(cfg.opt("sensitivity"), list) else [cfg.opt("sensitivity")]:
        runs.append(("plateau", float(s), PlateauSchedule(C_T, beta, float(s) * A)))
    runs.append(("continuous", 1.0, AnnealSchedule(A)))
    runs.append(("negative", 1.0, LogPowerSchedule(A, float(cfg.opt("negative_eps")))))
    if not any(m == "plateau" and s == 1.0 for m, s, _ in runs):
        runs.insert(0, ("plateau", 1.0, PlateauSchedule(C_T, beta, A)))
    plateau = PlateauSchedule(C_T, beta, A)
    Tn = [float(plateau.T(k)) for k in range(1, N + 1)]
    cache = {}
    for mode, scale, sched in runs:
        sim_mode = "plateau" if mode == "plateau" else "continuous"
        tr = run_ensemble(x0, n, Tn[-1], sim_mode, spec, sched, steps, noise=cfg.noise(), record_at=Tn,
                          seed=seed, jobs=_pool(jobs), chunk_size=int(cfg["run.chunk_size"]))
        for k, t in enumerate(Tn, start=1):
            X = tr.at(k - 1)
            level = float(sched.a_n(k)) if mode == "plateau" else float(sched.a_of(t))
            key = round(level, 15)
            if key not in cache:
                cache[key] = gibbs.normalize(p, level)
            g = cache[key]
            tag = dict(mode=mode, scale=scale, n=k)
            rep.add("level", level, **tag)
            rep.add("fraction_within_r", float(np.mean(np.abs(X[:, 0] - x_star) <= r)), **tag)
            rep.add("global_basin_mass", float(np.mean(_nearest_is_global(p, X))), **tag)
            rep.add("w1_nu_an", metrics.w1_samples_vs_cdf(X[:, 0], g.cdf, g.x), **tag)
            rep.add("w1_nu_star", float(np.mean(np.abs(X[:, 0] - x_star))), **tag)
        rep.add("survival", tr.survival(), mode=mode, scale=scale)
        log.info("anneal %s x%g: within r at T_N = %.3f", mode, scale,
                 rep.table.value("fraction_within_r", mode=mode, scale=scale, n=N))
    return rep


def exp_compare_sigma(cfg, jobs=1):
    rep = ExperimentReport("compare_sigma", cfg)
    steps_kw = dict(seed=streams.derive_seed(cfg.seed, 1))
    thr = float(cfg.opt("threshold"))
    kmax = int(cfg.opt("max_steps"))
    n = int(cfg["run.n_chains"])
    trace_at = np.unique(np.geomspace(1, kmax, int(cfg.opt("n_trace"))).astype(int))
    trace_at = np.concatenate([[0], trace_at])
    sched = AnnealSchedule(float(cfg["schedule.A"]))
    for kappa in cfg.opt("kappas"):
        p = cfg.potential(kappa=float(kappa))
        x0 = np.asarray(cfg.opt("x0"), dtype=float)
        fields = {"constant": ConstantField(float(cfg.opt("baseline_c")), p.dim), "adaptive": cfg.field(p)}
        for name, fld in fields.items():
            spec = DriftSpec(p, fld, float(cfg["drift.correction"]))
            gap = lambda X, p=p: float(np.mean(p.value(X)) - p.v_star)
            k, trace = run_until(x0, n, "continuous", spec, sched, cfg.steps(), lambda X: gap(X) < thr,
                                 kmax, noise=cfg.noise(), trace_at=trace_at, **steps_kw)
            rep.add("steps_to_threshold", float("nan") if k is None else k, kappa=float(kappa), field=name)
            for step in sorted(trace):
                rep.add("mean_gap", gap(trace[step]), kappa=float(kappa), field=name, step=int(step))
            log.info("compare_sigma kappa=%g %s: %s steps", kappa, name, k)
    return rep


def exp_gibbs_chain(cfg, jobs=1):
    rep = ExperimentReport("gibbs_chain", cfg)
    p = cfg.potential()
    if p.dim != 1:
        raise ParameterError("gibbs_chain uses exact 1D transport; use a 1D potential")
    sched = PlateauSchedule(float(cfg["schedule.C_T"]), float(cfg["schedule.beta"]), float(cfg["schedule.A"]))
    lo, hi = int(cfg.opt("n_min")), int(cfg.opt("n_max"))
    if not 2 <= lo < hi:
        raise ParameterError("need 2 <= gibbs_chain.n_min < gibbs_chain.n_max")
    mc = {int(v) for v in (cfg.opt("mc_levels") if isinstance(cfg.opt("mc_levels"), list)
                           else [cfg.opt("mc_levels")])}
    n_mc = int(cfg.opt("mc_samples"))
    seed = streams.derive_seed(cfg.seed, 1)
    prev = gibbs.normalize(p, float(sched.a_n(lo)))
    for n in range(lo, hi + 1):
        nxt = gibbs.normalize(p, float(sched.a_n(n + 1)))
        grid = gibbs.shared_grid(prev, nxt)
        M = gibbs.analytic_ratio_bound(nxt, prev)
        rep.add("level", prev.a, n=n)
        rep.add("level_difference", prev.a - nxt.a, n=n)
        rep.add("w1_successive", gibbs.w1_exact_1d(prev, nxt, grid), n=n)
        rep.add("ratio_bound", M, n=n)
        rep.add("coupling_bound", gibbs.coupling_bound_exact(nxt, prev, M, grid), n=n)
        if n in mc:
            Xp, Y, acc = gibbs.coupled_pair(nxt, prev, M=M, n=n_mc, seed=seed, first=n * n_mc)
            cost = np.abs(Xp[:, 0] - Y[:, 0])
            rep.add("mc_coupling_cost", float(cost.mean()), n=n)
            rep.add("mc_coupling_se", float(cost.std(ddof=1) / math.sqrt(n_mc)), n=n)
            rep.add("mc_acceptance", acc, n=n)
            rep.add("mc_marginal_w1_mu", metrics.w1_samples_vs_cdf(Xp[:, 0], nxt.cdf, nxt.x), n=n)
            rep.add("mc_marginal_w1_nu", metrics.w1_samples_vs_cdf(Y[:, 0], prev.cdf, prev.x), n=n)
        prev = nxt
    return rep


RUNNERS = {
    "invariance": exp_invariance,
    "hwang": exp_hwang,
    "contraction": exp_contraction,
    "anneal": exp_anneal,
    "compare_sigma": exp_compare_sigma,
    "gibbs_chain": exp_gibbs_chain,
}


def run_experiment(cfg, jobs=1, tolerances=None):
    """Run ``cfg`` and attach flags derived from its own rows."""
    t0 = time.perf_counter()
    rep = RUNNERS[cfg.experiment](cfg, jobs=jobs)
    rep.runtime = time.perf_counter() - t0
    rep.flags = derive_flags(cfg.experiment, rep.rows, tolerances)
    return rep


# output

def _fresh_dir(base):
    if not base.exists():
        return base
    i = 1
    while (base.parent / f"{base.name}-{i}").exists():
        i += 1
    return base.parent / f"{base.name}-{i}"


def verdict_text(experiment, flags, runtime=None):
    lines = [f"experiment = {experiment}"]
    for name, (ok, detail) in flags.items():
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = [n for n, (ok, _) in flags.items() if not ok]
    lines.append(f"verdict = {'PASS' if not failed else 'FAIL'}")
    lines.append(f"failures = {','.join(failed)}")
    if runtime is not None:
        lines.append(f"runtime_seconds = {runtime:.3f}")
    return "\n".join(lines) + "\n"


def emit_report(report, outdir=None, tag=None):
    """Write ``metrics.csv``, ``config.echo``, ``verdict.txt`` and plots into
    a fresh ``<outdir>/<experiment>/<tag>`` directory; returns its path."""
    cfg = report.config
    root = Path(outdir or cfg.outdir)
    tag = tag or cfg.tag or datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    target = _fresh_dir(root / report.experiment / str(tag))
    target.mkdir(parents=True)
    (target / "metrics.csv").write_text(report.csv_text())
    (target / "config.echo").write_text(cfg.echo())
    (target / "verdict.txt").write_text(verdict_text(report.experiment, report.flags, report.runtime))
    write_plots(report.experiment, Table(report.rows), target)
    return target


# plots

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "langevin-anneal"
    return plt


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    fig.clf()


def _plot_invariance(tab, out, plt):
    fig, ax = plt.subplots(figsize=(6, 4))
    for arm in tab.labels("w1_exact", "arm"):
        t, w = tab.series("w1_exact", "t", arm=arm)
        ax.plot(t, w, marker="o", label=arm)
    ax.set_xlabel("t")
    ax.set_ylabel("W1(empirical, Gibbs)")
    ax.set_yscale("log")
    ax.set_title("invariance: W1 to the stationary law over time")
    ax.legend()
    _save(fig, out / "invariance_w1.svg")
    return ["invariance_w1.svg"]


def _plot_hwang(tab, out, plt):
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind in ("definite", "degenerate"):
        a, w = tab.series("w1_nu_star", "a", potential=kind)
        fit = metrics.rate_fit(a, w)
        ax.loglog(a, w, "o", label=f"{kind}: slope {fit.slope:.3f}")
        ax.loglog(a, fit.predict(a), "-", color=ax.lines[-1].get_color(), alpha=0.6)
    ax.set_xlabel("a")
    ax.set_ylabel("W1(nu_a, nu*)")
    ax.set_title("hwang: W1 to the limit measure")
    ax.legend()
    _save(fig, out / "hwang_rate.svg")
    return ["hwang_rate.svg"]


def _plot_contraction(tab, out, plt):
    fig, ax = plt.subplots(figsize=(6, 4))
    t, d = tab.series("mean_distance", "t", pair="quadratic")
    rate = metrics.decay_rate_fit(t[t > 0], d[t > 0])[0]
    ax.semilogy(t, d, "o-", label=f"quadratic (fitted rate {rate:.3f})")
    t2, d2 = tab.series("mean_distance", "t", pair="double_well")
    ax.semilogy(t2, d2, "s-", label="double well")
    ax.set_xlabel("t")
    ax.set_ylabel("mean |X_t - Y_t|")
    ax.set_title(f"contraction: fitted slope {-rate:.3f}")
    ax.legend()
    _save(fig, out / "contraction_distance.svg")
    return ["contraction_distance.svg"]


def _plot_anneal(tab, out, plt):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for key, _ in tab.select("survival"):
        mode, scale = key["mode"], float(key["scale"])
        n, f = tab.series("fraction_within_r", "n", mode=mode, scale=scale)
        _, w = tab.series("w1_nu_an", "n", mode=mode, scale=scale)
        label = f"{mode} x{scale:g}"
        ax1.plot(n, f, marker=".", label=label)
        ax2.semilogy(n, w, marker=".", label=label)
    ns, w = tab.series("w1_nu_an", "n", mode="plateau", scale=1.0)
    slope = np.polyfit(ns[-10:], np.log(w[-10:]), 1)[0]
    ax1.set_xlabel("plateau n")
    ax1.set_ylabel("fraction within r of argmin")
    ax1.set_title("anneal: concentration")
    ax1.legend(fontsize=8)
    ax2.set_xlabel("plateau n")
    ax2.set_ylabel("W1(empirical, nu_{a_n})")
    ax2.set_title(f"anneal: fitted log-slope {slope:.3f}")
    _save(fig, out / "anneal_concentration.svg")
    return ["anneal_concentration.svg"]


def _plot_compare_sigma(tab, out, plt):
    fig, ax = plt.subplots(figsize=(6, 4))
    for kappa in tab.labels("mean_gap", "kappa"):
        for name in ("constant", "adaptive"):
            s, gap = tab.series("mean_gap", "step", kappa=kappa, field=name)
            ax.loglog(np.maximum(s, 1), gap, marker=".", label=f"kappa={float(kappa):g} {name}")
    ratios = []
    for kappa in tab.labels("steps_to_threshold", "kappa"):
        b = tab.value("steps_to_threshold", kappa=kappa, field="constant")
        r = tab.value("steps_to_threshold", kappa=kappa, field="adaptive") / b
        ratios.append(f"{float(kappa):g}: {r:.3f}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean V - V*")
    ax.set_title("compare_sigma: step ratios " + ", ".join(ratios))
    ax.legend(fontsize=8)
    _save(fig, out / "compare_sigma_gap.svg")
    return ["compare_sigma_gap.svg"]


def _plot_gibbs_chain(tab, out, plt):
    fig, ax = plt.subplots(figsize=(6, 4))
    n, w = tab.series("w1_successive", "n")
    _, b = tab.series("coupling_bound", "n")
    fit = metrics.rate_fit(n, w)
    ax.loglog(n, w, label=f"exact W1 (slope {fit.slope:.3f})")
    ax.loglog(n, b, "--", label="coupling bound")
    ax.loglog(n, n * np.log(n) ** 1.5 * w, label="n log^1.5(n) W1")
    ax.set_xlabel("n")
    ax.set_ylabel("W1(nu_{a_n}, nu_{a_{n+1}})")
    ax.set_title("gibbs_chain: successive Gibbs measures")
    ax.legend()
    _save(fig, out / "gibbs_chain_w1.svg")
    return ["gibbs_chain_w1.svg"]


PLOTTERS = {
    "invariance": _plot_invariance,
    "hwang": _plot_hwang,
    "contraction": _plot_contraction,
    "anneal": _plot_anneal,
    "compare_sigma": _plot_compare_sigma,
    "gibbs_chain": _plot_gibbs_chain,
}


def write_plots(experiment, table, outdir):
    plt = _pyplot()
    try:
        return PLOTTERS[experiment](table, Path(outdir), plt)
    except (KeyError, ValueError, IndexError) as exc:
        log.warning("plot for %s skipped: %s", experiment, exc)
        return []
    finally:
        plt.close("all")


def load_report_dir(path):
    """``(experiment, rows)`` from an emitted report directory."""
    path = Path(path)
    if not (path / "metrics.csv").is_file() or not (path / "config.echo").is_file():
        raise FileNotFoundError(f"{path} is not a report directory")
    flat = cfgmod.load(path / "config.echo")
    exp = flat.get("experiment")
    if exp not in RUNNERS:
        raise cfgmod.ConfigError(f"{path}: unknown experiment {exp!r}")
    return exp, read_rows(path / "metrics.csv")

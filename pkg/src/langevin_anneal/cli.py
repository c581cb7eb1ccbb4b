"""Command-line entry point.

Exit codes::

    0  success (run: every flag passed; validate: no violations)
    1  at least one flag failed, or validate found a violation
    2  configuration / parameter error, or missing report directory
    3  numerical divergence beyond the survival rule
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import harness
from .diffusion import FIELDS, ellipticity_scan
from .gibbs import TruncationError
from .potentials import CATALOG, AssumptionError, ParameterError, check_assumptions
from .schedules import varpi_estimate
from .simulate import EnsembleDivergedError

OUTDIR_ENV = "LANGEVIN_ANNEAL_OUTDIR"
EXIT_OK, EXIT_FLAGS, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
VALIDATE_BOX = 10.0


def _parser():
    ap = argparse.ArgumentParser(prog="langevin-anneal",
                                 description="Langevin annealing experiments with multiplicative noise.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiment(s) and write report directories")
    run.add_argument("--config", action="append", required=True, metavar="PATH",
                     help="experiment config (repeat to run several in sequence)")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--outdir", help=f"output root (default: ${OUTDIR_ENV} or ./results)")
    run.add_argument("--jobs", type=int, default=1, help="worker threads for chain chunks")
    run.add_argument("--tag", help="report directory name (default: UTC timestamp)")
    run.add_argument("-v", "--verbose", action="count", default=0, dest="verbose_sub")

    val = sub.add_parser("validate", help="check a config's assumptions without simulating")
    val.add_argument("--config", required=True, metavar="PATH")
    val.add_argument("--seed", type=int)
    val.add_argument("-v", "--verbose", action="count", default=0, dest="verbose_sub")

    sub.add_parser("list", help="list potentials, diffusion fields and experiments")

    rep = sub.add_parser("report", help="re-derive flags and regenerate plots from a report directory")
    rep.add_argument("dir")
    rep.add_argument("-v", "--verbose", action="count", default=0, dest="verbose_sub")
    return ap


def _setup_logging(level):
    logging.basicConfig(level=logging.WARNING - 10 * min(level, 2),
                        format="%(levelname)s %(name)s: %(message)s")


def _load(path, **kw):
    flat = cfgmod.load(path)
    return harness.ExperimentConfig.from_flat(flat, **kw)


def cmd_run(args, out=None):
    out = out or sys.stdout
    outdir = args.outdir or os.environ.get(OUTDIR_ENV) or None
    # every config must parse and validate before anything runs
    cfgs = [_load(p, outdir=outdir, tag=args.tag, seed=args.seed) for p in args.config]
    code = EXIT_OK
    for cfg in cfgs:
        rep = harness.run_experiment(cfg, jobs=args.jobs)
        path = harness.emit_report(rep)
        for name, (ok, detail) in rep.flags.items():
            print(f"{'PASS' if ok else 'FAIL'} {cfg.experiment}.{name}: {detail}", file=out)
        print(json.dumps({"experiment": cfg.experiment, "dir": str(path), "passed": rep.passed,
                          "failures": rep.failures()}), file=out)
        if not rep.passed:
            code = EXIT_FLAGS
    return code


def _amplitude(cfg, p):
    if cfg.get("schedule.a") is not None:
        return float(cfg["schedule.a"])
    if cfg.get("schedule.A") is not None:
        return float(cfg["schedule.A"])
    return harness._anneal_amplitude(cfg, p)


def cmd_validate(args, out=None):
    out = out or sys.stdout
    cfg = _load(args.config, seed=args.seed)
    p = cfg.potential()
    fld = cfg.field(p)
    steps = cfg.steps()
    A = _amplitude(cfg, p)
    problems = []
    print(f"experiment = {cfg.experiment}", file=out)
    print(f"potential  = {p!r}", file=out)
    print(f"field      = {fld!r}", file=out)
    print(f"noise level A = {A:.6g}", file=out)
    box = (-VALIDATE_BOX, VALIDATE_BOX)
    rpt = check_assumptions(p, box, A, field=fld)
    print(f"assumption report on [{box[0]:g}, {box[1]:g}]^{p.dim}:", file=out)
    for line in rpt.lines():
        print("  " + line, file=out)
    if p.dim <= 2 and not rpt.integrable:
        problems.append("integrability check failed")
    print(f"steps: {steps!r}", file=out)
    if steps.kind != "constant":
        print(f"  varpi estimate = {varpi_estimate(steps):.6g}", file=out)
    # frozen-level experiments integrate with constant steps on purpose, so
    # the decreasing-step conditions are reported but not enforced for them
    frozen = steps.kind == "constant"
    for name, ok in steps.conditions().items():
        status = "ok" if ok else ("not required (constant steps)" if frozen else "VIOLATED")
        print(f"  {name}: {status}", file=out)
    if not frozen:
        problems.extend(steps.violations())
    ell = ellipticity_scan(fld, box)
    print(f"ellipticity: min eig(sigma sigma^T) = {ell.min_eigenvalue:.6g} "
          f"(declared sigma0^2 = {ell.declared:.6g}), max ||sigma|| = {ell.max_sigma_norm:.6g}", file=out)
    if ell.violated:
        problems.append("ellipticity below the declared constant")
    for msg in problems:
        print(f"VIOLATION: {msg}", file=out)
    print("validate: " + ("ok" if not problems else f"{len(problems)} violation(s)"), file=out)
    return EXIT_FLAGS if problems else EXIT_OK


def cmd_list(args, out=None):
    out = out or sys.stdout
    print("potentials:", file=out)
    for name, (_, desc) in CATALOG.items():
        print(f"  {name:24s} {desc}", file=out)
    print("fields:", file=out)
    for name, desc in FIELDS.items():
        print(f"  {name:24s} {desc}", file=out)
    print("experiments:", file=out)
    for name in harness.EXPERIMENTS:
        print(f"  {name}", file=out)
    return EXIT_OK


def cmd_report(args, out=None):
    out = out or sys.stdout
    try:
        exp, rows = harness.load_report_dir(args.dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    flags = harness.derive_flags(exp, rows)
    target = os.path.join(args.dir, "regenerated")
    os.makedirs(target, exist_ok=True)
    files = harness.write_plots(exp, harness.Table(rows), target)
    out.write(harness.verdict_text(exp, flags))
    print(json.dumps({"experiment": exp, "plots": [os.path.join(target, f) for f in files],
                      "failures": [n for n, (ok, _) in flags.items() if not ok]}), file=out)
    return EXIT_OK if all(ok for ok, _ in flags.values()) else EXIT_FLAGS


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "list": cmd_list, "report": cmd_report}


def main(argv=None):
    args = _parser().parse_args(argv)
    _setup_logging(args.verbose + getattr(args, "verbose_sub", 0))
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return COMMANDS[args.command](args)
    except EnsembleDivergedError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (cfgmod.ConfigError, ParameterError, AssumptionError, TruncationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

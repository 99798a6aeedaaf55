"""Command-line entry point.

Subcommands::

    surfgbpm run <config>
    surfgbpm sweep <config> --dx 0.2,0.1,0.05
    surfgbpm ablate-weighting <config>
    surfgbpm dump-operator <config> [--operator lb|gx|gy|gz]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, GbpmError
from .io import load_config, write_config
from .operators import assemble, dump_operator
from .scenarios import (build_scenario, convergence_order, initial_tube, radius_stats, run,
                        stencil_config)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _output_dir(cfg, config_path, suffix=""):
    if cfg.output_dir:
        return cfg.output_dir + suffix
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), f"{stem}_out{suffix}")


def _cmd_run(args):
    cfg = load_config(args.config)
    cfg = dataclasses.replace(cfg, output_dir=_output_dir(cfg, args.config))
    res = run(cfg.scenario, cfg)
    last = res.report.rows[-1]
    print(f"{cfg.scenario}: t={last.time:g} n_footpoints={last.n_footpoints} "
          f"linf_error={last.linf_error:.6e} output={cfg.output_dir}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = load_config(args.config)
    try:
        dxs = [float(x) for x in args.dx.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--dx must be a comma-separated list of numbers, got {args.dx!r}")
    if len(dxs) < 2 or any(not d > 0 for d in dxs):
        raise ConfigError("--dx needs at least two positive spacings")
    base = _output_dir(cfg, args.config)
    os.makedirs(base, exist_ok=True)
    reports = []
    for dx in dxs:
        sub = dataclasses.replace(cfg, dx=dx, output_dir=os.path.join(base, f"dx_{dx:g}"),
                                  dt=None if cfg.dt is None else cfg.dt * (dx / dxs[0]) ** 2)
        reports.append(run(cfg.scenario, sub).report)
    times = reports[0].times()
    lines = ["time," + ",".join(f"linf_dx_{d:g}" for d in dxs)
             + "," + ",".join(f"order_{a:g}_{b:g}" for a, b in zip(dxs, dxs[1:]))]
    for t in times[1:]:
        errs = [r.at(t).linf_error for r in reports]
        orders = convergence_order(errs, dxs) if all(e > 0 for e in errs) else [np.nan] * (len(dxs) - 1)
        lines.append(f"{t:.10g}," + ",".join(f"{e:.6e}" for e in errs) + ","
                     + ",".join(f"{o:.4f}" for o in orders))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(base, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_ablate(args):
    cfg = load_config(args.config)
    base = _output_dir(cfg, args.config)
    os.makedirs(base, exist_ok=True)
    rows = []
    for weighted in (True, False):
        sub = dataclasses.replace(cfg, weighted=weighted,
                                  output_dir=os.path.join(base, "weighted" if weighted else "unweighted"))
        res = run(cfg.scenario, sub)
        sc = res.scenario
        center = getattr(sc.surface, "center", np.zeros(3))
        r0 = getattr(sc.surface, "radius", np.nan)
        st = radius_stats(res.tube.pos, center, r0)
        rows.append((weighted, res.tube.n, st["mean_radius"], st["std_radius"],
                     st["max_location_error"]))
    text = "weighted,n_footpoints,mean_radius,std_radius,max_radius_error\n" + "".join(
        f"{str(w).lower()},{n},{m:.8f},{s:.6e},{e:.6e}\n" for w, n, m, s, e in rows)
    with open(os.path.join(base, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_dump(args):
    cfg = load_config(args.config)
    out = _output_dir(cfg, args.config)
    os.makedirs(out, exist_ok=True)
    cfg = dataclasses.replace(cfg, output_dir=out)
    write_config(cfg, os.path.join(out, "config.resolved"))
    sc = build_scenario(cfg.scenario, cfg)
    tube = initial_tube(sc, cfg)
    ops = assemble(tube, stencil_config(cfg))
    op = {"lb": ops.lb, "gx": ops.grad[0], "gy": ops.grad[1], "gz": ops.grad[2]}[args.operator]
    path = os.path.join(out, f"operator_{args.operator}.csv")
    dump_operator(op, path, tube.ids)
    print(f"wrote {op.nnz} entries for {tube.n} footpoints to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="surfgbpm", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("sweep", help="convergence table over grid spacings")
    p.add_argument("config")
    p.add_argument("--dx", required=True, help="comma-separated spacings, coarse to fine")
    p.set_defaults(func=_cmd_sweep)
    p = sub.add_parser("ablate-weighting", help="weighted vs unweighted fits")
    p.add_argument("config")
    p.set_defaults(func=_cmd_ablate)
    p = sub.add_parser("dump-operator", help="write an assembled operator as CSV triplets")
    p.add_argument("config")
    p.add_argument("--operator", choices=("lb", "gx", "gy", "gz"), default="lb")
    p.set_defaults(func=_cmd_dump)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GbpmError as exc:
        msg = exc.args[0] if exc.args else ""
        print(f"numerical failure: {type(exc).__name__}: {msg} "
              f"[phase={exc.phase} step={exc.step}]", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

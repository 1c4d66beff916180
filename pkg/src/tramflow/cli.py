"""Command-line surface.

Subcommands: validate (admissibility report), simulate (single run or
Monte Carlo), sweep (frequency or cancellation grids), report (re-render a
saved report).  Exit codes: 0 success, 1 validation failure, 2 runtime
failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import fileio, metrics
from .errors import AdmissibilityViolation, ConfigurationError
from .network import validate_schedule
from .scenarios import DisruptionPlan, Scenario
from .solver import edge_inflows, exact_grid_occupancy, run_upwind

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the documented contract is 64
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_input_args(p):
    p.add_argument("--dataset", help="bundled dataset name")
    p.add_argument("--network", help="network+timetable TOML")
    p.add_argument("--rates", help="boarding rates CSV")
    p.add_argument("--alighting", help="alighting fractions CSV")
    p.add_argument("--config", help="config TOML (overridden by flags)")


def _add_run_args(p):
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--runs", type=int, default=None,
                   help="Monte Carlo replications")
    p.add_argument("--solver", choices=("exact", "upwind", "both"),
                   default=None)
    p.add_argument("--scenario", help="scenario TOML")
    p.add_argument("--out", help="output directory")
    p.add_argument("--emit-trajectories", action="store_true", default=None)
    p.add_argument("--dwell-mode", choices=("sum", "diff"), default=None)
    p.add_argument("--horizon", type=float, default=None,
                   help="simulation horizon, minutes")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel worker processes")


def build_parser():
    parser = _Parser(prog="tramflow",
                     description="Tram network passenger flow simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check schedule admissibility")
    _add_input_args(p)

    p = sub.add_parser("simulate", help="run the simulator")
    _add_input_args(p)
    _add_run_args(p)

    p = sub.add_parser("sweep", help="scenario grids")
    _add_input_args(p)
    _add_run_args(p)
    p.add_argument("--kind", choices=("frequency", "cancellation"),
                   default="frequency")
    p.add_argument("--headways", type=float, nargs="+", default=None)
    p.add_argument("--cancellation-rates", type=float, nargs="+",
                   default=None)

    p = sub.add_parser("report", help="re-render a saved report")
    p.add_argument("path", help="report JSON written by simulate/sweep")
    return parser


def _config_from_args(args):
    if getattr(args, "config", None):
        cfg = fileio.parse_config(args.config)
    else:
        cfg = fileio.SimulationConfig()
    for name in ("dataset", "network", "rates", "alighting", "scenario",
                 "solver", "dwell_mode", "jobs", "out"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "runs", None) is not None:
        cfg.runs = args.runs
    if getattr(args, "horizon", None) is not None:
        cfg.horizon = args.horizon
    if getattr(args, "emit_trajectories", None):
        cfg.emit_trajectories = True
    if not cfg.dataset and not cfg.network:
        raise ConfigurationError("need --dataset or --network")
    if cfg.network and not cfg.rates and not cfg.dataset:
        raise ConfigurationError("--network needs --rates")
    if cfg.runs < 1:
        raise ConfigurationError("--runs must be >= 1")
    return cfg


def _load(cfg):
    net, tt, rates, alighting, scenario, warnings = fileio.load_inputs(cfg)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    if cfg.horizon is not None and tt.horizon != cfg.horizon:
        tt = tt.with_horizon(cfg.horizon)
    cfg.horizon = tt.horizon     # concrete value for metadata and solvers
    return net, tt, rates, alighting, scenario


def cmd_validate(args):
    cfg = _config_from_args(args)
    net, tt, *_ = _load(cfg)
    report = validate_schedule(net, tt)
    print(report.render())
    return EXIT_OK if report.ok else EXIT_VALIDATION


def _upwind_summary(net, log, horizon, cfl, cells):
    """Grid cross-check: evolve the realized injections, compare to exact."""
    inflows = edge_inflows(log)
    field = run_upwind(net, inflows, horizon, cfl=cfl, cells=cells)
    rows = {}
    for eid, grid in sorted(field.edges.items()):
        occ = exact_grid_occupancy(log, eid, grid.times)
        dev = float(abs(grid.totals - occ).max()) if len(occ) else 0.0
        rows[eid] = {
            "cells": grid.cells,
            "dt": grid.dt,
            "injected": float(grid.inflow.sum()),
            "outflow": float(grid.outflow.sum()),
            "final_mass": float(grid.totals[-1]),
            "max_dev_vs_exact": dev,
        }
    return rows


def cmd_simulate(args):
    cfg = _config_from_args(args)
    net, tt, rates, alighting, scenario = _load(cfg)
    scenario = scenario or Scenario()
    report = validate_schedule(net, tt)
    if not report.ok:
        print(report.render(), file=sys.stderr)
        return EXIT_VALIDATION
    out = fileio.resolve_out_dir(cfg.out)

    mc = metrics.monte_carlo(tt, rates, alighting, scenario=scenario,
                             n_runs=cfg.runs, master_seed=cfg.seed,
                             horizon=cfg.horizon, jobs=cfg.jobs)
    doc = fileio.mc_report_dict(mc, fileio.meta_block(cfg, scenario.name))

    if cfg.solver in ("upwind", "both") or cfg.emit_trajectories:
        # one fixed realization (run 0) for grids and trajectories
        rm, log, traj = metrics.simulate_run(
            tt, rates, alighting, scenario, cfg.seed, 0,
            horizon=cfg.horizon, emit_trajectories=cfg.emit_trajectories)
        if cfg.solver in ("upwind", "both"):
            doc["upwind"] = _upwind_summary(net, log, tt.horizon, cfg.cfl,
                                            cfg.cells)
        if cfg.emit_trajectories:
            fileio.write_trajectories(os.path.join(out, "trajectories.csv"),
                                      traj)

    path = os.path.join(out, "report.json")
    fileio.dump_json(doc, path)
    print(f"report: {path}")
    _print_scalars(mc)
    if not mc.valid:
        print(f"INVALID aggregate: {mc.n_failed}/{mc.n_runs} runs failed",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _print_scalars(mc):
    for name in sorted(mc.scalars):
        s = mc.scalars[name]
        print(f"  {name}: mean {s['mean']:.9g} "
              f"[p20 {s['p20']:.9g}, p80 {s['p80']:.9g}]")


def cmd_sweep(args):
    cfg = _config_from_args(args)
    net, tt, rates, alighting, scenario = _load(cfg)
    scenario = scenario or Scenario()
    report = validate_schedule(net, tt)
    if not report.ok:
        print(report.render(), file=sys.stderr)
        return EXIT_VALIDATION
    out = fileio.resolve_out_dir(cfg.out)

    if args.kind == "frequency":
        headways = args.headways or [5.0, 10.0, 20.0, 30.0, 40.0]
        grid = [(h, None) for h in headways]
    else:
        headways = args.headways or [10.0, 20.0, 30.0, 40.0]
        c_rates = args.cancellation_rates or [0.0, 0.1, 0.2, 0.3]
        grid = [(h, r) for h in headways for r in c_rates]

    rows = []
    cells = {}
    for headway, c_rate in grid:
        plan = scenario.plan
        if c_rate is not None:
            base_plan = plan or DisruptionPlan(failures=())
            plan = dataclasses.replace(base_plan, cancellation_rate=c_rate)
        sc = dataclasses.replace(
            scenario, headway=headway, plan=plan,
            name=f"{scenario.name}:h{headway:g}"
                 + (f":c{c_rate:g}" if c_rate is not None else ""))
        mc = metrics.monte_carlo(tt, rates, alighting, scenario=sc,
                                 n_runs=cfg.runs, master_seed=cfg.seed,
                                 horizon=cfg.horizon, jobs=cfg.jobs)
        w = mc.scalars["waiting_hours"]
        s = mc.scalars["standing_hours"]
        key = (headway, c_rate)
        cells[key] = mc
        row = [headway]
        if c_rate is not None:
            row.append(c_rate)
        rows.append(row + [w["mean"], w["p20"], w["p80"],
                           s["mean"], s["p20"], s["p80"],
                           mc.n_failed, int(mc.valid)])

    header = ["headway"] + (["cancellation_rate"]
                            if args.kind == "cancellation" else [])
    header += ["waiting_mean", "waiting_p20", "waiting_p80",
               "standing_mean", "standing_p20", "standing_p80",
               "failed_runs", "valid"]
    table_path = os.path.join(out, f"sweep_{args.kind}.csv")
    fileio.write_csv(table_path, header, rows)

    doc = {
        "meta": fileio.meta_block(cfg, scenario.name,
                                  extra={"kind": args.kind}),
        "grid": [
            {
                "headway": h,
                **({"cancellation_rate": r} if r is not None else {}),
                "scalars": cells[(h, r)].scalars,
                "failed": cells[(h, r)].n_failed,
                "valid": cells[(h, r)].valid,
            }
            for h, r in grid
        ],
    }
    json_path = os.path.join(out, f"sweep_{args.kind}.json")
    fileio.dump_json(doc, json_path)
    print(f"sweep table: {table_path}")
    print(f"sweep report: {json_path}")
    if any(not cells[k].valid for k in cells):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args):
    try:
        with open(args.path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        print(f"error: {args.path}: file not found", file=sys.stderr)
        return EXIT_VALIDATION
    except json.JSONDecodeError as exc:
        print(f"error: {args.path}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    meta = doc.get("meta", {})
    print(f"tramflow report (version {meta.get('version', '?')}, "
          f"seed {meta.get('seed', '?')}, scenario "
          f"{meta.get('scenario', '?')})")
    if "scalars" in doc:
        for name in sorted(doc["scalars"]):
            s = doc["scalars"][name]
            print(f"  {name}: mean {s['mean']:.9g} "
                  f"[p20 {s['p20']:.9g}, p80 {s['p80']:.9g}]")
    for entry in doc.get("grid", []):
        tag = f"h={entry['headway']:g}"
        if "cancellation_rate" in entry:
            tag += f" c={entry['cancellation_rate']:g}"
        w = entry["scalars"]["waiting_hours"]
        print(f"  {tag}: waiting mean {w['mean']:.9g} "
              f"[{w['p20']:.9g}, {w['p80']:.9g}]")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    handlers = {
        "validate": cmd_validate,
        "simulate": cmd_simulate,
        "sweep": cmd_sweep,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AdmissibilityViolation as exc:
        print(f"admissibility error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures map to exit 2
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
"""Input parsing and deterministic output emission.

Network and timetable live in one TOML document (field names follow the
usual symbols: l, w for edge length/speed, tau, tau_seat for capacities).
Demand tables are line-oriented CSV so they can come straight out of a
spreadsheet: hourly boarding rates per stop or per edge, hourly alighting
fractions per stop.  Scenario and simulation configs are small TOML files.

All machine-readable output is emitted canonically: keys sorted, floats at
9 significant digits, so identical runs produce identical bytes.  The one
exception is the meta.created timestamp, which consumers must ignore when
comparing.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime
import io
import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np
import tomli

from . import __version__
from .errors import ConfigurationError
from .network import Edge, Stop, TramNetwork, Trip, Timetable
from .scenarios import (DEFAULT_FAILURE_SPECS, DisruptionPlan, DwellDelayModel,
                        FailureSpec, Scenario, service_trip_id)
from .stochastic import AlightingTable, RateTable

DEFAULT_HORIZON = 1440.0
DEFAULT_RUNS = 1000
DEFAULT_CFL = 1.0
DEFAULT_CELLS = 100
DEFAULT_PEAK = (300.0, 1260.0)  # 5 a.m. to 9 p.m., minutes

OUT_ENV = "TRAMFLOW_OUT"


def _toml_load(path):
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"{path}: file not found")
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}")


def _req(table, key, path, ctx):
    if key not in table:
        raise ConfigurationError(f"{path}: {ctx}: missing key {key!r}")
    return table[key]


def parse_network(path):
    """Load one TOML document into (TramNetwork, Timetable).

    [[stop]] and [[edge]] build the graph; [[pool]] declares shared
    boarding queues; [[trip]] lists explicit departures and [[line]]
    blocks expand periodic services deterministically (ids encode the
    departure time, so re-expansion is reproducible).
    """
    doc = _toml_load(path)
    stops = []
    for s in doc.get("stop", []):
        stops.append(Stop(
            stop_id=str(_req(s, "id", path, "stop")),
            name=str(s.get("name", "")),
            is_start=bool(s.get("start", False)),
            is_terminal=bool(s.get("terminal", False)),
        ))
    edges = []
    for e in doc.get("edge", []):
        eid = str(_req(e, "id", path, "edge"))
        edges.append(Edge(
            edge_id=eid,
            tail=str(_req(e, "from", path, f"edge {eid}")),
            head=str(_req(e, "to", path, f"edge {eid}")),
            length=float(_req(e, "l", path, f"edge {eid}")),
            speed=float(_req(e, "w", path, f"edge {eid}")),
        ))
    pools = {}
    for p in doc.get("pool", []):
        pid = str(_req(p, "id", path, "pool"))
        pools[pid] = [str(m) for m in _req(p, "edges", path, f"pool {pid}")]
    try:
        net = TramNetwork(stops, edges, queue_pools=pools or None)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}")

    trips = []
    for t in doc.get("trip", []):
        tid = str(_req(t, "id", path, "trip"))
        trips.append(Trip(
            trip_id=tid,
            line=str(t.get("line", tid)),
            edges=tuple(str(e) for e in _req(t, "edges", path, f"trip {tid}")),
            start_time=float(_req(t, "start", path, f"trip {tid}")),
            capacity=float(_req(t, "tau", path, f"trip {tid}")),
            seat_capacity=float(_req(t, "tau_seat", path, f"trip {tid}")),
        ))
    for block in doc.get("line", []):
        line = str(_req(block, "line", path, "line block"))
        edges_ = tuple(str(e) for e in _req(block, "edges", path,
                                            f"line {line}"))
        tau = float(_req(block, "tau", path, f"line {line}"))
        tau_seat = float(_req(block, "tau_seat", path, f"line {line}"))
        for svc in block.get("service", []):
            start = float(_req(svc, "start", path, f"line {line} service"))
            end = float(_req(svc, "end", path, f"line {line} service"))
            headway = float(_req(svc, "headway", path,
                                 f"line {line} service"))
            if headway <= 0:
                raise ConfigurationError(
                    f"{path}: line {line}: headway must be positive")
            k = 0
            while True:
                t = start + k * headway
                if t >= end:
                    break
                trips.append(Trip(
                    trip_id=service_trip_id(line, t), line=line,
                    edges=edges_, start_time=t, capacity=tau,
                    seat_capacity=tau_seat))
                k += 1

    horizon = float(doc.get("horizon", DEFAULT_HORIZON))
    peak = doc.get("peak_window", list(DEFAULT_PEAK))
    try:
        tt = Timetable(net, trips, horizon=horizon,
                       peak_window=(float(peak[0]), float(peak[1])))
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}")
    return net, tt


def _read_csv(path, required):
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise ConfigurationError(f"{path}: file not found")
    with fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        missing = [c for c in required if c not in cols]
        if missing:
            raise ConfigurationError(
                f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader), cols


def read_rates(path, network):
    """Hourly boarding rates -> per-edge RateTable.

    Columns: stop_id, hour, lambda (alias: rate), unit (per_hour|per_min),
    optional edge.  Rows naming an edge feed that edge's queue; stop-level
    rows are split evenly over the stop's outgoing edges.  Rows for stops
    without outgoing edges cannot generate boardings and are skipped with
    a diagnostic.  Returns (RateTable, warnings).
    """
    rows, cols = _read_csv(path, ("stop_id", "hour"))
    value_col = "lambda" if "lambda" in cols else "rate"
    if value_col not in cols:
        raise ConfigurationError(f"{path}: missing column 'lambda'")
    acc = {}
    warnings = []
    for ln, row in enumerate(rows, start=2):
        stop = row["stop_id"].strip()
        if stop not in network.stops:
            raise ConfigurationError(f"{path}:{ln}: unknown stop {stop!r}")
        hour = int(row["hour"])
        if not 0 <= hour < RateTable.HOURS:
            raise ConfigurationError(f"{path}:{ln}: hour {hour} outside 0-23")
        value = float(row[value_col])
        unit = (row.get("unit") or "per_hour").strip()
        if unit == "per_hour":
            value /= 60.0
        elif unit != "per_min":
            raise ConfigurationError(f"{path}:{ln}: unknown unit {unit!r}")
        edge = (row.get("edge") or "").strip()
        if edge:
            if edge not in network.edges:
                raise ConfigurationError(
                    f"{path}:{ln}: unknown edge {edge!r}")
            if network.edges[edge].tail != stop:
                raise ConfigurationError(
                    f"{path}:{ln}: edge {edge!r} does not leave {stop!r}")
            targets = [edge]
        else:
            targets = network.out_edges[stop]
            if not targets:
                warnings.append(
                    f"{path}:{ln}: stop {stop!r} has no outgoing edge; "
                    f"boarding rate ignored")
                continue
        share = value / len(targets)
        for eid in targets:
            arr = acc.setdefault(eid, np.zeros(RateTable.HOURS))
            arr[hour] += share
    return RateTable(acc), warnings


def read_alighting(path):
    """Hourly alighting fractions per stop: columns stop_id, hour, r_a."""
    rows, _ = _read_csv(path, ("stop_id", "hour", "r_a"))
    acc = {}
    for ln, row in enumerate(rows, start=2):
        stop = row["stop_id"].strip()
        hour = int(row["hour"])
        if not 0 <= hour < AlightingTable.HOURS:
            raise ConfigurationError(f"{path}:{ln}: hour {hour} outside 0-23")
        frac = float(row["r_a"])
        if not 0.0 <= frac <= 1.0:
            raise ConfigurationError(
                f"{path}:{ln}: r_a {frac:g} outside [0, 1]")
        acc.setdefault(stop, np.zeros(AlightingTable.HOURS))[hour] = frac
    return AlightingTable(acc)


def parse_scenario(source, dwell_mode=None):
    """Scenario TOML -> Scenario.

    Sections: [dwell] (threshold/slope/mode), [failures] (specs = [[p, d],
    ...]; empty section takes the built-in defaults), [cancellations]
    (rate), [[shift]] (line, minutes), top-level headway and
    measurement_stop.  ``dwell_mode`` overrides the file's dwell mode.
    """
    if isinstance(source, dict):
        doc, where = source, "<scenario>"
    else:
        doc, where = _toml_load(source), str(source)
    dwell = None
    if "dwell" in doc:
        d = doc["dwell"]
        dwell = DwellDelayModel(
            threshold=float(d.get("threshold", 50.0)),
            slope=float(d.get("slope", 1.0 / 50.0)),
            mode=dwell_mode or str(d.get("mode", "sum")),
        )
    elif dwell_mode:
        dwell = DwellDelayModel(mode=dwell_mode)

    specs = ()
    if "failures" in doc:
        raw = doc["failures"].get("specs")
        if raw is None:
            specs = DEFAULT_FAILURE_SPECS
        else:
            specs = tuple(FailureSpec(float(p), float(dmin))
                          for p, dmin in raw)
    rate = 0.0
    if "cancellations" in doc:
        rate = float(_req(doc["cancellations"], "rate", where,
                          "cancellations"))
    plan = None
    if specs or rate > 0.0:
        plan = DisruptionPlan(cancellation_rate=rate, failures=specs)

    shifts = tuple(
        (str(_req(s, "line", where, "shift")),
         float(_req(s, "minutes", where, "shift")))
        for s in doc.get("shift", [])
    )
    headway = doc.get("headway")
    return Scenario(
        name=str(doc.get("name", "scenario")),
        dwell=dwell,
        plan=plan,
        headway=float(headway) if headway is not None else None,
        shifts=shifts,
        measurement_stop=doc.get("measurement_stop"),
    )


def dataset_path(name):
    """Directory of a bundled dataset (importlib.resources anchor)."""
    root = resources.files("tramflow.datasets")
    p = root / name
    if not p.is_dir():
        have = sorted(c.name for c in root.iterdir()
                      if c.is_dir() and not c.name.startswith("_"))
        raise ConfigurationError(
            f"unknown dataset {name!r}; bundled: {', '.join(have)}")
    return p


def load_dataset(name):
    """Bundled dataset -> (network, timetable, rates, alighting, warnings)."""
    base = dataset_path(name)
    net, tt = parse_network(str(base / "network.toml"))
    rates, warn = read_rates(str(base / "rates.csv"), net)
    alighting_file = base / "alighting.csv"
    if alighting_file.is_file():
        alighting = read_alighting(str(alighting_file))
    else:
        alighting = AlightingTable({})
    return net, tt, rates, alighting, warn


@dataclass
class SimulationConfig:
    """Validated run parameters with defaults applied."""
    network: str | None = None
    dataset: str | None = None
    rates: str | None = None
    alighting: str | None = None
    scenario: str | None = None
    horizon: float | None = None   # None: keep the timetable's own horizon
    runs: int = DEFAULT_RUNS
    seed: int = 0
    solver: str = "exact"
    cfl: float = DEFAULT_CFL
    cells: int = DEFAULT_CELLS
    jobs: int | None = None
    out: str | None = None
    emit_trajectories: bool = False
    dwell_mode: str | None = None


def parse_config(source):
    """Config TOML ([paths] + [simulation]) -> SimulationConfig."""
    doc = _toml_load(source) if not isinstance(source, dict) else source
    where = source if isinstance(source, str) else "<config>"
    paths = doc.get("paths", {})
    sim = doc.get("simulation", {})
    known_p = {"network", "dataset", "rates", "alighting", "scenario"}
    known_s = {"horizon", "runs", "seed", "solver", "cfl", "cells", "jobs",
               "out", "emit_trajectories", "dwell_mode"}
    for k in paths:
        if k not in known_p:
            raise ConfigurationError(f"{where}: unknown [paths] key {k!r}")
    for k in sim:
        if k not in known_s:
            raise ConfigurationError(
                f"{where}: unknown [simulation] key {k!r}")
    cfg = SimulationConfig(
        network=paths.get("network"),
        dataset=paths.get("dataset"),
        rates=paths.get("rates"),
        alighting=paths.get("alighting"),
        scenario=paths.get("scenario"),
        horizon=(float(sim["horizon"]) if "horizon" in sim else None),
        runs=int(sim.get("runs", DEFAULT_RUNS)),
        seed=int(sim.get("seed", 0)),
        solver=str(sim.get("solver", "exact")),
        cfl=float(sim.get("cfl", DEFAULT_CFL)),
        cells=int(sim.get("cells", DEFAULT_CELLS)),
        jobs=sim.get("jobs"),
        out=sim.get("out"),
        emit_trajectories=bool(sim.get("emit_trajectories", False)),
        dwell_mode=sim.get("dwell_mode"),
    )
    if cfg.runs < 1:
        raise ConfigurationError(f"{where}: runs must be >= 1")
    if cfg.solver not in ("exact", "upwind", "both"):
        raise ConfigurationError(f"{where}: solver must be exact|upwind|both")
    if not cfg.dataset and not cfg.network:
        raise ConfigurationError(
            f"{where}: need a dataset name or a network file")
    if cfg.network and not cfg.rates:
        raise ConfigurationError(
            f"{where}: explicit network needs a rates file")
    return cfg


def load_inputs(cfg):
    """Resolve a config to loaded inputs.

    Returns (network, timetable, rates, alighting, scenario, warnings).
    """
    if cfg.dataset:
        net, tt, rates, alighting, warn = load_dataset(cfg.dataset)
    else:
        net, tt = parse_network(cfg.network)
        rates, warn = read_rates(cfg.rates, net)
        alighting = (read_alighting(cfg.alighting) if cfg.alighting
                     else AlightingTable({}))
    scenario = None
    if cfg.scenario:
        scenario = parse_scenario(cfg.scenario, dwell_mode=cfg.dwell_mode)
    elif cfg.dwell_mode:
        scenario = Scenario(dwell=DwellDelayModel(mode=cfg.dwell_mode))
    return net, tt, rates, alighting, scenario, warn


# ---------------------------------------------------------------------------
# Canonical output


def round9(value):
    """Round-trip a float through 9 significant digits."""
    return float(f"{float(value):.9g}")


def canonical(obj):
    """Make a structure JSON-ready and numerically canonical."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [canonical(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round9(obj)
    return obj


def dump_json(obj, path=None):
    """Canonical JSON: sorted keys, 9-digit floats, newline-terminated."""
    text = json.dumps(canonical(obj), sort_keys=True, indent=2) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def meta_block(cfg, scenario_name, extra=None):
    meta = {
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "version": __version__,
        "seed": cfg.seed,
        "runs": cfg.runs,
        "solver": cfg.solver,
        "horizon": cfg.horizon,
        "scenario": scenario_name,
    }
    if extra:
        meta.update(extra)
    return meta


def mc_report_dict(report, meta):
    return {
        "meta": dict(meta, rng_family=report.rng_family,
                     kernel_backend=report.kernel_backend),
        "runs": {
            "total": report.n_runs,
            "failed": report.n_failed,
            "valid": report.valid,
            "errors": [list(f) for f in report.failures[:50]],
        },
        "scalars": report.scalars,
        "waiting_by_stop": report.waiting_by_stop,
        "waiting_by_hour": report.waiting_by_hour,
        "standing_by_edge": report.standing_by_edge,
        "standing_by_hour": report.standing_by_hour,
        "cu_by_trip": [
            {"t": t, "line": line, "trip": tid, "cu": cu}
            for t, line, tid, cu in report.cu_by_trip
        ],
    }


def write_csv(path, header, rows):
    """Deterministic CSV: floats at 9 significant digits."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return f"{v:.9g}"
        return str(v)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def write_trajectories(path, rows):
    return write_csv(path, ("t", "trip_id", "edge_id", "x", "onboard",
                            "delay"), rows)


def resolve_out_dir(flag_value):
    """--out beats TRAMFLOW_OUT beats ./tramflow-out; creates the dir."""
    out = flag_value or os.environ.get(OUT_ENV) or "tramflow-out"
    os.makedirs(out, exist_ok=True)
    return out
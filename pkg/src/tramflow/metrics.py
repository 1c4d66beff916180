"""Performance measures and Monte Carlo aggregation.

Waiting time is the exact integral of the queue step functions (level times
duration, no discretization), standing time the exact sum over tram segments
of the over-seat excess times travel duration.  Everything internal is in
minutes; reported figures are passenger-hours.  The Monte Carlo layer runs
seeded independent replications and reports means with nearest-rank 20th and
80th percentiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AdmissibilityViolation, ConfigurationError
from .scenarios import Scenario, inject_failures, effective_timetable
from .solver import mass_balance_audit, run_exact
from .stochastic import RNG_FAMILY, KERNEL_BACKEND, run_streams, sample_arrivals


def _step_integral(times, deltas, horizon, hour_edges):
    """Integral of a right-continuous step function built from jump events.

    Returns (total passenger-minutes, per-bucket passenger-minutes between
    consecutive hour_edges).  Events must lie in [0, horizon].
    """
    order = np.argsort(times, kind="stable")
    t = times[order]
    lvl = np.cumsum(deltas[order])
    knots = np.concatenate(([0.0], t, [horizon]))
    levels = np.concatenate(([0.0], lvl))
    dur = np.diff(knots)
    total = float(np.dot(levels, dur))
    cum = np.concatenate(([0.0], np.cumsum(levels * dur)))
    x = np.clip(hour_edges, 0.0, horizon)
    idx = np.clip(np.searchsorted(knots, x, side="right") - 1,
                  0, len(levels) - 1)
    at_edges = cum[idx] + levels[idx] * (x - knots[idx])
    return total, np.diff(at_edges)


def _hour_edges(horizon):
    n = max(1, int(math.ceil(horizon / 60.0 - 1e-12)))
    return np.arange(n + 1) * 60.0


def total_waiting_time(inputs, hour_edges=None):
    """Exact waiting time integral, per queue.

    Queue level rises by one at each arrival and drops by the boarded count
    at each departure event; between events it is constant, so the integral
    is a finite sum.  Residual queues integrate to the horizon boundary.
    Returns (total hours, {stop: hours}, per-hour hours array).
    """
    T = inputs.horizon
    edges = _hour_edges(T) if hour_edges is None else hour_edges
    boardings = {}
    for ev in inputs.log.stop_events:
        if ev.pool is not None and ev.boarded > 0.0:
            boardings.setdefault(ev.pool, []).append((ev.time, -ev.boarded))
    by_stop = {}
    by_hour = np.zeros(len(edges) - 1)
    total = 0.0
    for pool, stream in inputs.arrivals.items():
        arr = stream.times[stream.times < T]
        drains = boardings.get(pool, [])
        t = np.concatenate((arr, [d[0] for d in drains]))
        d = np.concatenate((np.ones(len(arr)), [d[1] for d in drains]))
        if len(t) == 0:
            continue
        tot_min, hours_min = _step_integral(t, d, T, edges)
        stop = inputs.network.pool_stop(pool)
        by_stop[stop] = by_stop.get(stop, 0.0) + tot_min / 60.0
        by_hour += hours_min / 60.0
        total += tot_min / 60.0
    return total, by_stop, by_hour


def total_standing_time(inputs, hour_edges=None):
    """Exact standing time: over-seat excess times segment duration.

    Only travel segments count; stop holds are excluded.  Segments are
    clipped to the horizon.  Returns (total hours, {edge: hours},
    per-hour hours array).
    """
    T = inputs.horizon
    edges = _hour_edges(T) if hour_edges is None else hour_edges
    by_edge = {}
    by_hour = np.zeros(len(edges) - 1)
    total = 0.0
    for seg in inputs.log.segments:
        excess = seg.onboard - seg.seat_capacity
        if excess <= 0.0:
            continue
        lo = max(seg.enter, 0.0)
        hi = min(seg.exit, T)
        if hi <= lo:
            continue
        total += excess * (hi - lo) / 60.0
        by_edge[seg.edge] = by_edge.get(seg.edge, 0.0) \
            + excess * (hi - lo) / 60.0
        h = int(lo // 60)
        t0 = lo
        while t0 < hi:
            t1 = min(hi, (h + 1) * 60.0)
            by_hour[min(h, len(by_hour) - 1)] += excess * (t1 - t0) / 60.0
            t0 = t1
            h += 1
    return total, by_edge, by_hour


def capacity_utilization(onboard, seats):
    """Passengers per available seat; above 1 people stand.

    Seatless vehicles have no defined ratio: returns None (missing datum).
    """
    if onboard < 0 or seats < 0:
        raise ConfigurationError("counts must be >= 0")
    if seats == 0:
        return None
    return onboard / seats


def cu_series(inputs, stop):
    """Utilization of every departure leaving a stop, in time order."""
    net = inputs.network
    rows = []
    for seg in inputs.log.segments:
        if net.edges[seg.edge].tail != stop:
            continue
        rows.append((seg.enter, seg.line, seg.trip_id,
                     capacity_utilization(seg.onboard, seg.seat_capacity)))
    rows.sort(key=lambda r: (r[0], r[2]))
    return rows


@dataclass
class RunMetrics:
    """Scalar measures and breakdowns of a single run."""
    waiting_hours: float
    standing_hours: float
    dwell_minutes: float
    residual_queue: float
    boarded_total: float
    alighted_total: float
    waiting_by_stop: dict
    waiting_by_hour: np.ndarray
    standing_by_edge: dict
    standing_by_hour: np.ndarray
    truncated_trips: int
    audit_ok: bool
    audit_worst: float
    cu: list = field(default_factory=list)

    SCALARS = ("waiting_hours", "standing_hours", "dwell_minutes",
               "residual_queue", "boarded_total", "alighted_total")


def compute_run_metrics(inputs, measurement_stop=None, audit=None):
    log = inputs.log
    wait, w_stop, w_hour = total_waiting_time(inputs)
    stand, s_edge, s_hour = total_standing_time(inputs)
    audit = mass_balance_audit(log) if audit is None else audit
    return RunMetrics(
        waiting_hours=wait,
        standing_hours=stand,
        dwell_minutes=sum(ev.dwell for ev in log.stop_events),
        residual_queue=sum(log.final_queues.values()),
        boarded_total=sum(ev.boarded for ev in log.stop_events),
        alighted_total=sum(ev.alighted for ev in log.stop_events),
        waiting_by_stop=w_stop,
        waiting_by_hour=w_hour,
        standing_by_edge=s_edge,
        standing_by_hour=s_hour,
        truncated_trips=len(log.truncated),
        audit_ok=audit.ok,
        audit_worst=audit.worst,
        cu=cu_series(inputs, measurement_stop) if measurement_stop else [],
    )


def nearest_rank(sorted_values, p):
    """Nearest-rank percentile: value at rank ceil(p/100 * n), 1-indexed."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("no values")
    k = max(1, math.ceil(p * n / 100.0))
    return float(sorted_values[min(k, n) - 1])


MAX_FAILED_SHARE = 0.10


@dataclass
class MonteCarloReport:
    """Aggregate of N independent seeded runs.

    Breakdowns are means over successful runs; scalars carry mean and
    nearest-rank 20th/80th percentiles.  More than 10 percent failed runs
    invalidates the aggregate (valid=False); failed runs never contribute.
    """
    n_runs: int
    n_failed: int
    valid: bool
    master_seed: int
    rng_family: str
    kernel_backend: str
    scenario: str
    horizon: float
    scalars: dict
    waiting_by_stop: dict
    waiting_by_hour: list
    standing_by_edge: dict
    standing_by_hour: list
    cu_by_trip: list
    failures: list


def simulate_run(timetable, rates, alighting, scenario, master_seed,
                 run_index, horizon=None, emit_trajectories=False):
    """One seeded replication: realize demand, apply the scenario, solve.

    Returns (RunMetrics, EventLog, trajectories).  Deterministic in
    (master_seed, run_index) and the inputs.
    """
    scenario = scenario or Scenario()
    net = timetable.network
    pools = net.boarding_pools()
    gens, fail_gen, cancel_gen = run_streams(
        master_seed, run_index, pools.keys())
    tt = effective_timetable(timetable, scenario, cancel_gen)
    plan = scenario.plan
    failures = None
    if plan is not None and plan.failures:
        failures = inject_failures(tt, plan, fail_gen)
    T = timetable.horizon if horizon is None else float(horizon)
    streams = {
        pool: sample_arrivals(rates.pooled(members), pool, T, gens[pool])
        for pool, members in pools.items()
    }
    log, traj, inputs = run_exact(
        tt, streams, alighting, dwell_model=scenario.dwell,
        failures=failures, horizon=T, emit_trajectories=emit_trajectories)
    rm = compute_run_metrics(inputs, scenario.measurement_stop)
    return rm, log, traj


def monte_carlo(timetable, rates, alighting, scenario=None, n_runs=1000,
                master_seed=0, horizon=None, jobs=None):
    """N independent replications, streamed into means and percentiles.

    Runs are keyed by index, so the reduction is deterministic no matter
    how execution is scheduled.  A run that raises an admissibility error
    or fails the balance audit is recorded as failed and excluded.
    """
    if n_runs < 1:
        raise ConfigurationError("need at least one run")
    scenario = scenario or Scenario()
    per_run = {name: np.empty(n_runs) for name in RunMetrics.SCALARS}
    sums = {}
    cu_acc = {}
    failed = []
    ok_runs = []

    def reduce_one(r, rm):
        if not rm.audit_ok:
            failed.append((r, f"balance audit residual {rm.audit_worst:.3e}"))
            return
        ok_runs.append(r)
        for name in RunMetrics.SCALARS:
            per_run[name][r] = getattr(rm, name)
        _acc_dict(sums, "waiting_by_stop", rm.waiting_by_stop)
        _acc_dict(sums, "standing_by_edge", rm.standing_by_edge)
        _acc_array(sums, "waiting_by_hour", rm.waiting_by_hour)
        _acc_array(sums, "standing_by_hour", rm.standing_by_hour)
        for t, line, tid, cu in rm.cu:
            if cu is None:
                continue
            s = cu_acc.setdefault(tid, [0.0, 0.0, 0, line])
            s[0] += t
            s[1] += cu
            s[2] += 1

    runner = _parallel_runs if jobs and jobs > 1 else _serial_runs
    for r, outcome in runner(timetable, rates, alighting, scenario,
                             master_seed, n_runs, horizon, jobs):
        if isinstance(outcome, Exception):
            failed.append((r, f"{type(outcome).__name__}: {outcome}"))
        else:
            reduce_one(r, outcome)

    n_ok = len(ok_runs)
    valid = n_ok > 0 and len(failed) <= MAX_FAILED_SHARE * n_runs
    scalars = {}
    for name in RunMetrics.SCALARS:
        vals = np.sort(per_run[name][np.sort(ok_runs)]) if n_ok else np.array([])
        scalars[name] = {
            "mean": float(np.mean(vals)) if n_ok else float("nan"),
            "p20": nearest_rank(vals, 20) if n_ok else float("nan"),
            "p80": nearest_rank(vals, 80) if n_ok else float("nan"),
        }
    cu_rows = sorted(
        (s[0] / s[2], s[3], tid, s[1] / s[2]) for tid, s in cu_acc.items()
    )
    T = timetable.horizon if horizon is None else float(horizon)
    return MonteCarloReport(
        n_runs=n_runs,
        n_failed=len(failed),
        valid=valid,
        master_seed=master_seed,
        rng_family=RNG_FAMILY,
        kernel_backend=KERNEL_BACKEND,
        scenario=scenario.name,
        horizon=T,
        scalars=scalars,
        waiting_by_stop=_mean_dict(sums.get("waiting_by_stop"), n_ok),
        waiting_by_hour=_mean_array(sums.get("waiting_by_hour"), n_ok),
        standing_by_edge=_mean_dict(sums.get("standing_by_edge"), n_ok),
        standing_by_hour=_mean_array(sums.get("standing_by_hour"), n_ok),
        cu_by_trip=[(t, line, tid, cu) for t, line, tid, cu in cu_rows],
        failures=failed,
    )


def _serial_runs(timetable, rates, alighting, scenario, master_seed,
                 n_runs, horizon, jobs):
    for r in range(n_runs):
        try:
            rm, _, _ = simulate_run(timetable, rates, alighting, scenario,
                                    master_seed, r, horizon)
            yield r, rm
        except AdmissibilityViolation as exc:
            yield r, exc


def _mc_task(args):
    timetable, rates, alighting, scenario, master_seed, r, horizon = args
    try:
        rm, _, _ = simulate_run(timetable, rates, alighting, scenario,
                                master_seed, r, horizon)
        return r, rm
    except AdmissibilityViolation as exc:
        return r, exc


def _parallel_runs(timetable, rates, alighting, scenario, master_seed,
                   n_runs, horizon, jobs):
    from concurrent.futures import ProcessPoolExecutor
    tasks = [(timetable, rates, alighting, scenario, master_seed, r, horizon)
             for r in range(n_runs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_mc_task, tasks, chunksize=max(1, n_runs // (4 * jobs)))


def _acc_dict(sums, key, d):
    acc = sums.setdefault(key, {})
    for k, v in d.items():
        acc[k] = acc.get(k, 0.0) + v


def _acc_array(sums, key, arr):
    if key in sums:
        sums[key] += arr
    else:
        sums[key] = arr.copy()


def _mean_dict(acc, n):
    if not acc or n == 0:
        return {}
    return {k: v / n for k, v in acc.items()}


def _mean_array(acc, n):
    if acc is None or n == 0:
        return []
    return list(acc / n)
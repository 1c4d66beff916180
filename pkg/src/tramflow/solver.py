"""Transport solvers and the conservation audit.

Two interchangeable solvers:

* ``run_exact`` - event-driven: every tram is one atomic passenger mass
  moving along characteristics at the edge speed.  Arrival times are
  closed-form (entry + length/speed plus accrued stop delays), so the
  state only changes at stop events.  This is the production path.
* ``run_upwind`` - the left-sided upwind grid scheme on each edge, fed
  with the same realized boundary injections.  It exists as a
  cross-validation target: at CFL = 1 the scheme is an exact shift and
  must agree with the event solver to machine precision.

``mass_balance_audit`` closes the loop: arrivals in, alightings out,
queues and in-transit mass in between, residuals near zero or the run is
wrong.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (QueueState, StopEventRecord, TransferRecord, alight,
                       board, advance_queue)
from .errors import ConfigurationError
from .scenarios import dwell_delay

#: Minimum spacing enforced between consecutive departures on one edge when
#: delays would otherwise collapse or reorder them (no overtaking).
DEPARTURE_PUSH = 1e-6

DT_PLOT = 0.5  # trajectory sampling step, minutes


@dataclass
class TramSegment:
    """One traversal of one edge by one trip, with the mass it carried."""
    trip_id: str
    line: str
    edge: str
    enter: float
    exit: float
    onboard: float
    capacity: float
    seat_capacity: float


@dataclass
class TruncationRecord:
    """A trip the horizon cut off; carries its in-transit mass for audits."""
    trip_id: str
    time: float
    leg: int
    onboard: float
    reason: str = "horizon"


@dataclass
class EventLog:
    """Complete bookkeeping of one run."""
    stop_events: list = field(default_factory=list)
    transfers: list = field(default_factory=list)
    segments: list = field(default_factory=list)
    truncated: list = field(default_factory=list)
    arrivals_consumed: dict = field(default_factory=dict)
    final_queues: dict = field(default_factory=dict)
    horizon: float = 0.0


@dataclass
class MetricsInputs:
    """Everything the performance measures need from one run."""
    log: EventLog
    arrivals: dict          # pool id -> ArrivalStream
    network: object
    horizon: float


class _TripState:
    __slots__ = ("onboard", "leg", "delay", "done")

    def __init__(self):
        self.onboard = 0.0
        self.leg = 0          # next leg index to depart
        self.delay = 0.0      # actual minus scheduled, minutes
        self.done = False


class _EdgeGate:
    """Per-edge FIFO departure gate in scheduled order (no overtaking).

    Trips must leave an edge's tail in the order of their scheduled slots;
    a trip whose predecessor has not departed yet is parked and released
    the moment the predecessor commits, at least DEPARTURE_PUSH later.
    """
    __slots__ = ("order", "rank", "next_rank", "last_dep", "parked")

    def __init__(self, entries):
        # entries: [(sched_time, trip_id, leg)] sorted like the atom table
        self.order = entries
        self.rank = {(tid, leg): i for i, (_, tid, leg) in enumerate(entries)}
        self.next_rank = 0
        self.last_dep = None
        self.parked = {}

    def offer(self, trip_id, leg, ready):
        """Try to depart; returns committed times [(trip_id, leg, dep)].

        Empty result means the trip was parked.  A commit may release a
        chain of parked successors, all returned in departure order.
        """
        r = self.rank[(trip_id, leg)]
        if r != self.next_rank:
            self.parked[r] = (trip_id, leg, ready)
            return []
        out = []
        tid, lg, rdy = trip_id, leg, ready
        while True:
            dep = rdy if self.last_dep is None else max(
                rdy, self.last_dep + DEPARTURE_PUSH)
            out.append((tid, lg, dep))
            self.last_dep = dep
            self.next_rank += 1
            nxt = self.parked.pop(self.next_rank, None)
            if nxt is None:
                return out
            tid, lg, rdy = nxt


def _edge_gates(timetable):
    per_edge = {}
    for tr in timetable.trips:
        for leg, (eid, t) in enumerate(
                zip(tr.edges, timetable.leg_departures(tr))):
            per_edge.setdefault(eid, []).append((t, tr.trip_id, leg))
    gates = {}
    for eid, entries in per_edge.items():
        entries.sort(key=lambda e: (e[0], e[1]))
        gates[eid] = _EdgeGate(entries)
    return gates


def run_exact(timetable, arrivals, alighting, dwell_model=None,
              failures=None, horizon=None, emit_trajectories=False,
              dt_plot=DT_PLOT):
    """Event-driven push-forward run.

    :param arrivals: pool id -> ArrivalStream, one realization
    :param alighting: AlightingTable
    :param failures: {(trip_id, leg): extra delay minutes} or None
    :returns: (EventLog, trajectory rows, MetricsInputs)

    Stop protocol, fixed order: alight (full at trip end), transfer the
    remainder to the next leg, board from the queue's left limit at the
    arrival instant, then hold for dwell + breakdown delay and pass the
    departure gate.  Passengers arriving during the hold wait for the
    next service.
    """
    net = timetable.network
    horizon = timetable.horizon if horizon is None else float(horizon)
    failures = failures or {}

    queues = {}
    for pool in net.boarding_pools():
        if pool not in arrivals:
            raise ConfigurationError(f"no arrival stream for queue {pool!r}")
        queues[pool] = QueueState(pool)

    log = EventLog(horizon=horizon)
    traj = []
    states = {tr.trip_id: _TripState() for tr in timetable.trips}
    gates = _edge_gates(timetable)

    # Heap ordering (time, vertex, trip) is the documented tie-break.
    heap = []
    for tr in timetable.trips:
        tail = net.edges[tr.edges[0]].tail
        heapq.heappush(heap, (tr.start_time, tail, tr.trip_id))

    def commit_departures(committed, context):
        """Finish departures the gate released: records, segments, events."""
        for tid, leg, dep in committed:
            tr = timetable.by_trip[tid]
            st = states[tid]
            rec, t_arr, mass = context.pop((tid, leg))
            rec.hold = dep - t_arr
            sched = timetable.leg_departures(tr)[leg]
            st.delay = dep - sched
            edge = net.edges[tr.edges[leg]]
            exit_t = dep + edge.travel_time
            log.segments.append(TramSegment(
                tid, tr.line, edge.edge_id, dep, exit_t, mass,
                tr.capacity, tr.seat_capacity))
            if emit_trajectories:
                k0 = math.ceil(dep / dt_plot)
                k1 = math.floor(exit_t / dt_plot)
                for k in range(k0, k1 + 1):
                    t = k * dt_plot
                    traj.append((t, tid, edge.edge_id,
                                 edge.speed * (t - dep), mass, st.delay))
            st.leg = leg + 1
            heapq.heappush(heap, (exit_t, edge.head, tid))

    pending = {}   # (trip_id, leg) -> (record, arrival time, onboard)

    while heap:
        t, vertex, trip_id = heapq.heappop(heap)
        st = states[trip_id]
        if t > horizon:
            log.truncated.append(TruncationRecord(
                trip_id, t, st.leg, st.onboard))
            st.done = True
            continue
        tr = timetable.by_trip[trip_id]
        at_end = st.leg == len(tr.edges)
        in_edge = tr.edges[st.leg - 1] if st.leg > 0 else None

        alighted, remaining = alight(
            st.onboard, alighting.fraction(vertex, t), at_end)

        if at_end:
            sched = (timetable.leg_departures(tr)[-1]
                     + net.travel_time(tr.edges[-1]))
            log.stop_events.append(StopEventRecord(
                time=t, edge=None, trip_id=trip_id, arrivals=0.0,
                boarded=0.0, alighted=alighted, onboard_before=st.onboard,
                onboard_after=0.0, vertex=vertex, in_edge=in_edge,
                scheduled=sched, line=tr.line))
            st.onboard = 0.0
            st.done = True
            continue

        out_edge = tr.edges[st.leg]
        if in_edge is not None:
            log.transfers.append(TransferRecord(
                vertex, t, in_edge, out_edge, remaining))

        pool = net.pool_of(out_edge)
        q = queues[pool]
        q, added = advance_queue(q, arrivals[pool], q.time, t)
        boarded = board(q.size, tr.capacity, remaining)
        q.size -= boarded
        onboard_new = remaining + boarded

        d = dwell_delay(boarded, alighted, dwell_model) if dwell_model else 0.0
        f = failures.get((trip_id, st.leg), 0.0)
        ready = t + d + f

        rec = StopEventRecord(
            time=t, edge=out_edge, trip_id=trip_id, arrivals=added,
            boarded=boarded, alighted=alighted, onboard_before=st.onboard,
            onboard_after=onboard_new, dwell=d, vertex=vertex,
            in_edge=in_edge, failure=f, hold=d + f,
            scheduled=timetable.leg_departures(tr)[st.leg], line=tr.line,
            pool=pool)
        log.stop_events.append(rec)
        st.onboard = onboard_new

        pending[(trip_id, st.leg)] = (rec, t, onboard_new)
        committed = gates[out_edge].offer(trip_id, st.leg, ready)
        commit_departures(committed, pending)

    # Trips still parked behind a truncated predecessor never departed.
    for gate in gates.values():
        for tid, leg, ready in gate.parked.values():
            st = states[tid]
            log.truncated.append(TruncationRecord(
                tid, ready, leg, st.onboard, reason="parked"))
            pending.pop((tid, leg), None)

    for pool, q in queues.items():
        advance_queue(q, arrivals[pool], q.time, max(q.time, horizon))
        log.final_queues[pool] = q.size
        log.arrivals_consumed[pool] = float(q.consumed)

    inputs = MetricsInputs(log, dict(arrivals), net, horizon)
    return log, traj, inputs


@dataclass
class BalanceReport:
    ok: bool
    tol: float
    per_trip: dict
    per_queue: dict
    global_residual: float
    worst: float

    def render(self):
        n_t = sum(1 for v in self.per_trip.values() if abs(v) >= self.tol)
        n_q = sum(1 for v in self.per_queue.values() if abs(v) >= self.tol)
        head = "balance OK" if self.ok else "balance FAILED"
        return (f"{head}: worst residual {self.worst:.3e}, "
                f"{n_t} trips / {n_q} queues over tol, "
                f"global {self.global_residual:.3e}")


def mass_balance_audit(log, tol=1e-6):
    """Close the books on one run.

    Per trip: boarded - alighted ends up as the final onboard mass
    (zero unless truncated).  Per queue: arrivals - boarded is what still
    waits.  Globally: everything that arrived either alighted, still
    waits, or is still riding.
    """
    per_trip_b = {}
    per_trip_a = {}
    per_pool_b = {}
    for ev in log.stop_events:
        per_trip_b[ev.trip_id] = per_trip_b.get(ev.trip_id, 0.0) + ev.boarded
        per_trip_a[ev.trip_id] = per_trip_a.get(ev.trip_id, 0.0) + ev.alighted
        if ev.pool is not None:
            per_pool_b[ev.pool] = per_pool_b.get(ev.pool, 0.0) + ev.boarded

    in_transit = {}
    for rec in log.truncated:
        in_transit[rec.trip_id] = in_transit.get(rec.trip_id, 0.0) + rec.onboard

    per_trip = {}
    for tid in set(per_trip_b) | set(per_trip_a) | set(in_transit):
        per_trip[tid] = (per_trip_b.get(tid, 0.0) - per_trip_a.get(tid, 0.0)
                         - in_transit.get(tid, 0.0))

    per_queue = {}
    for pool, arrived in log.arrivals_consumed.items():
        per_queue[pool] = (arrived - per_pool_b.get(pool, 0.0)
                           - log.final_queues.get(pool, 0.0))

    total_arrived = sum(log.arrivals_consumed.values())
    total_alighted = sum(per_trip_a.values())
    total_queued = sum(log.final_queues.values())
    total_riding = sum(in_transit.values())
    gres = total_arrived - total_alighted - total_queued - total_riding

    residuals = list(per_trip.values()) + list(per_queue.values()) + [gres]
    worst = max((abs(r) for r in residuals), default=0.0)
    return BalanceReport(worst < tol, tol, per_trip, per_queue, gres, worst)


# ---------------------------------------------------------------------------
# Upwind grid solver


@dataclass
class EdgeGrid:
    """Grid evolution of one edge: cell masses over a uniform time grid.

    ``times`` has J+1 instants; ``totals[j]`` is the edge's total mass at
    instant j; ``outflow[j]`` the mass that left during step j-1 -> j
    (stamped at the step end), likewise ``inflow[j]``.  ``history`` keeps
    the full K-cell profile per instant when requested.
    """
    edge_id: str
    cells: int
    dx: float
    dt: float
    cfl: float
    times: np.ndarray
    totals: np.ndarray
    outflow: np.ndarray
    inflow: np.ndarray
    history: np.ndarray | None = None


@dataclass
class GridField:
    """run_upwind output: one EdgeGrid per simulated edge."""
    edges: dict
    horizon: float
    cfl: float

    def __getitem__(self, edge_id):
        return self.edges[edge_id]


def edge_inflows(log):
    """Boundary injections per edge realized by an exact run.

    Each committed departure puts one atomic mass onto its edge; this is
    the demand realization both solvers share.
    """
    out = {}
    for seg in log.segments:
        out.setdefault(seg.edge, []).append((seg.enter, seg.onboard))
    for lst in out.values():
        lst.sort()
    return out


def run_upwind(network, inflows, horizon, cfl=1.0, cells=100,
               keep_history=False, edges=None):
    """Left-sided upwind evolution of every edge, boundary-fed.

    Update per interior cell: m_i <- m_i - c (m_i - m_{i-1}) with
    c = w dt / dx = cfl.  The boundary cell receives the mass injected
    during the step through a ghost value scaled by 1/c, so each step
    injects exactly the window's mass whatever the CFL number.  Masses
    arriving in (t_j, t_j+1] enter during step j and are first visible at
    instant j+1; at c = 1 the scheme then reproduces the exact transport
    shift cell for cell.
    """
    if not 0.0 < cfl <= 1.0:
        raise ConfigurationError(
            f"CFL number {cfl:g} outside (0, 1] (stability bound)")
    if cells < 2:
        raise ConfigurationError("need at least 2 cells per edge")
    use = edges if edges is not None else sorted(inflows)
    result = {}
    for eid in use:
        e = network.edges[eid]
        dx = e.length / cells
        dt = cfl * dx / e.speed
        steps = int(math.ceil(horizon / dt - 1e-12))
        times = np.arange(steps + 1) * dt
        events = inflows.get(eid, ())

        window_mass = np.zeros(steps)
        for t, mass in events:
            j = int(np.searchsorted(times, t, side="left")) - 1
            if j < 0:
                j = 0
            if j < steps:
                window_mass[j] += mass

        m = np.zeros(cells)
        totals = np.zeros(steps + 1)
        outflow = np.zeros(steps + 1)
        inflow = np.zeros(steps + 1)
        hist = np.zeros((steps + 1, cells)) if keep_history else None
        if hist is not None:
            hist[0] = m
        for j in range(steps):
            out_mass = cfl * m[-1]
            m[1:] -= cfl * (m[1:] - m[:-1])   # rhs binds old values
            m[0] = (1.0 - cfl) * m[0] + window_mass[j]
            outflow[j + 1] = out_mass
            inflow[j + 1] = window_mass[j]
            totals[j + 1] = m.sum()
            if hist is not None:
                hist[j + 1] = m
        result[eid] = EdgeGrid(eid, cells, dx, dt, cfl, times, totals,
                               outflow, inflow, hist)
    return GridField(result, horizon, cfl)


def exact_grid_occupancy(log, edge_id, times):
    """Exact per-instant edge mass under the grid's visibility convention.

    A tram entering at t is first counted at the first grid instant >= t
    and last counted at the instant just before the first >= its exit,
    matching where run_upwind places the same mass.  At CFL = 1 the two
    curves must agree to machine precision.
    """
    occ = np.zeros(len(times))
    for seg in log.segments:
        if seg.edge != edge_id:
            continue
        i0 = int(np.searchsorted(times, seg.enter, side="left"))
        i1 = int(np.searchsorted(times, seg.exit, side="left"))
        occ[i0:i1] += seg.onboard
    return occ

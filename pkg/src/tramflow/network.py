"""Directed tram network, trip-based timetables, and schedule admissibility.

The network is a directed graph whose vertices are stops and whose edges are
track segments with a length (km) and a constant running speed (km/min).
Service is described by trips: an ordered edge path plus a departure time and
fixed passenger capacities.  Everything else -- per-edge capacity functions,
vertex routing maps, admissibility -- is derived from the trip list, so the
derived views are consistent by construction and validation reduces to a scan
over scheduled events.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .errors import ConfigurationError, NoArrival

# Tolerance for comparing event times, in minutes.
TIME_TOL = 1e-9


class _Terminate:
    """Sentinel: the arriving trip ends at this vertex."""

    __slots__ = ()

    def __repr__(self):
        return "TERMINATE"


TERMINATE = _Terminate()


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str = ""
    is_start: bool = False
    is_terminal: bool = False


@dataclass(frozen=True)
class Edge:
    edge_id: str
    tail: str
    head: str
    length: float  # km
    speed: float   # km/min

    @property
    def travel_time(self) -> float:
        """Running time tail -> head in minutes."""
        return self.length / self.speed


class TramNetwork:
    """Stops, directed edges, incidence maps, and boarding-queue pools.

    Each edge has exactly one boarding queue at its tail stop.  By default
    every edge owns its queue; a stop may instead declare a shared pool over
    several of its outgoing edges (passengers waiting in a shared pool board
    whichever member edge sees the next departure).
    """

    def __init__(self, stops, edges, queue_pools=None):
        """:param stops: iterable of Stop
        :param edges: iterable of Edge
        :param queue_pools: optional mapping pool_id -> iterable of edge ids;
            every listed edge must share one tail stop, and an edge may belong
            to at most one declared pool.
        """
        stops = list(stops)
        self.stops = {s.stop_id: s for s in stops}
        if len(self.stops) != len(stops):
            raise ConfigurationError("duplicate stop id")
        self.edges = {}
        self.in_edges = {sid: [] for sid in self.stops}
        self.out_edges = {sid: [] for sid in self.stops}
        for e in edges:
            if e.edge_id in self.edges:
                raise ConfigurationError(f"duplicate edge id {e.edge_id!r}")
            if e.tail not in self.stops or e.head not in self.stops:
                raise ConfigurationError(
                    f"edge {e.edge_id!r} references unknown stop"
                )
            if not (e.length > 0.0 and e.speed > 0.0):
                raise ConfigurationError(
                    f"edge {e.edge_id!r} needs positive length and speed"
                )
            self.edges[e.edge_id] = e
            self.in_edges[e.head].append(e.edge_id)
            self.out_edges[e.tail].append(e.edge_id)
        for sid, stop in self.stops.items():
            if not self.in_edges[sid] and not stop.is_start:
                raise ConfigurationError(f"source stop {sid!r} must be flagged start")
            if not self.out_edges[sid] and not stop.is_terminal:
                raise ConfigurationError(
                    f"sink stop {sid!r} must be flagged terminal"
                )
        self._pools = {}      # pool id -> tuple of member edge ids
        self._pool_of = {}    # edge id -> pool id
        declared = dict(queue_pools or {})
        for pid, members in declared.items():
            members = tuple(members)
            if not members:
                raise ConfigurationError(f"queue pool {pid!r} has no members")
            tails = {self.edges[m].tail for m in members if m in self.edges}
            if len(members) != len(set(members)) or any(
                m not in self.edges for m in members
            ):
                raise ConfigurationError(f"queue pool {pid!r} lists unknown edge")
            if len(tails) != 1:
                raise ConfigurationError(
                    f"queue pool {pid!r} must group edges at a single stop"
                )
            for m in members:
                if m in self._pool_of:
                    raise ConfigurationError(f"edge {m!r} in two queue pools")
                self._pool_of[m] = pid
            self._pools[pid] = members
        for eid in self.edges:
            if eid not in self._pool_of:
                self._pools[eid] = (eid,)
                self._pool_of[eid] = eid

    def boarding_pools(self):
        """Mapping pool id -> member edge ids (singletons by default)."""
        return dict(self._pools)

    def pool_of(self, edge_id):
        return self._pool_of[edge_id]

    def pool_stop(self, pool_id):
        """Stop at which a queue pool waits."""
        return self.edges[self._pools[pool_id][0]].tail

    def travel_time(self, edge_id):
        return self.edges[edge_id].travel_time


@dataclass(frozen=True)
class Trip:
    """One scheduled tram journey along a directed edge path.

    Capacities are trip constants, which is exactly the "no splitting, no
    merging" capacity-conservation rule: the derived capacity entries of a
    trip agree across all of its edges.
    """
    trip_id: str
    line: str
    edges: tuple
    start_time: float     # departure at the tail of edges[0], minutes
    capacity: float       # total passenger spaces tau
    seat_capacity: float  # tau_seat <= tau


@dataclass(frozen=True)
class CapacityAtom:
    """One nonzero value of the derived per-edge capacity function."""
    time: float
    capacity: float
    seat_capacity: float
    trip_id: str


@dataclass
class Violation:
    rule: str
    message: str
    time: float | None = None
    vertex: str | None = None
    edge: str | None = None
    trips: tuple = ()


@dataclass
class AdmissibilityReport:
    ok: bool
    violations: list = field(default_factory=list)

    def by_rule(self, rule):
        return [v for v in self.violations if v.rule == rule]

    def render(self):
        lines = ["admissible: no violations"] if self.ok else [
            f"NOT admissible: {len(self.violations)} violation(s)"
        ]
        for v in self.violations:
            where = ", ".join(
                s for s in (
                    f"t={v.time:.9g}" if v.time is not None else "",
                    f"vertex={v.vertex}" if v.vertex else "",
                    f"edge={v.edge}" if v.edge else "",
                    f"trips={'/'.join(v.trips)}" if v.trips else "",
                ) if s
            )
            lines.append(f"  [{v.rule}] {v.message} ({where})")
        return "\n".join(lines)


class Timetable:
    """A trip list over a network, with derived per-edge schedule views.

    The horizon is the end of the simulated day in minutes; peak_window tags
    the daytime interval whose trips the frequency scenario builder may
    regenerate.
    """

    def __init__(self, network, trips, horizon=1440.0,
                 peak_window=(300.0, 1260.0)):
        self.network = network
        self.horizon = float(horizon)
        self.peak_window = (float(peak_window[0]), float(peak_window[1]))
        self.trips = sorted(trips, key=lambda tr: (tr.start_time, tr.trip_id))
        seen = set()
        for tr in self.trips:
            if tr.trip_id in seen:
                raise ConfigurationError(f"duplicate trip id {tr.trip_id!r}")
            seen.add(tr.trip_id)
            self._check_trip(tr)
        self._edge_atoms = None
        self._leg_times = {}
        self.by_trip = {tr.trip_id: tr for tr in self.trips}

    def _check_trip(self, tr):
        net = self.network
        if not tr.edges:
            raise ConfigurationError(f"trip {tr.trip_id!r} has no edges")
        for eid in tr.edges:
            if eid not in net.edges:
                raise ConfigurationError(
                    f"trip {tr.trip_id!r} uses unknown edge {eid!r}"
                )
        for a, b in zip(tr.edges, tr.edges[1:]):
            if net.edges[a].head != net.edges[b].tail:
                raise ConfigurationError(
                    f"trip {tr.trip_id!r}: edges {a!r}->{b!r} do not connect"
                )

    def replace_trips(self, trips):
        """New timetable sharing network/horizon/peak tagging."""
        return Timetable(self.network, trips, self.horizon, self.peak_window)

    def with_horizon(self, horizon):
        return Timetable(self.network, self.trips, horizon, self.peak_window)

    def leg_departures(self, trip):
        """Scheduled (undelayed) departure time at each edge of the trip."""
        got = self._leg_times.get(trip.trip_id)
        if got is None:
            times = [trip.start_time]
            for eid in trip.edges[:-1]:
                times.append(times[-1] + self.network.travel_time(eid))
            got = self._leg_times[trip.trip_id] = tuple(times)
        return got

    def _atoms(self):
        if self._edge_atoms is None:
            per_edge = {}
            for tr in self.trips:
                for eid, t in zip(tr.edges, self.leg_departures(tr)):
                    per_edge.setdefault(eid, []).append(
                        CapacityAtom(t, tr.capacity, tr.seat_capacity,
                                     tr.trip_id)
                    )
            for atoms in per_edge.values():
                atoms.sort(key=lambda a: (a.time, a.trip_id))
            self._edge_atoms = per_edge
        return self._edge_atoms

    def edge_schedule(self, edge_id):
        return self._atoms().get(edge_id, [])


def derive_capacity_function(timetable, edge_id):
    """Atomic capacity function of one edge: sorted nonzero entries.

    One entry per trip traversing the edge, keyed by the trip's scheduled
    departure time along it.  Ties are left in place here; they are reported
    as admissibility violations by validate_schedule.
    """
    if edge_id not in timetable.network.edges:
        raise ConfigurationError(f"unknown edge {edge_id!r}")
    return list(timetable.edge_schedule(edge_id))


def _leg_index(timetable, trip, edge_id, leg_time):
    """Leg position of a trip's traversal of edge_id departing at leg_time."""
    for k, (eid, t) in enumerate(zip(trip.edges,
                                     timetable.leg_departures(trip))):
        if eid == edge_id and abs(t - leg_time) <= TIME_TOL:
            return k
    raise ConfigurationError(
        f"trip {trip.trip_id!r} has no leg on {edge_id!r} at t={leg_time:g}"
    )


def _arrival_lookup(timetable, in_edge, t):
    """Trips whose scheduled arrival at the head of in_edge is ~t."""
    atoms = timetable.edge_schedule(in_edge)
    travel = timetable.network.travel_time(in_edge)
    times = [a.time + travel for a in atoms]
    lo = bisect.bisect_left(times, t - TIME_TOL)
    hi = bisect.bisect_right(times, t + TIME_TOL)
    return [atoms[i] for i in range(lo, hi)]


def route_through_vertex(timetable, vertex, in_edge, t):
    """Routing decision at a vertex: continuation edge of the arriving trip.

    Returns the out-edge id, or TERMINATE when the trip ends here.  Raises
    NoArrival when no trip reaches the vertex via in_edge at time t (the
    routing map's value is the empty set off schedule).
    """
    net = timetable.network
    if in_edge not in net.in_edges.get(vertex, ()):
        raise ConfigurationError(f"{in_edge!r} does not enter {vertex!r}")
    hits = _arrival_lookup(timetable, in_edge, t)
    if not hits:
        raise NoArrival(f"no trip on {in_edge!r} arriving at {vertex!r} at t={t:g}")
    outs = []
    for atom in hits:
        tr = timetable.by_trip[atom.trip_id]
        k = _leg_index(timetable, tr, in_edge, atom.time)
        outs.append(TERMINATE if k == len(tr.edges) - 1 else tr.edges[k + 1])
    real = [o for o in outs if o is not TERMINATE]
    if len(real) != len(set(real)):
        from .errors import AdmissibilityViolation
        raise AdmissibilityViolation(
            f"two trips claim one out-edge at {vertex!r}, t={t:g}"
        )
    return outs[0]


def inverse_route(timetable, vertex, out_edge, t):
    """Unique in-edge feeding a departure on out_edge at time t, else None.

    None covers both a fresh trip originating at the vertex (empty inflow)
    and the absence of any departure at t.
    """
    net = timetable.network
    if out_edge not in net.out_edges.get(vertex, ()):
        raise ConfigurationError(f"{out_edge!r} does not leave {vertex!r}")
    atoms = timetable.edge_schedule(out_edge)
    times = [a.time for a in atoms]
    lo = bisect.bisect_left(times, t - TIME_TOL)
    hi = bisect.bisect_right(times, t + TIME_TOL)
    for i in range(lo, hi):
        tr = timetable.by_trip[atoms[i].trip_id]
        k = _leg_index(timetable, tr, out_edge, atoms[i].time)
        if k > 0:
            return tr.edges[k - 1]
    return None


def validate_schedule(network, timetable):
    """Check Definition-2.2-style admissibility of a timetable.

    Rules checked: capacity positivity/finiteness, injectivity except for the
    empty set (no two departures on one edge at one time, which covers two
    arrivals continuing onto the same out-edge), capacity conservation along
    each trip, and termination only at terminal-flagged stops.
    """
    violations = []
    for tr in timetable.trips:
        cap_ok = tr.capacity > 0 and tr.capacity != float("inf")
        if not cap_ok:
            violations.append(Violation(
                "capacity", f"trip {tr.trip_id!r} capacity must be finite "
                f"and positive, got {tr.capacity!r}", trips=(tr.trip_id,)))
        if not 0 <= tr.seat_capacity <= tr.capacity:
            violations.append(Violation(
                "capacity", f"trip {tr.trip_id!r} seat capacity "
                f"{tr.seat_capacity!r} outside [0, tau]", trips=(tr.trip_id,)))
        end = network.edges[tr.edges[-1]].head
        if not network.stops[end].is_terminal:
            violations.append(Violation(
                "termination", f"trip {tr.trip_id!r} ends at {end!r}, which "
                "is not a terminal stop", vertex=end, trips=(tr.trip_id,)))
        # Constant trip capacity makes conservation across vertices
        # structural; verify it on the derived view anyway.
        legs = timetable.leg_departures(tr)
        for eid, t in zip(tr.edges, legs):
            atom = next(a for a in timetable.edge_schedule(eid)
                        if a.trip_id == tr.trip_id and abs(a.time - t) <= TIME_TOL)
            if atom.capacity != tr.capacity:
                violations.append(Violation(
                    "conservation", f"trip {tr.trip_id!r} capacity changes "
                    f"along its path at edge {eid!r}", edge=eid, time=t,
                    trips=(tr.trip_id,)))
    for eid in network.edges:
        atoms = timetable.edge_schedule(eid)
        for a, b in zip(atoms, atoms[1:]):
            if b.time - a.time <= TIME_TOL:
                violations.append(Violation(
                    "injectivity",
                    f"two departures on edge {eid!r} at t={b.time:.9g} "
                    "(routing map not injective except for the empty set)",
                    time=b.time, vertex=network.edges[eid].tail, edge=eid,
                    trips=(a.trip_id, b.trip_id)))
    return AdmissibilityReport(ok=not violations, violations=violations)

"""Disruption and service-pattern scenarios.

Covers four mechanisms that perturb a baseline timetable or a run:

* exchange-volume dwell delays (threshold model, two over-threshold
  terms behind a mode flag),
* random tram breakdowns sampled per stop event,
* trip cancellations (half evenly spaced over the day, half uniform),
* service-pattern rewrites: peak-headway regeneration and per-line
  departure shifts.

Timetable rewrites are pure functions returning new timetables; breakdown
schedules are sampled per run from a dedicated random stream.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .errors import ConfigurationError

MODE_SUM = "sum"
MODE_DIFF = "diff"

#: Default breakdown mix: rare long stops plus frequent short ones.
DEFAULT_FAILURE_SPECS = None  # filled in below FailureSpec


@dataclass
class DwellDelayModel:
    """Extra stop time when the passenger exchange exceeds a threshold.

    ``mode`` selects the over-threshold term: "sum" uses boarded+alighted
    (matching the trigger condition), "diff" uses boarded-alighted.
    Negative values can only arise in "diff" mode; they are clamped to
    zero and tallied.
    """
    threshold: float = 50.0
    slope: float = 1.0 / 50.0  # minutes per passenger over threshold
    mode: str = MODE_SUM
    clamped: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.threshold < 0 or self.slope < 0:
            raise ConfigurationError("dwell threshold and slope must be >= 0")
        if self.mode not in (MODE_SUM, MODE_DIFF):
            raise ConfigurationError(f"unknown dwell mode {self.mode!r}")


def dwell_delay(boarded, alighted, model):
    """Dwell delay in minutes for one stop event."""
    if boarded < 0 or alighted < 0:
        raise ConfigurationError("boarded and alighted must be >= 0")
    if boarded + alighted <= model.threshold:
        return 0.0
    if model.mode == MODE_SUM:
        base = boarded + alighted - model.threshold
    else:
        base = boarded - alighted - model.threshold
    delay = model.slope * base
    if delay < 0.0:
        model.clamped += 1
        return 0.0
    return delay


@dataclass(frozen=True)
class FailureSpec:
    """One independent breakdown mode: per-stop-event probability, delay."""
    probability: float
    delay: float  # minutes

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigurationError("failure probability outside [0, 1]")
        if self.delay < 0:
            raise ConfigurationError("failure delay must be >= 0")


DEFAULT_FAILURE_SPECS = (FailureSpec(0.005, 8.0), FailureSpec(0.01, 4.0))


@dataclass(frozen=True)
class DisruptionPlan:
    cancellation_rate: float = 0.0
    failures: tuple = DEFAULT_FAILURE_SPECS
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.cancellation_rate <= 1.0:
            raise ConfigurationError("cancellation rate outside [0, 1]")
        object.__setattr__(self, "failures", tuple(self.failures))


@dataclass(frozen=True)
class Scenario:
    """A named bundle of perturbations applied to a baseline timetable.

    ``headway`` regenerates peak-window departures; ``shifts`` moves whole
    lines by minutes; ``plan`` adds cancellations and breakdowns; ``dwell``
    switches on exchange-volume delays.  All default to off.
    """
    name: str = "baseline"
    dwell: DwellDelayModel | None = None
    plan: DisruptionPlan | None = None
    headway: float | None = None
    shifts: tuple = ()   # ((line, minutes), ...)
    measurement_stop: str | None = None


def service_trip_id(line, start_time):
    """Canonical id for generated departures, stable across regeneration.

    Encodes the scheduled departure in tenths of minutes so that rebuilding
    a service pattern at the same times reproduces the same ids.
    """
    return f"{line}-d{int(round(start_time * 10.0)):05d}"


def inject_failures(timetable, plan, rng):
    """Sample one run's breakdown schedule.

    Every potential departure event of every trip (trip, leg index) draws
    once against each failure spec; hits accumulate.  Draw order is fixed
    by the timetable's trip order, so a given stream position always feeds
    the same event.  Returns {(trip_id, leg): delay_minutes}, hits only.
    """
    schedule = {}
    if not plan.failures:
        return schedule
    for tr in timetable.trips:
        for leg in range(len(tr.edges)):
            delay = 0.0
            for spec in plan.failures:
                if rng.random() < spec.probability:
                    delay += spec.delay
            if delay > 0.0:
                schedule[(tr.trip_id, leg)] = delay
    return schedule


def apply_cancellations(timetable, rate, rng):
    """Remove floor(rate * ntrips) trips.

    Half of the removals are evenly strided over the day's departure order
    (deterministic), the rest drawn uniformly without replacement from what
    is left.  Removal cannot create admissibility violations.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError("cancellation rate outside [0, 1]")
    trips = timetable.trips
    n = int(math.floor(rate * len(trips) + 1e-9))
    if n == 0:
        return timetable
    removed = set()
    n_even = n // 2
    if n_even:
        stride = len(trips) // n_even
        removed.update(k * stride for k in range(n_even))
    rest = [i for i in range(len(trips)) if i not in removed]
    n_rand = n - n_even
    if n_rand:
        picks = rng.choice(len(rest), size=n_rand, replace=False)
        removed.update(rest[int(j)] for j in picks)
    survivors = [tr for i, tr in enumerate(trips) if i not in removed]
    return timetable.replace_trips(survivors)


def build_frequency_scenario(base, headway):
    """Regenerate each line's peak-window departures at the given headway.

    The first peak departure of a line anchors the new grid and donates the
    route and capacities; departures run anchor, anchor+h, ... while inside
    the window (a final partial slot is dropped).  Off-peak trips are kept
    as they are.  Regenerating at the dataset's own headway is the identity.
    """
    if headway <= 0:
        raise ConfigurationError("headway must be positive")
    lo, hi = base.peak_window
    by_line = {}
    for tr in base.trips:
        by_line.setdefault(tr.line, []).append(tr)
    out = []
    for line, trs in by_line.items():
        peak = [t for t in trs if lo <= t.start_time < hi]
        if not peak:
            out.extend(trs)
            continue
        out.extend(t for t in trs if not lo <= t.start_time < hi)
        tmpl = peak[0]
        k = 0
        while True:
            t = tmpl.start_time + k * headway
            if t >= hi:
                break
            out.append(dataclasses.replace(
                tmpl, trip_id=service_trip_id(line, t), start_time=t))
            k += 1
    return base.replace_trips(out)


def shift_line(timetable, line, minutes):
    """Move every departure of one line by a constant offset in minutes."""
    hit = False
    trips = []
    for tr in timetable.trips:
        if tr.line == line:
            tr = dataclasses.replace(tr, start_time=tr.start_time + minutes)
            hit = True
        trips.append(tr)
    if not hit:
        raise ConfigurationError(f"no trips on line {line!r} to shift")
    return timetable.replace_trips(trips)


def effective_timetable(base, scenario, rng=None):
    """Apply a scenario's timetable-level rewrites in canonical order.

    Order: headway regeneration, then line shifts, then cancellations.
    Cancellations need the run's cancellation stream; breakdowns and dwell
    delays act inside the solver, not here.
    """
    tt = base
    if scenario.headway is not None:
        tt = build_frequency_scenario(tt, scenario.headway)
    for line, minutes in scenario.shifts:
        tt = shift_line(tt, line, minutes)
    plan = scenario.plan
    if plan is not None and plan.cancellation_rate > 0.0:
        if rng is None:
            raise ConfigurationError(
                "cancellation rate set but no random stream supplied")
        tt = apply_cancellations(tt, plan.cancellation_rate, rng)
    return tt

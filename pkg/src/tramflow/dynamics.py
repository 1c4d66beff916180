"""Stop-event microdynamics: queues, boarding, alighting, bookkeeping records.

Passenger counts are real-valued throughout (alighting fractions produce
non-integers); no rounding happens anywhere in the balance chain.  At a stop
the order is fixed: alight first, then board from the queue's left limit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

COUNT_TOL = 1e-9


@dataclass
class QueueState:
    """Waiting passengers of one boarding queue.

    `size` is the left limit at `time`: arrivals strictly before `time` are
    counted, an arrival exactly at `time` is not (it just missed the tram).
    `consumed` indexes into the queue's arrival stream.
    """
    pool: str
    size: float = 0.0
    time: float = 0.0
    consumed: int = 0


@dataclass
class StopEventRecord:
    """One passenger exchange: a tram serving one stop at one time."""
    time: float
    edge: str | None          # out-edge departed onto; None at trip end
    trip_id: str
    arrivals: float           # queue arrivals since the previous drain
    boarded: float
    alighted: float
    onboard_before: float
    onboard_after: float
    dwell: float = 0.0        # exchange-volume dwell delay, minutes
    vertex: str = ""
    in_edge: str | None = None
    failure: float = 0.0      # injected breakdown delay, minutes
    hold: float = 0.0         # total stop hold: dwell + failure + queueing push
    scheduled: float = 0.0    # undelayed departure slot of this leg
    line: str = ""
    pool: str | None = None   # boarding queue drained (None at trip end)


@dataclass
class TransferRecord:
    """Mass carried through a vertex from an in-edge to the next edge."""
    vertex: str
    time: float
    in_edge: str
    out_edge: str
    mass: float


def alight(onboard, r_a, is_trip_end=False):
    """Split an arriving tram's load into (alighted, remaining).

    The alighting fraction is forced to 1 at the trip's final stop.
    """
    if not 0.0 <= r_a <= 1.0:
        raise ConfigurationError(f"alighting fraction {r_a!r} outside [0, 1]")
    if onboard < 0:
        raise ConfigurationError("onboard must be >= 0")
    frac = 1.0 if is_trip_end else r_a
    alighted = frac * onboard
    return alighted, onboard - alighted


def board(queue_left_limit, capacity, onboard_after_alight):
    """Passengers admitted: min(queue, remaining capacity), never negative."""
    if queue_left_limit < -COUNT_TOL:
        raise ConfigurationError("queue size must be >= 0")
    if onboard_after_alight > capacity + COUNT_TOL:
        raise RuntimeError(
            "onboard exceeds capacity before boarding (invariant breach)"
        )
    boarded = min(queue_left_limit, capacity - onboard_after_alight)
    return boarded if boarded > 0.0 else 0.0


def advance_queue(queue, arrival_stream, from_t, to_t):
    """Add the arrivals in [from_t, to_t) to the queue (left limit at to_t).

    No boarding may occur inside the window; boarding is applied separately
    at event times by the caller.
    """
    if to_t < from_t - COUNT_TOL:
        raise ValueError(f"time reversal: {from_t:g} -> {to_t:g}")
    if abs(from_t - queue.time) > COUNT_TOL:
        raise ValueError("from_t does not match the queue's last update")
    j = int(np.searchsorted(arrival_stream.times, to_t, side="left"))
    added = j - queue.consumed
    queue.size += added
    queue.consumed = j
    queue.time = to_t
    return queue, float(added)

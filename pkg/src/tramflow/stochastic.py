"""Passenger arrival processes: hourly rate tables and thinning sampler.

Arrivals at each boarding queue follow an inhomogeneous Poisson process whose
intensity is piecewise constant on hourly intervals.  Sampling uses thinning:
candidate points from a homogeneous process at the rate maximum, each kept
with probability lambda(t)/lambda_max.

A compiled kernel is used when the extension built; the pure-Python fallback
produces bit-identical streams (same draw order from the same generator).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

try:
    from ._thinning import sample_thinned as _sample_thinned
    KERNEL_BACKEND = "compiled"
except ImportError:  # extension not built
    from ._thinning_py import sample_thinned as _sample_thinned
    KERNEL_BACKEND = "pure-python"

#: RNG family used everywhere; recorded in reports for reproducibility.
RNG_FAMILY = "pcg64"

# Substream namespace offsets under a run's spawn key.
_STREAM_FAILURES = 1 << 20
_STREAM_CANCELLATIONS = (1 << 20) + 1


def substream(master_seed, *key):
    """Independent, reproducible generator for a (run, purpose) key path."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.PCG64(ss))


def run_streams(master_seed, run_index, pool_ids):
    """Per-queue arrival generators plus failure/cancellation generators.

    Each (queue, run) pair gets its own substream so queues are pairwise
    independent and any single queue can be resampled in isolation.
    """
    arrive = {
        pid: substream(master_seed, run_index, i)
        for i, pid in enumerate(sorted(pool_ids))
    }
    failures = substream(master_seed, run_index, _STREAM_FAILURES)
    cancels = substream(master_seed, run_index, _STREAM_CANCELLATIONS)
    return arrive, failures, cancels


class RateTable:
    """Per-queue hourly arrival intensities, normalized to passengers/min.

    Keys are boarding-queue ids (edge ids, or declared pool ids); values are
    24-entry arrays.  Rates attach to outgoing edges; stop-level input rows
    are split across the stop's out-edges by the loader before they reach
    this type.
    """

    HOURS = 24

    def __init__(self, rates):
        self._rates = {}
        for key, arr in rates.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != (self.HOURS,):
                raise ConfigurationError(
                    f"rate table for {key!r} needs {self.HOURS} hourly values"
                )
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigurationError(
                    f"rates for {key!r} must be finite and >= 0"
                )
            self._rates[key] = arr
        self.keys = sorted(self._rates)

    def rates_per_min(self, key):
        got = self._rates.get(key)
        if got is None:
            raise ConfigurationError(f"no rates for queue {key!r}")
        return got

    def pooled(self, members):
        """Combined intensity of a shared queue pool (sum over member edges)."""
        total = np.zeros(self.HOURS)
        for m in members:
            got = self._rates.get(m)
            if got is not None:
                total += got
        return total

    def has(self, key):
        return key in self._rates


@dataclass(frozen=True)
class ArrivalStream:
    """Sorted realized arrival times for one queue over [0, horizon]."""
    key: str
    times: np.ndarray
    horizon: float

    def __len__(self):
        return len(self.times)


def _lambda_max(rates, t_end):
    hours = min(len(rates), int(t_end / 60.0) + 1)
    return float(np.max(rates[:hours])) if hours > 0 else 0.0


def sample_arrivals(rates, key, t_end, rng):
    """Thinning sampler for one queue: draw exponential(lam_max) inter-times,
    keep each candidate t with probability lambda(t)/lam_max, stop past t_end.

    :param rates: 24 hourly intensities in passengers/min (or a RateTable)
    :param key: queue id (stream label; selects the row of a RateTable)
    :param t_end: horizon in minutes, > 0
    :param rng: numpy Generator substream owned by this (queue, run)
    """
    if isinstance(rates, RateTable):
        rates = rates.rates_per_min(key)
    rates = np.ascontiguousarray(rates, dtype=np.float64)
    if t_end <= 0:
        raise ConfigurationError("horizon must be positive")
    lam_max = _lambda_max(rates, t_end)
    if lam_max <= 0.0:
        times = np.empty(0, dtype=np.float64)
    else:
        times = _sample_thinned(rng, rates / lam_max, lam_max, t_end)
    return ArrivalStream(key=key, times=times, horizon=float(t_end))


def cumulative_arrivals(stream, t):
    """Number of arrivals at or before t (right-continuous step count)."""
    if not 0.0 <= t <= stream.horizon:
        raise ValueError(f"t={t:g} outside [0, {stream.horizon:g}]")
    return int(np.searchsorted(stream.times, t, side="right"))


class AlightingTable:
    """Hourly alighting fractions r_a per stop (deterministic demand side).

    Stops without data alight nobody; trip-end stops are forced to full
    alighting by the solver regardless of this table.
    """

    HOURS = 24

    def __init__(self, fractions):
        self._frac = {}
        for stop, arr in fractions.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != (self.HOURS,):
                raise ConfigurationError(
                    f"alighting table for {stop!r} needs "
                    f"{self.HOURS} hourly values"
                )
            if np.any(arr < 0) or np.any(arr > 1):
                raise ConfigurationError(
                    f"alighting fractions for {stop!r} must lie in [0, 1]"
                )
            self._frac[stop] = arr

    def fraction(self, stop, t):
        got = self._frac.get(stop)
        if got is None:
            return 0.0
        hour = int(t / 60.0)
        if hour < 0:
            hour = 0
        elif hour > self.HOURS - 1:
            hour = self.HOURS - 1
        return float(got[hour])

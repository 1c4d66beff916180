import numpy as np
import pytest

from tramflow import fileio
from tramflow.network import Edge, Stop, Timetable, TramNetwork, Trip
from tramflow.stochastic import ArrivalStream


@pytest.fixture(scope="session")
def toy_line():
    return fileio.load_dataset("toy-line")


@pytest.fixture(scope="session")
def junction_fixture():
    return fileio.load_dataset("example-2-1")


@pytest.fixture(scope="session")
def mannheim():
    return fileio.load_dataset("mannheim-line1")


@pytest.fixture(scope="session")
def feuerwache():
    return fileio.load_dataset("feuerwache-network")


def chain_network(n_edges=2, length=1.0, speed=1.0, terminal=True):
    """s0 -> s1 -> ... -> sN, unit-speed unless told otherwise."""
    stops = [Stop("s0", "s0", is_start=True)]
    for i in range(1, n_edges + 1):
        stops.append(Stop(f"s{i}", f"s{i}",
                          is_terminal=(terminal and i == n_edges)))
    edges = [Edge(f"e{i}", f"s{i}", f"s{i+1}", length, speed)
             for i in range(n_edges)]
    return TramNetwork(stops, edges)


def chain_timetable(net, starts, capacity=50.0, seats=30.0, line="L",
                    horizon=200.0):
    eids = sorted(net.edges, key=lambda e: int(e[1:]))
    trips = [Trip(f"{line}{k}", line, tuple(eids), float(t), capacity, seats)
             for k, t in enumerate(starts)]
    return Timetable(net, trips, horizon=horizon)


def stream(pool, times, horizon=200.0):
    return ArrivalStream(pool, np.asarray(sorted(times), dtype=float),
                         float(horizon))

"""tramflow: passenger flow simulation on tram networks.

Trams carry atomic passenger masses along a directed metric graph under a
validated timetable; passengers arrive at boarding queues following hourly
Poisson intensities, board up to capacity, and alight by hourly fractions.
The exact event solver transports masses along characteristics; an upwind
grid solver provides an independent cross-check.  Scenario layers add dwell
delays, breakdowns, cancellations, and service-pattern changes; the metrics
layer integrates waiting and standing times exactly and aggregates seeded
Monte Carlo replications.
"""

__version__ = "0.1.0"

from .errors import AdmissibilityViolation, ConfigurationError, NoArrival
from .network import (AdmissibilityReport, Edge, Stop, TramNetwork, Trip,
                      Timetable, TERMINATE, derive_capacity_function,
                      inverse_route, route_through_vertex, validate_schedule)
from .stochastic import (AlightingTable, ArrivalStream, RateTable,
                         KERNEL_BACKEND, RNG_FAMILY, cumulative_arrivals,
                         sample_arrivals)
from .dynamics import QueueState, StopEventRecord, TransferRecord
from .scenarios import (DisruptionPlan, DwellDelayModel, FailureSpec,
                        Scenario, apply_cancellations,
                        build_frequency_scenario, dwell_delay,
                        effective_timetable, inject_failures, shift_line)
from .solver import (EventLog, GridField, MetricsInputs, TramSegment,
                     edge_inflows, exact_grid_occupancy, mass_balance_audit,
                     run_exact, run_upwind)
from .metrics import (MonteCarloReport, RunMetrics, capacity_utilization,
                      compute_run_metrics, monte_carlo, nearest_rank,
                      simulate_run, total_standing_time, total_waiting_time)

__all__ = [name for name in dir() if not name.startswith("_")]
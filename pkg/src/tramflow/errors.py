"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """An input document, table, or parameter cannot be used as given."""


class AdmissibilityViolation(Exception):
    """A timetable operation would break the routing rules (same-edge tie etc.)."""


class NoArrival(Exception):
    """No tram reaches the queried vertex via the given edge at the given time."""

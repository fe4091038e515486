"""Exception hierarchy shared by all htmsp modules."""


class HtmError(Exception):
    pass


class ConfigError(HtmError, ValueError):
    """A configuration value violates one of its invariants."""


class InputError(HtmError, ValueError):
    """Data handed to an operation has the wrong shape, range or format."""


class ComputationError(HtmError, ArithmeticError):
    """A derived quantity cannot be computed from the given records."""

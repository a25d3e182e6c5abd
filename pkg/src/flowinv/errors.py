"""Exception hierarchy; `exit_code` maps onto the CLI exit-code contract."""


class FlowInvError(Exception):
    """Base class for all flowinv errors."""

    exit_code = 1


class InvalidArgumentError(FlowInvError):
    """Bad argument to a library operation."""

    exit_code = 1


class ConfigError(FlowInvError):
    """Malformed or inconsistent configuration."""

    exit_code = 1


class MissingInputError(FlowInvError):
    """A referenced file (checkpoint, dataset, config) does not exist."""

    exit_code = 2


class CheckFailedError(FlowInvError):
    """An internal invariant check failed during a CLI run."""

    exit_code = 3


class NumericalError(FlowInvError):
    """Non-finite values or numerical breakdown."""

    exit_code = 4


class DivergenceError(NumericalError):
    """Fixed-point iteration blew up."""


class SingularityError(NumericalError):
    """A linear solve hit a singular matrix."""


class CapabilityError(FlowInvError):
    """Operation requires a capability the field does not provide."""


class StateError(FlowInvError):
    """Operation called on an object in the wrong state."""

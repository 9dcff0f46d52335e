"""Exception types raised across the package."""


class RisLocateError(Exception):
    """Base class; the CLI maps these to a machine-readable error line."""

    code = "error"


class InvalidInput(RisLocateError, ValueError):
    code = "invalid_input"


class InvalidConfig(RisLocateError, ValueError):
    code = "invalid_config"


class NoValidPartition(RisLocateError):
    code = "no_valid_partition"


class DegenerateGeometry(RisLocateError, ValueError):
    code = "degenerate_geometry"


class InvalidWindow(RisLocateError, ValueError):
    code = "invalid_window"


class UnbalancedSchedule(RisLocateError, ValueError):
    code = "unbalanced_schedule"


class ZeroOperand(RisLocateError, ValueError):
    code = "zero_operand"


class ZeroChannelEntry(RisLocateError, ValueError):
    code = "zero_channel_entry"


class TooLarge(RisLocateError, ValueError):
    code = "too_large"


class DimensionMismatch(RisLocateError, ValueError):
    code = "dimension_mismatch"


class SingularFim(RisLocateError, ArithmeticError):
    code = "singular_fim"


class NonFiniteObjective(RisLocateError, ArithmeticError):
    code = "non_finite_objective"


class EmptyWindow(RisLocateError, ValueError):
    code = "empty_window"


class IoError(RisLocateError, OSError):
    code = "io_error"

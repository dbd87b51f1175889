"""Exception types shared across the package."""


class HVPLError(Exception):
    pass


class ShapeError(HVPLError, ValueError):
    pass


class UsageError(HVPLError, ValueError):
    pass


class ConfigError(HVPLError, ValueError):
    pass


class StateError(HVPLError, RuntimeError):
    pass


class NumericError(HVPLError, ArithmeticError):
    pass


class CoverageError(HVPLError, ValueError):
    """Sampled videos do not cover every class of the task."""


class ConnectivityError(HVPLError, ValueError):
    pass


class DegenerateInputError(HVPLError, ValueError):
    pass


class StructureError(HVPLError, ValueError):
    pass


class FormatError(HVPLError, OSError):
    pass


class ParameterError(HVPLError, ValueError):
    """Parameters violate a required sign or range constraint."""

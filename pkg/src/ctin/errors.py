"""Exception hierarchy. The CLI maps each family to an exit code."""


class CtinError(Exception):
    exit_code = 1


class ConfigError(CtinError, ValueError):
    """Bad configuration: unknown names, invalid hyper-parameters, inconsistent shapes of configs."""

    exit_code = 2


class DataError(CtinError, ValueError):
    """Input data violates an invariant (ordering, sizes, norms)."""

    exit_code = 3


class FormatError(DataError):
    """A file does not follow the expected layout."""


class DivergenceError(CtinError, FloatingPointError):
    """Training produced a non-finite loss."""

    exit_code = 4

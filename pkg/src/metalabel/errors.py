"""Exception types shared across the package."""


class MetaLabelError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MetaLabelError, ValueError):
    """Invalid inputs, configuration, or on-disk artifacts."""


class NumericalError(MetaLabelError, RuntimeError):
    """A numeric routine diverged or produced non-finite values."""


class PipelineContractError(MetaLabelError, RuntimeError):
    """A pipeline stage violated a structural contract (e.g. too few clusters)."""

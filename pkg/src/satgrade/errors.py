"""Exception types raised across the package.

The CLI maps every :class:`SatgradeError` to exit status 2; anything raised by
argument parsing maps to exit status 1.
"""


class SatgradeError(Exception):
    """Base class for data and contract errors."""


class InvalidArgument(SatgradeError, ValueError):
    pass


class DegenerateMixture(SatgradeError, ValueError):
    pass


class ZeroVariance(SatgradeError, ValueError):
    pass


class InsufficientData(SatgradeError):
    def __init__(self, required, available, what="patches"):
        self.required = required
        self.available = available
        super().__init__(
            f"insufficient source data: {required} {what} required, "
            f"only {available} available"
        )


class ContractViolation(SatgradeError):
    pass


class Divergence(SatgradeError, FloatingPointError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class CorruptFile(SatgradeError):
    pass

"""Exception hierarchy.

The CLI maps :class:`ModelError` subclasses to exit code 2 and
:class:`NumericalError` subclasses to exit code 3.
"""

from __future__ import annotations


class UpmdpError(Exception):
    """Base class for all package errors."""


class ModelError(UpmdpError):
    """Malformed model, expression, scenario or policy input."""


class NumericalError(UpmdpError):
    """A numerical procedure failed to produce a trustworthy result."""


class ParseError(ModelError):
    def __init__(self, message: str, offset: int, expected: tuple[str, ...] = ()):
        self.offset = offset
        self.expected = tuple(expected)
        detail = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at offset {offset}{detail}")


class UnknownParameter(ModelError):
    def __init__(self, name: str, where: str = ""):
        self.name = name
        super().__init__(f"unknown parameter {name!r}" + (f" in {where}" if where else ""))


class UnboundParameter(ModelError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"parameter {name!r} has no value")


class DivisionByZero(NumericalError):
    pass


class SchemaError(ModelError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class NormalizationError(ModelError):
    def __init__(self, state: str, action: str, total: float, sample_index: int | None = None,
                 params=None):
        self.state = state
        self.action = action
        self.total = total
        self.sample_index = sample_index
        self.params = params
        msg = f"transition row ({state}, {action}) is not a distribution (sum={total!r})"
        if sample_index is not None:
            msg += f" for sample {sample_index}"
        if params is not None:
            msg += f" at parameters {list(params)!r}"
        super().__init__(msg)


class InvalidPolicy(ModelError):
    pass


class InvalidInput(ModelError):
    pass


class EmptyInput(InvalidInput):
    pass


class EmptyVector(InvalidInput):
    pass


class InvalidGrid(InvalidInput):
    pass


class NonConvergence(NumericalError):
    pass


class InvalidDiscount(NumericalError):
    pass


class TargetOutOfRange(NumericalError):
    pass


class InfeasibleIntervals(ModelError):
    def __init__(self, state: str, action: str, lo_sum: float, hi_sum: float):
        self.state = state
        self.action = action
        super().__init__(
            f"intervals at ({state}, {action}) admit no distribution "
            f"(sum lo={lo_sum:.12g}, sum hi={hi_sum:.12g})")


class PolicySpaceTooLarge(NumericalError):
    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"{count} deterministic policies exceeds the cap of {cap}")


class NoSignChange(NumericalError):
    pass

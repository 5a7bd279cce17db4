"""Exception types shared across the package.

Every error raised on purpose derives from SacnetError so callers can
catch the package's failures without also swallowing genuine bugs.
"""


class SacnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SacnetError, ValueError):
    """Array dimensions do not satisfy an operation's contract.

    Messages always name both the offending and the expected shape.
    """


class ParameterError(SacnetError, ValueError):
    """An argument value is outside its legal range (e.g. stride < 1)."""


class ParseError(SacnetError, ValueError):
    """A file is malformed.  Carries the byte offset of the first bad byte."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(SacnetError, ArithmeticError):
    """A computation produced NaN/Inf.  Carries the training step if known."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ProtocolError(SacnetError, ValueError):
    """Inputs that must come in matched sets do not (e.g. 3 RGB, 4 thermal)."""


class ContractError(SacnetError, RuntimeError):
    """An API was used against its documented contract."""

"""Exception hierarchy shared by every module."""


class PotshareError(Exception):
    """Base class for all library errors."""


class InputError(PotshareError, ValueError):
    """Arguments violate a documented precondition."""


class ParseError(InputError):
    """A model, pair or dataset file could not be parsed."""


class EvaluationError(PotshareError, ArithmeticError):
    """A model produced a non-finite value."""


class ProtocolError(PotshareError):
    """An external predictor broke the request/response contract."""


class CapacityError(PotshareError):
    """Exhaustive computation requested beyond its configured cap."""

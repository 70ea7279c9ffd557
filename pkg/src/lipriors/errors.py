"""Exception hierarchy shared by every module."""


class PriorError(Exception):
    """Base class for all errors raised by lipriors."""


# --- model DSL -----------------------------------------------------------

class ModelError(PriorError):
    """Problems with the text of a model file."""


class ModelSyntaxError(ModelError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class UnknownVariable(ModelError):
    pass


class UnknownFunction(ModelError):
    pass


class MalformedSupport(ModelError):
    pass


class UnboundVariable(PriorError):
    pass


class DomainError(PriorError, ValueError):
    """An expression was evaluated outside the domain of one of its operations."""


class NotSeparable(PriorError):
    """The log-density has a term mixing parameters and observable non-multiplicatively."""


# --- numerics ------------------------------------------------------------

class ComputationFailed(PriorError):
    pass


class NotConverged(ComputationFailed):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularHessian(ComputationFailed):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NegativeDeterminant(ComputationFailed):
    pass


class Inconclusive(ComputationFailed):
    pass


class DominationViolated(ComputationFailed):
    pass


# --- likelihood / families -----------------------------------------------

class EmptyObservations(PriorError, ValueError):
    pass


class OutOfSupport(PriorError, ValueError):
    pass


class NoLaws(PriorError):
    pass


class ImproperAtLambda(PriorError):
    """The tilted base measure has infinite mass at the requested multipliers."""


class InvalidHyperparameters(PriorError, ValueError):
    pass


class UnsupportedModel(PriorError):
    pass

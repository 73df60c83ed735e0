"""Exception types shared across the package."""


class RatrError(Exception):
    """Base class for all errors raised by :mod:`ratr`."""


class ValidationError(RatrError, ValueError):
    """Invalid user input (bad configuration, out-of-range parameters)."""


class DimensionError(ValidationError):
    """Shapes or orders of the arguments do not agree."""


class DomainError(ValidationError):
    """An argument lies outside the domain of the operation."""


class MembershipError(ValidationError, KeyError):
    """A multi-index is not an element of the index set."""

    def __str__(self):
        return Exception.__str__(self)


class CapacityError(RatrError):
    """The requested object would exceed a size or retry budget."""


class NumericalFailure(RatrError, ArithmeticError):
    """An iterative method produced non-finite values or broke down.

    ``iteration`` records where the failure was detected; ``context`` holds
    free-form diagnostic information added while the error propagates.
    """

    def __init__(self, message, iteration=None, context=None, partial=None):
        super().__init__(message)
        self.iteration = iteration
        self.context = dict(context or {})
        self.partial = partial

    def __str__(self):
        msg = super().__str__()
        extra = dict(self.context)
        if self.iteration is not None:
            extra.setdefault("iteration", self.iteration)
        if extra:
            details = ", ".join(f"{k}={v}" for k, v in extra.items())
            return f"{msg} ({details})"
        return msg


class DegenerateDataError(NumericalFailure):
    """Data carry no usable variation (e.g. all kernel eigenvalues <= 0)."""


class ReconstructionError(NumericalFailure):
    """The pre-image map could not produce a finite reconstruction."""


class SolverError(NumericalFailure):
    """The deterministic PDE solve failed."""

    def __init__(self, message, condition=None, **kwargs):
        super().__init__(message, **kwargs)
        self.condition = condition
        if condition is not None:
            self.context.setdefault("condition_estimate", f"{condition:.3e}")

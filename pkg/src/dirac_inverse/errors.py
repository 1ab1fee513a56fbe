"""Exception hierarchy shared by all modules."""


class DiracError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(DiracError, ValueError):
    pass


class DomainError(DiracError, ValueError):
    pass


class FactorizationError(DiracError, ArithmeticError):
    """Cholesky factorization hit a nonpositive pivot.

    The zero-based scalar index of the failing pivot is kept in ``pivot``.
    """

    def __init__(self, message, pivot):
        super().__init__(message)
        self.pivot = pivot


class ConditioningError(DiracError, ArithmeticError):
    def __init__(self, message, cond=float("inf")):
        super().__init__(message)
        self.cond = cond


class SeriesError(DiracError, ArithmeticError):
    def __init__(self, message, tail):
        super().__init__(message)
        self.tail = tail


class InversionError(DiracError, ArithmeticError):
    pass


class SNodeError(DiracError, ArithmeticError):
    pass


class DataQualityError(DiracError, ArithmeticError):
    pass


class DegenerateHamiltonianError(DiracError, ArithmeticError):
    def __init__(self, message, x):
        super().__init__(message)
        self.x = x


class StageError(DiracError):
    """A stage of the inverse pipeline failed.

    Carries the stage name, the underlying exception and whatever diagnostics
    were collected before the failure.
    """

    def __init__(self, stage, cause, diagnostics=None):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.diagnostics = dict(diagnostics or {})

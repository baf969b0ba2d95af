"""Exception hierarchy shared by every module of the package."""


class KcnError(Exception):
    """Base class for all package errors."""


class InvalidInput(KcnError, ValueError):
    pass


class EmptyVariogram(KcnError):
    pass


class InsufficientData(KcnError):
    pass


class FitFailed(KcnError):
    """Variogram fitting failed for every candidate kind.

    ``diagnostics`` maps each kind to the reason it was rejected.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NumericalError(KcnError, ArithmeticError):
    pass


class SingularSystem(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class TrainingFailed(KcnError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = list(log or [])


class SchemaError(KcnError):
    pass


class EmptyDataset(KcnError):
    pass


class GenerationFailed(NumericalError):
    pass


class CheckpointError(KcnError):
    pass

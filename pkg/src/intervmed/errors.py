"""Exception hierarchy shared by all modules."""


class IntervMedError(Exception):
    """Base class for every error raised by the library."""


class SchemaError(IntervMedError):
    pass


class ValidationError(IntervMedError):
    pass


class RankDeficiencyError(IntervMedError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(IntervMedError):
    pass


class ConvergenceError(IntervMedError):
    pass


class CrossValidationError(IntervMedError):
    pass


class LinkDomainError(IntervMedError):
    pass


class RefitInfeasibleError(IntervMedError):
    pass


class BootstrapError(IntervMedError):
    pass

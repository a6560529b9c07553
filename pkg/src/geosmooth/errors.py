"""Exception hierarchy."""


class GeosmoothError(Exception):
    pass


class ConfigurationError(GeosmoothError, ValueError):
    """Invalid parameters, case files or schedules."""


class GeometryError(GeosmoothError, ValueError):
    """Degenerate elements or smoothing cells."""


class NumericError(GeosmoothError, ValueError):
    pass


class ConstitutiveError(GeosmoothError):
    def __init__(self, message, trial=None):
        super().__init__(message)
        self.trial = trial


class TangentError(GeosmoothError):
    pass


class SolverError(GeosmoothError):
    def __init__(self, message, dofs=None):
        super().__init__(message)
        self.dofs = [] if dofs is None else list(dofs)


class DomainError(GeosmoothError, ValueError):
    pass

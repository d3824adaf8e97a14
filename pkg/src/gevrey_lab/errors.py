"""Exception types shared across the package."""


class DomainError(ValueError):
    """An operation was called outside its admissible parameter range."""


class InvalidSeriesError(ValueError):
    """A series carries non-finite coefficients."""


class DivergenceError(RuntimeError):
    """Picard iteration did not settle; carries the increment history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class SmallDivisorError(ArithmeticError):
    """A divisor fell below the degeneracy floor."""


class DependenceError(ValueError):
    """An integer relation among the frequencies was detected numerically."""


class EngineDefectError(AssertionError):
    """An identity that must hold exactly failed."""


class GeometryError(ValueError):
    """Sector configuration or ray choice is inadmissible."""


class DominationFailure(AssertionError):
    def __init__(self, message, offenders):
        super().__init__(message)
        self.offenders = list(offenders)


class SpecError(ValueError):
    """A problem description failed validation; carries every diagnostic."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class StageDependencyError(RuntimeError):
    def __init__(self, stage, missing):
        self.stage = stage
        self.missing = missing
        super().__init__(f"stage '{stage}' needs artifacts of stage '{missing}'; run '{missing}' first")


class StageFailure(RuntimeError):
    """A pipeline stage raised; carries the stage name and the manifest written so far."""

    def __init__(self, stage, cause, manifest):
        self.stage = stage
        self.cause = cause
        self.manifest = manifest
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")

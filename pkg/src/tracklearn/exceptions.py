"""Exception types raised across the package."""


class TrackLearnError(Exception):
    """Base class for package errors."""


class InvalidProbabilityError(TrackLearnError, ValueError):
    pass


class EmptyInputError(TrackLearnError, ValueError):
    pass


class ShapeError(TrackLearnError, ValueError):
    pass


class NumericalFailureError(TrackLearnError, ArithmeticError):
    pass


class InvalidPhaseError(TrackLearnError, RuntimeError):
    pass


class InsufficientDataError(TrackLearnError, ValueError):
    pass


class AlignmentError(TrackLearnError, ValueError):
    pass


class VersionError(TrackLearnError, ValueError):
    pass


class EndOfStream(TrackLearnError):
    """Raised when a world is ticked past its horizon."""


class ConfigValidationError(TrackLearnError, ValueError):
    """Carries every violation found, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvalidArgumentError(TrackLearnError, ValueError):
    pass

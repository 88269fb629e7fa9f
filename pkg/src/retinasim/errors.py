"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front-end:
2 validation, 3 numerical accuracy, 4 model-regime violation, 5 I/O.
"""


class RetinaSimError(Exception):
    exit_code = 1


class ConfigurationError(RetinaSimError, ValueError):
    """Invalid geometry, parameters or configuration."""

    exit_code = 2


class ValidationError(ConfigurationError):
    """One or more validation failures, each with a location.

    ``problems`` is a list of human readable messages, one per failure.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ResolutionError(ValidationError):
    """A referenced file does not exist."""


class AssemblyError(ConfigurationError):
    """Inconsistent dimensions while assembling an operator."""


class AccuracyError(RetinaSimError, ArithmeticError):
    """A numerical tolerance could not be met."""

    exit_code = 3


class ToleranceError(AccuracyError):
    """Event localisation did not converge."""


class StepSizeError(AccuracyError):
    """Time step too large (overflow or stability)."""


class SpectralError(AccuracyError):
    """Eigendecomposition failed, or the operator is (near) defective or singular."""


class EstimationError(AccuracyError):
    """Not enough data for a statistical estimate."""


class ExcitationError(AccuracyError):
    """Probe stimulus lacks the spectral content needed for a kernel fit."""


class RegimeError(RetinaSimError):
    """The model left the regime an analysis is valid in."""

    exit_code = 4


class LinearityViolation(RegimeError):
    """Rectification occurred where the analysis requires the linear regime.

    ``trajectory`` holds the offending run when available.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class UnstableSpectrumError(RegimeError):
    """An analysis integrating over the infinite past met an unstable operator."""


class ChatteringError(RegimeError):
    """Too many domain visits in a single run."""

    def __init__(self, message, state=None, time=None):
        super().__init__(message)
        self.state = state
        self.time = time


class RestStateError(RegimeError):
    """The rest state of the network is not in the non-rectified domain."""


class FileFormatError(RetinaSimError, OSError):
    exit_code = 5

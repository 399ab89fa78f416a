"""Exception types shared across the package."""


class DriftwalkError(Exception):
    """Base class for all driftwalk errors."""


class RegimeNotCoveredError(DriftwalkError, ValueError):
    """Raised for parameter points the limit theory deliberately excludes."""


class UnsupportedRegimeError(DriftwalkError, ValueError):
    """Raised when no prediction pipeline exists for the requested regime."""


class SpectrumError(DriftwalkError, ValueError):
    """Raised when a matrix spectrum violates an operation's precondition."""


class SingularLyapunovError(SpectrumError):
    """Kronecker sum of the Lyapunov operator is (numerically) singular."""


class EigenbasisError(DriftwalkError, ValueError):
    """Eigenbasis too ill-conditioned; caller should supply Jordan data."""


class ComplexResidueError(DriftwalkError, ValueError):
    """A nominally real quantity retained a non-negligible imaginary part."""


class SimulationOverflowError(DriftwalkError, RuntimeError):
    """Walk state left the floating-point range.

    Attributes
    ----------
    step : int
        Index of the step at which the overflow was detected.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class ChainBlowUpError(DriftwalkError, RuntimeError):
    """An SDE chain escaped the divergence guard radius."""


class ConfigError(DriftwalkError, ValueError):
    """Experiment configuration failed validation."""

"""Exception types shared across the package."""


class NlsnfError(Exception):
    """Base class for all package errors."""


class ConfigError(NlsnfError):
    """Invalid configuration or inconsistent inputs."""


class GridMismatchError(NlsnfError):
    """Vector does not live on the model grid."""


class BoundaryDecayError(NlsnfError):
    """A potential or coupling fails the required decay at the box boundary."""


class EmptySpectrumError(NlsnfError):
    """The operator -d2/dx2 + V has no bound state."""


class SingularResolventError(NlsnfError):
    """Resolvent requested at (or too close to) a spectral point."""


class HypothesisViolation(NlsnfError):
    """A nondegeneracy hypothesis fails; carries the witness."""

    def __init__(self, message, witnesses=None):
        super().__init__(message)
        self.witnesses = witnesses or []


class ClassificationError(NlsnfError):
    """A term sits within tolerance of a resonance threshold."""


class GeneratorClassError(NlsnfError):
    """Expansion is not of the admissible generator shape."""


class LedgerViolation(NlsnfError):
    """A Lie-derivative output breaks the degree or harmonic ledger."""


class NumericalError(NlsnfError):
    """A solve or time step failed to meet its accuracy contract."""

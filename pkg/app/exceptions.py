from typing import Any, Dict, Optional


class GlmlabError(Exception):
    """Base class for all library errors"""


class ParameterDomainError(GlmlabError, ValueError):
    """A parameter lies outside the domain an operation accepts"""


class ConfigurationError(GlmlabError):
    """The config file or environment could not be turned into settings"""


class DatasetFormatError(GlmlabError):
    """A dataset container is malformed"""


class NumericalError(GlmlabError):
    """A numerical procedure failed; `details` carries the evidence"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class ProxConvergenceError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class DegeneracyError(NumericalError):
    pass


class FixedPointError(NumericalError):
    pass


class ConsistencyError(NumericalError):
    pass


class PoleError(NumericalError):
    pass


class SolverError(NumericalError):
    pass

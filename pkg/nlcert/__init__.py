"""
nlcert - certified nonnegativity of nonlinear functions
Sum-of-squares relaxations, exact rational certificate checking,
semialgebraic lifting and maxplus approximation of transcendental functions
"""

__version__ = "1.0.0"


class NlcertError(Exception):
    """Base class for every error raised by the engine"""


class ParseError(NlcertError):
    """Syntax error in a problem description"""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        location = f" (line {line}, column {column})" if line else ""
        super().__init__(f"{message}{location}")


class DimensionError(NlcertError):
    """Operands or formulas disagree on the ambient dimension"""


class DomainViolation(NlcertError):
    """A sqrt/log argument or a denominator leaves its domain"""

    def __init__(self, message: str, subtree: str = ""):
        self.subtree = subtree
        suffix = f": {subtree}" if subtree else ""
        super().__init__(f"{message}{suffix}")


class RelaxationError(NlcertError):
    """The requested relaxation cannot be built"""


class CertificateError(NlcertError):
    """Malformed certificate file or certificate/problem mismatch"""

    def __init__(self, message: str, mismatch: bool = False):
        self.mismatch = mismatch
        super().__init__(message)


class PSDRepairFailed(NlcertError):
    """Diagonal shift needed to make a Gram matrix PSD is too large"""


class ConfigError(NlcertError):
    """Invalid option name or value"""


class ApproximationError(NlcertError):
    """Estimator preconditions violated or minimax iteration failed"""


class UnsupportedExpression(NlcertError):
    """Expression shape the pipeline does not handle"""

"""Exception hierarchy shared by every evt_autoselect module."""

from typing import Any, Dict, List, Optional, Tuple


class EvtError(Exception):
    """Base class for all errors raised by evt_autoselect."""


class DomainError(EvtError, ValueError):
    """Raised when an argument or parameter lies outside its valid domain."""


class NumericalError(EvtError, ArithmeticError):
    """Raised when a numerical procedure cannot produce a trustworthy result.

    The ``diagnostics`` mapping carries whatever the failing routine knew at
    the time (condition numbers, brackets, iteration counts).
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})


class CovarianceUnavailableError(NumericalError):
    """Raised when a fit carries no usable covariance matrix."""


class TableRangeError(EvtError):
    """Raised when a shape estimate falls outside the null table's grid."""

    def __init__(self, xi_hat: float, low: float, high: float):
        super().__init__(
            f"Shape estimate {xi_hat:.4f} is outside the null table range "
            f"[{low:.1f}, {high:.1f}]"
        )
        self.xi_hat = xi_hat
        self.low = low
        self.high = high


class NullTableError(EvtError):
    """Raised when a null table file is missing, corrupt or of another version."""


class IngestError(EvtError):
    """Raised when an input file cannot be turned into site series.

    ``problems`` lists ``(line_number, reason)`` pairs, line numbers counting
    the header as line 1.
    """

    def __init__(self, message: str, problems: Optional[List[Tuple[int, str]]] = None):
        self.problems: List[Tuple[int, str]] = list(problems or [])
        if self.problems:
            shown = "; ".join(f"line {line}: {reason}" for line, reason in self.problems[:10])
            more = len(self.problems) - 10
            if more > 0:
                shown += f"; ... and {more} more"
            message = f"{message} ({shown})"
        super().__init__(message)


class ConfigError(EvtError):
    """Raised when a run configuration is inconsistent with its mode."""

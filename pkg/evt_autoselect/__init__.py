"""Automated extreme value analysis package."""

import logging

__version__ = "0.1.0"

# Library code never configures handlers itself
logging.getLogger(__name__).addHandler(logging.NullHandler())

from .utils.errors import (  # noqa: E402
    ConfigError,
    CovarianceUnavailableError,
    DomainError,
    EvtError,
    IngestError,
    NullTableError,
    NumericalError,
    TableRangeError,
)
from .utils.evd_core import GevParams, GpdParams, KumGevParams, TopROrderSample  # noqa: E402
from .utils.estimation import (  # noqa: E402
    FitResult,
    LinkedModelSpec,
    fit_gev_lmom,
    fit_gevr_mle,
    fit_gpd_mle,
    fit_mps,
    fit_rfa_hybrid,
    fit_rfa_mle,
    fit_rfa_mps,
)
from .utils.sequential import select_r, select_threshold  # noqa: E402

__all__ = [
    "ConfigError",
    "CovarianceUnavailableError",
    "DomainError",
    "EvtError",
    "FitResult",
    "GevParams",
    "GpdParams",
    "IngestError",
    "KumGevParams",
    "LinkedModelSpec",
    "NullTableError",
    "NumericalError",
    "TableRangeError",
    "TopROrderSample",
    "fit_gev_lmom",
    "fit_gevr_mle",
    "fit_gpd_mle",
    "fit_mps",
    "fit_rfa_hybrid",
    "fit_rfa_mle",
    "fit_rfa_mps",
    "select_r",
    "select_threshold",
]

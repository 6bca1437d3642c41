"""Goodness-of-fit tests for the GEV_r model of the r largest order statistics.

Two tests are provided: the score test, calibrated either by a parametric
bootstrap (refit on every draw) or by a multiplier bootstrap (one fit,
reweighted per-block scores), and the entropy-difference test, whose
standardized statistic is asymptotically normal.

Scores are numerical derivatives of the per-block log-likelihood taken on
standardized data, which leaves both statistics unchanged by affine changes
of units.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numdifftools as nd
import numpy as np
from scipy import special, stats

from .errors import DomainError, NumericalError
from .estimation import FitResult, GevrLikelihood, fit_gevr_mle
from .evd_core import (
    GevParams,
    SeedLike,
    TopROrderSample,
    _log1p_ratio,
    gevr_loglik_rows,
    sample_gevr,
    spawn_generators,
)
from .parallel import ordered_map

logger = logging.getLogger(__name__)

SCORE_STEP = 1e-5
EIGEN_FLOOR = 1e-10
MAX_CONDITION = 1e12
MAX_FAILED_FRACTION = 0.10


@dataclass
class TestOutcome:
    """Result of one goodness-of-fit test.

    ``bootstrap_size`` counts the bootstrap replicates that entered the
    p-value (0 for asymptotic tests); ``reliable`` is False when too many
    refits failed or the fitted shape is outside the regular range.
    """

    __test__ = False

    statistic: float
    p_value: float
    theta_hat: Any
    method: str
    bootstrap_size: int = 0
    failed_refits: int = 0
    reliable: bool = True
    extras: Dict[str, Any] = field(default_factory=dict)


def _block_scores(model: GevrLikelihood, theta: GevParams) -> np.ndarray:
    """n x 3 matrix of per-block scores in standardized parameters."""
    theta_std = model.to_std(theta.as_array())
    values = model.std_values

    def rows(th: np.ndarray) -> np.ndarray:
        return gevr_loglik_rows(values, th[0], th[1], th[2])

    if not np.all(np.isfinite(rows(theta_std))):
        raise DomainError("Parameters violate the support of some block")
    with np.errstate(all="ignore"):
        scores = nd.Jacobian(rows, step=SCORE_STEP, method="central")(theta_std)
    scores = np.asarray(scores, dtype=float).reshape(model.n_obs, 3)
    if not np.all(np.isfinite(scores)):
        raise NumericalError("Non-finite block scores", {"theta": theta})
    return scores


def _information(scores: np.ndarray) -> np.ndarray:
    info = scores.T @ scores / scores.shape[0]
    cond = float(np.linalg.cond(info))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError("Information matrix is singular", {"condition_number": cond})
    return info


def score_statistic(sample: TopROrderSample, theta: GevParams) -> float:
    """Score statistic ``V_n = n^-1 S' I^-1 S`` at ``theta``.

    ``S`` sums the per-block scores and ``I`` is their average outer product.

    Raises:
        NumericalError: the information matrix is singular (the condition
            number is reported in ``diagnostics``).
    """
    model = GevrLikelihood(sample)
    scores = _block_scores(model, theta)
    info = _information(scores)
    total = scores.sum(axis=0)
    value = float(total @ np.linalg.solve(info, total)) / sample.n
    return max(value, 0.0)


def _fit_or_raise(sample: TopROrderSample, fit: Optional[FitResult]) -> FitResult:
    fit = fit if fit is not None else fit_gevr_mle(sample)
    if not fit.converged:
        raise NumericalError("GEV_r maximum likelihood fit failed", {"message": fit.message})
    return fit


def _parametric_replicate(args: Tuple[int, int, GevParams, np.random.Generator]) -> float:
    n, r, theta, rng = args
    boot = sample_gevr(n, r, theta, rng)
    try:
        fit = fit_gevr_mle(boot)
        if not fit.converged:
            return np.nan
        return score_statistic(boot, fit.coefficients)
    except (NumericalError, DomainError):
        return np.nan


def _bootstrap_outcome(
    observed: float, replicates: np.ndarray, theta: GevParams, method: str, requested: int
) -> "TestOutcome":
    ok = replicates[np.isfinite(replicates)]
    failed = int(requested - ok.size)
    if ok.size == 0:
        raise NumericalError("Every bootstrap refit failed", {"requested": requested})
    reliable = failed <= MAX_FAILED_FRACTION * requested
    if failed:
        logger.warning(f"{failed} of {requested} bootstrap refits failed and were dropped")
    return TestOutcome(
        statistic=observed,
        p_value=float(np.sum(ok > observed)) / ok.size,
        theta_hat=theta,
        method=method,
        bootstrap_size=int(ok.size),
        failed_refits=failed,
        reliable=reliable,
    )


def score_test_parametric(
    sample: TopROrderSample,
    L: int = 199,
    seed: SeedLike = None,
    fit: Optional[FitResult] = None,
    workers: int = 1,
    progress: bool = False,
) -> TestOutcome:
    """Score test with a parametric bootstrap null distribution.

    Each of the ``L`` replicates draws a GEV_r sample at the fitted
    parameters, refits it and recomputes the score statistic. Replicates
    whose refit fails are dropped and counted.
    """
    if L < 99:
        raise DomainError(f"At least 99 bootstrap replicates are required, got {L}")
    fit = _fit_or_raise(sample, fit)
    theta = fit.coefficients
    observed = score_statistic(sample, theta)
    generators = spawn_generators(seed, L)
    replicates = np.array(
        ordered_map(
            _parametric_replicate,
            [(sample.n, sample.r, theta, g) for g in generators],
            workers=workers,
            progress=progress,
            desc=f"score bootstrap r={sample.r}",
        ),
        dtype=float,
    )
    return _bootstrap_outcome(observed, replicates, theta, "score_pb", L)


def score_test_multiplier(
    sample: TopROrderSample,
    L: int = 199,
    seed: SeedLike = None,
    fit: Optional[FitResult] = None,
) -> TestOutcome:
    """Score test calibrated by a Gaussian multiplier bootstrap.

    The model is fitted once. With ``phi_i = I^-1/2 S_i`` each replicate
    draws standard normal multipliers ``Z`` and evaluates
    ``W = n^-1/2 sum (Z_i - mean Z) phi_i`` and ``V = W'W``.

    Raises:
        NumericalError: the information square root cannot be formed.
    """
    if L < 99:
        raise DomainError(f"At least 99 bootstrap replicates are required, got {L}")
    fit = _fit_or_raise(sample, fit)
    theta = fit.coefficients
    model = GevrLikelihood(sample)
    scores = _block_scores(model, theta)
    info = _information(scores)
    eigval, eigvec = np.linalg.eigh(info)
    if not np.all(np.isfinite(eigval)):
        raise NumericalError("Eigendecomposition of the information failed")
    inv_root = eigvec @ np.diag(np.maximum(eigval, EIGEN_FLOOR) ** -0.5) @ eigvec.T
    phi = scores @ inv_root
    n = sample.n
    observed = float(np.sum(phi.sum(axis=0) ** 2)) / n
    generators = spawn_generators(seed, L)
    multipliers = np.vstack([g.standard_normal(n) for g in generators])
    centred = multipliers - multipliers.mean(axis=1, keepdims=True)
    w = centred @ phi / np.sqrt(n)
    replicates = np.sum(w * w, axis=1)
    return TestOutcome(
        statistic=observed,
        p_value=float(np.sum(replicates > observed)) / L,
        theta_hat=theta,
        method="score_mb",
        bootstrap_size=L,
    )


def entropy_difference_mean(r: int, theta: GevParams) -> float:
    """Null mean ``eta_r = -log sigma - 1 + (1 + xi) digamma(r)``."""
    if r < 1:
        raise DomainError("r must be at least 1")
    return float(-np.log(theta.scale) - 1.0 + (1.0 + theta.shape) * special.digamma(r))


def entropy_differences(sample: TopROrderSample, theta: GevParams) -> np.ndarray:
    """Per-block log-likelihood differences between depth r and r - 1."""
    if sample.r < 2:
        raise DomainError("The entropy difference needs r >= 2")
    y = sample.values[:, -2:]
    z = (y - theta.loc) / theta.scale
    xi = np.full_like(z, theta.shape)
    if abs(theta.shape) >= 1e-8 and np.any(1.0 + theta.shape * z <= 0):
        raise DomainError("Parameters violate the support of some block")
    log_w = _log1p_ratio(z, xi)
    t_prev, t_last = np.exp(-log_w[:, 0]), np.exp(-log_w[:, 1])
    return -np.log(theta.scale) - t_last + t_prev - (1.0 + theta.shape) * log_w[:, 1]


def entropy_difference_statistic(sample: TopROrderSample, theta: GevParams) -> float:
    """Standardized entropy difference ``sqrt(n) (mean D - eta_r) / sd D``.

    Only the last two columns of the sample enter.

    Raises:
        DomainError: r < 2, or the differences have zero sample variance.
    """
    d = entropy_differences(sample, theta)
    spread = float(np.std(d, ddof=1))
    if not spread > 0:
        raise DomainError("Entropy differences are degenerate (zero variance)")
    eta = entropy_difference_mean(sample.r, theta)
    return float(np.sqrt(sample.n) * (d.mean() - eta) / spread)


def ed_test(sample: TopROrderSample, fit: Optional[FitResult] = None) -> TestOutcome:
    """Entropy-difference test of the GEV_r model at depth r (two-sided).

    Uses the parameters from the full GEV_r fit. Fits with shape at or below
    -0.5 are outside the test's validity and are marked unreliable.
    """
    if sample.r < 2:
        raise DomainError("The entropy difference test needs r >= 2")
    if sample.n < 50:
        logger.warning(f"Entropy difference test with only {sample.n} blocks; n >= 50 recommended")
    fit = _fit_or_raise(sample, fit)
    theta = fit.coefficients
    statistic = entropy_difference_statistic(sample, theta)
    return TestOutcome(
        statistic=statistic,
        p_value=float(2.0 * stats.norm.sf(abs(statistic))),
        theta_hat=theta,
        method="ed",
        reliable=theta.shape > -0.5,
    )

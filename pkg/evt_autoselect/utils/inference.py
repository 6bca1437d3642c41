"""Return levels, confidence intervals and the rank bootstrap for regional fits.

Profile-likelihood intervals reparameterize the model so the target (a
return level or the shape) is an explicit parameter, maximize over the
nuisance parameters on standardized data, and locate the points where the
profile drops by half the chi-square(1) quantile. The search brackets each
side automatically by geometric steps from the estimate and then solves
with Brent's method.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numdifftools as nd
import numpy as np
from scipy import optimize, stats

from .errors import CovarianceUnavailableError, DomainError, EvtError, NumericalError
from .estimation import (
    REGIONAL_FITTERS,
    CoefficientSet,
    FitResult,
    LinkedModelSpec,
    _gev_cdf_arrays,
    _minimize,
)
from .evd_core import (
    SHAPE_ZERO_TOL,
    GevParams,
    GpdParams,
    SeedLike,
    _gev_ppf_neglog,
    as_generator,
    gev_quantile,
    spawn_generators,
)
from .parallel import ordered_map

logger = logging.getLogger(__name__)

PROFILE_MAX_STEPS = 50
PROFILE_STEP_GROWTH = 1.5
PROFILE_XTOL = 1e-6
INFEASIBLE = -1e10
MAX_BOOTSTRAP_FAILED_FRACTION = 0.20
MIN_REPORTED_BOOTSTRAP = 199


@dataclass
class ReturnLevelEstimate:
    """Point estimate and interval for a return level (or the shape).

    Open interval sides are reported as infinite with the matching
    ``*_open`` flag set.
    """

    period: Optional[float]
    estimate: float
    ci_low: float
    ci_high: float
    method: str
    level: float
    conditioning: Dict[str, List[float]] = field(default_factory=dict)
    lower_open: bool = False
    upper_open: bool = False
    target: str = "return_level"


@dataclass(frozen=True)
class ProfileTarget:
    """What an interval is about.

    ``kind`` is ``"return_level"`` or ``"shape"``. For GPD fits the return
    level of ``period`` years also needs the observations per year, the
    exceedance rate and the threshold.
    """

    kind: str
    period: Optional[float] = None
    n_per_year: float = 1.0
    exceedance_rate: float = 1.0
    threshold: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("return_level", "shape"):
            raise DomainError(f"Unknown target {self.kind!r}")
        if self.kind == "return_level" and self.period is None:
            raise DomainError("A return-level target needs a period")

    @classmethod
    def shape(cls) -> "ProfileTarget":
        return cls("shape")

    @classmethod
    def return_level(
        cls, period: float, n_per_year: float = 1.0, exceedance_rate: float = 1.0, threshold: float = 0.0
    ) -> "ProfileTarget":
        return cls("return_level", period, n_per_year, exceedance_rate, threshold)


def gev_return_level(t: float, params: GevParams) -> float:
    """Level exceeded on average once every ``t`` blocks: the 1 - 1/t quantile."""
    if not t > 1:
        raise DomainError(f"Return period must exceed 1, got {t}")
    return float(gev_quantile(1.0 - 1.0 / t, params))


def _gpd_growth(log_m: float, shape: float) -> float:
    if abs(shape) < SHAPE_ZERO_TOL:
        return log_m
    return float(np.expm1(shape * log_m) / shape)


def gpd_return_level(
    N: float, u: float, params: GpdParams, n_per_year: float, zeta_u: float
) -> float:
    """N-year return level of a threshold model.

    ``z_N = u + sigma / xi * ((N n_y zeta_u) ** xi - 1)``, with the
    logarithmic form at xi = 0.
    """
    if not zeta_u > 0:
        raise DomainError(f"Exceedance rate must be positive, got {zeta_u}")
    m = N * n_per_year * zeta_u
    if not m > 1:
        raise DomainError(f"N * n_y * zeta_u must exceed 1, got {m}")
    return float(u + params.scale * _gpd_growth(float(np.log(m)), params.shape))


# --------------------------------------------------------------------------
# target transforms


def _family(fit: FitResult) -> str:
    if tuple(fit.param_names) == ("loc", "scale", "shape"):
        return "gev"
    if tuple(fit.param_names) == ("scale", "shape"):
        return "gpd"
    raise DomainError("Intervals need a stationary GEV, GEV_r or GPD fit")


def _gpd_log_m(target: ProfileTarget) -> float:
    if not target.exceedance_rate > 0:
        raise DomainError("Exceedance rate must be positive")
    m = target.period * target.n_per_year * target.exceedance_rate
    if not m > 1:
        raise DomainError(f"N * n_y * zeta_u must exceed 1, got {m}")
    return float(np.log(m))


def _target_function(fit: FitResult, target: ProfileTarget) -> Callable[[np.ndarray], float]:
    family = _family(fit)
    if target.kind == "shape":
        index = 2 if family == "gev" else 1
        return lambda theta: float(theta[index])
    if family == "gev":
        if not target.period > 1:
            raise DomainError(f"Return period must exceed 1, got {target.period}")
        s = -np.log1p(-1.0 / target.period)
        return lambda theta: float(_gev_ppf_neglog(s, theta[0], theta[1], theta[2]))
    log_m = _gpd_log_m(target)
    return lambda theta: float(target.threshold + theta[0] * _gpd_growth(log_m, theta[1]))


def delta_method_se(fit: FitResult, target: ProfileTarget) -> float:
    """Delta-method standard error ``sqrt(g' Sigma g)`` of the target.

    Raises:
        CovarianceUnavailableError: the fit carries no covariance matrix.
    """
    if fit.covariance is None:
        raise CovarianceUnavailableError("Fit has no covariance matrix", {"flags": fit.flags})
    func = _target_function(fit, target)
    theta = np.asarray(fit.params, dtype=float)
    grad = np.atleast_1d(np.asarray(nd.Gradient(func)(theta), dtype=float))
    return float(np.sqrt(max(float(grad @ fit.covariance @ grad), 0.0)))


def delta_method_ci(fit: FitResult, target: ProfileTarget, level: float = 0.95) -> ReturnLevelEstimate:
    """Symmetric Wald interval from :func:`delta_method_se`."""
    _check_level(level)
    estimate = _target_function(fit, target)(np.asarray(fit.params, dtype=float))
    half = stats.norm.ppf(0.5 + level / 2.0) * delta_method_se(fit, target)
    return ReturnLevelEstimate(
        period=target.period,
        estimate=estimate,
        ci_low=estimate - half,
        ci_high=estimate + half,
        method="delta",
        level=level,
        target=target.kind,
    )


def _check_level(level: float) -> None:
    if not 0.5 < level < 1:
        raise DomainError(f"Confidence level must lie in (0.5, 1), got {level}")


# --------------------------------------------------------------------------
# profile likelihood


@dataclass
class _ProfileProblem:
    psi_hat: float
    nuisance_hat: np.ndarray
    loglik: Callable[[float, np.ndarray], float]
    to_natural: Callable[[float], float]
    units: float


def _profile_problem(fit: FitResult, target: ProfileTarget) -> _ProfileProblem:
    model = fit.model
    family = _family(fit)
    theta_std = model.to_std(np.asarray(fit.params, dtype=float))

    if family == "gev":
        if target.kind == "shape":
            def loglik(psi: float, nu: np.ndarray) -> float:
                return model.std_loglik(np.array([nu[0], np.exp(nu[1]), psi]))

            return _ProfileProblem(
                float(theta_std[2]), np.array([theta_std[0], np.log(theta_std[1])]), loglik, float, 1.0
            )
        s = -np.log1p(-1.0 / target.period)

        def loglik(psi: float, nu: np.ndarray) -> float:
            scale = np.exp(nu[0])
            loc = psi - float(_gev_ppf_neglog(s, 0.0, scale, nu[1]))
            return model.std_loglik(np.array([loc, scale, nu[1]]))

        psi_hat = float(_gev_ppf_neglog(s, theta_std[0], theta_std[1], theta_std[2]))
        return _ProfileProblem(
            psi_hat,
            np.array([np.log(theta_std[1]), theta_std[2]]),
            loglik,
            lambda psi: model.centre + model.spread * psi,
            model.spread,
        )

    if target.kind == "shape":
        def loglik(psi: float, nu: np.ndarray) -> float:
            return model.std_loglik(np.array([np.exp(nu[0]), psi]))

        return _ProfileProblem(float(theta_std[1]), np.array([np.log(theta_std[0])]), loglik, float, 1.0)
    log_m = _gpd_log_m(target)

    def loglik(psi: float, nu: np.ndarray) -> float:
        growth = _gpd_growth(log_m, nu[0])
        if psi <= 0 or growth <= 0:
            return -np.inf
        return model.std_loglik(np.array([psi / growth, nu[0]]))

    return _ProfileProblem(
        float(theta_std[0] * _gpd_growth(log_m, theta_std[1])),
        np.array([theta_std[1]]),
        loglik,
        lambda psi: target.threshold + model.spread * psi,
        model.spread,
    )


def profile_likelihood_ci(
    fit: FitResult, target: ProfileTarget, level: float = 0.95
) -> ReturnLevelEstimate:
    """Profile-likelihood interval for a return level or the shape.

    Each side is bracketed by steps growing geometrically from half a
    delta-method standard error (up to 50 steps) and then solved to 1e-6 in
    data units. A side whose profile never drops far enough is reported as
    open (infinite endpoint, flag set).

    Raises:
        DomainError: the fit is not a converged stationary likelihood fit.
    """
    _check_level(level)
    if fit.method != "mle" or fit.model is None:
        raise DomainError("Profile likelihood needs a stationary maximum likelihood fit")
    if not fit.converged:
        raise DomainError("Profile likelihood needs a converged fit")
    problem = _profile_problem(fit, target)
    max_ll = problem.loglik(problem.psi_hat, problem.nuisance_hat)
    if not np.isfinite(max_ll):
        raise NumericalError("Log-likelihood is not finite at the estimate")
    cutoff = max_ll - stats.chi2.ppf(level, 1) / 2.0
    warm = {"nu": problem.nuisance_hat.copy()}

    def profile(psi: float) -> float:
        best = np.inf
        best_x = warm["nu"]
        for start in (warm["nu"], problem.nuisance_hat):
            res = _minimize(lambda nu: -problem.loglik(psi, nu), start, restarts=0)
            if np.isfinite(res.fun) and res.fun < best:
                best, best_x = float(res.fun), res.x
        if not np.isfinite(best):
            return INFEASIBLE
        warm["nu"] = best_x
        return -best

    try:
        se = delta_method_se(fit, target) / problem.units
    except (CovarianceUnavailableError, DomainError):
        se = 0.0
    step0 = 0.5 * se if se > 0 else 0.1 * max(abs(problem.psi_hat), 1.0)
    xtol = PROFILE_XTOL / problem.units

    def crossing(direction: float) -> Tuple[float, bool]:
        warm["nu"] = problem.nuisance_hat.copy()
        previous = problem.psi_hat
        offset = step0
        for _ in range(PROFILE_MAX_STEPS):
            psi = problem.psi_hat + direction * offset
            if profile(psi) < cutoff:
                lo, hi = sorted((previous, psi))
                try:
                    root = optimize.brentq(lambda x: profile(x) - cutoff, lo, hi, xtol=xtol, maxiter=200)
                except ValueError:
                    # profile re-evaluated at the bracket end moved above the cutoff
                    root = psi
                return problem.to_natural(root), False
            previous = psi
            offset *= PROFILE_STEP_GROWTH
        logger.warning(f"Profile likelihood does not cross the cutoff on the {'upper' if direction > 0 else 'lower'} side")
        return direction * np.inf, True

    low, lower_open = crossing(-1.0)
    high, upper_open = crossing(1.0)
    return ReturnLevelEstimate(
        period=target.period,
        estimate=problem.to_natural(problem.psi_hat),
        ci_low=float(low),
        ci_high=float(high),
        method="profile",
        level=level,
        lower_open=lower_open,
        upper_open=upper_open,
        target=target.kind,
    )


# --------------------------------------------------------------------------
# regional return levels and the rank bootstrap


@dataclass
class BootstrapResult:
    """Semi-parametric bootstrap of regional coefficients.

    ``replicates`` holds the successful refits only (rows), in replicate
    order; ``flags`` gains ``"many_failures"`` when more than 20% failed.
    """

    replicates: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    failed: int
    level: float
    param_names: Tuple[str, ...]
    flags: List[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.replicates.shape[0])


@dataclass(frozen=True)
class RfaCovariates:
    """Covariate values (without intercepts or site indicators) to condition on."""

    loc: Sequence[float] = ()
    propscale: Sequence[float] = ()
    shape: Sequence[float] = ()

    def as_dict(self) -> Dict[str, List[float]]:
        return {k: [float(v) for v in getattr(self, k)] for k in ("loc", "propscale", "shape")}


def _site_params(coefs: CoefficientSet, spec: LinkedModelSpec, site: int, cov: RfaCovariates) -> GevParams:
    x_loc = np.asarray(cov.loc, dtype=float)
    x_prop = np.asarray(cov.propscale, dtype=float)
    x_shape = np.asarray(cov.shape, dtype=float)
    if (
        x_loc.size != spec.p_mu
        or x_prop.size != spec.propscale_design.shape[1] - 1
        or x_shape.size != spec.shape_design.shape[1] - 1
    ):
        raise DomainError("Covariate vector does not match the model design")
    mu = float(coefs.beta_mu[site] + x_loc @ coefs.beta_mu[spec.m:])
    gamma = float(np.exp(coefs.beta_gamma[0] + x_prop @ coefs.beta_gamma[1:]))
    xi = float(coefs.beta_xi[0] + x_shape @ coefs.beta_xi[1:])
    if not gamma * mu > 0:
        raise DomainError(f"Implied scale {gamma * mu:.6g} is not positive")
    return GevParams(mu, gamma * mu, xi)


def rfa_return_level(
    coefs: CoefficientSet,
    spec: LinkedModelSpec,
    site: int,
    t: float,
    covariates: Optional[RfaCovariates] = None,
    bootstrap: Optional[BootstrapResult] = None,
    level: float = 0.95,
) -> ReturnLevelEstimate:
    """Return level at one site conditional on covariate values.

    The GEV parameters are those implied by the links at the given
    covariates (all zero by default). With a bootstrap result the interval
    is the percentile interval of the return level over its replicates;
    otherwise the interval is left undefined (NaN).
    """
    if not 0 <= site < spec.m:
        raise DomainError(f"Site index {site} out of range for {spec.m} sites")
    cov = covariates if covariates is not None else RfaCovariates(
        np.zeros(spec.p_mu), np.zeros(spec.propscale_design.shape[1] - 1), np.zeros(spec.shape_design.shape[1] - 1)
    )
    estimate = gev_return_level(t, _site_params(coefs, spec, site, cov))
    low = high = float("nan")
    method = "point"
    if bootstrap is not None:
        _check_level(level)
        values = []
        for row in bootstrap.replicates:
            try:
                values.append(gev_return_level(t, _site_params(CoefficientSet.from_vector(row, spec), spec, site, cov)))
            except DomainError:
                continue
        if values:
            tail = (1.0 - level) / 2.0
            low, high = (float(v) for v in np.quantile(values, [tail, 1.0 - tail]))
            method = "bootstrap"
    return ReturnLevelEstimate(
        period=t,
        estimate=estimate,
        ci_low=low,
        ci_high=high,
        method=method,
        level=level,
        conditioning=cov.as_dict(),
    )


def random_ranks(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise 0-based ranks with ties broken at random."""
    values = np.atleast_2d(values)
    ranks = np.empty(values.shape, dtype=int)
    for s, row in enumerate(values):
        order = np.lexsort((rng.random(row.size), row))
        ranks[s, order] = np.arange(row.size)
    return ranks


def resample_uniforms(ranks: np.ndarray, rng: SeedLike) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform pseudo-data that follow year-resampled rank vectors.

    Whole years (columns of ``ranks``) are drawn with replacement, the
    resampled ranks are re-ranked within site (ties at random) and each
    site's sorted fresh uniforms are placed by those ranks. Returns the
    uniforms and the re-ranked matrix.
    """
    rng = as_generator(rng)
    m, n = ranks.shape
    resampled = ranks[:, rng.integers(0, n, size=n)]
    reranked = random_ranks(resampled, rng)
    fresh = np.sort(rng.random((m, n)), axis=1)
    return np.take_along_axis(fresh, reranked, axis=1), reranked


def _bootstrap_replicate(
    args: Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, LinkedModelSpec, str, Optional[CoefficientSet], np.random.Generator]
) -> np.ndarray:
    ranks, mu, sigma, xi, spec, method, start, rng = args
    u, _ = resample_uniforms(ranks, rng)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    pseudo = _gev_ppf_neglog(-np.log(u), mu, sigma, np.broadcast_to(xi[None, :], mu.shape))
    try:
        if method == "hybrid":
            refit = REGIONAL_FITTERS[method](pseudo, spec)
        else:
            refit = REGIONAL_FITTERS[method](pseudo, spec, start=start)
    except EvtError:
        return np.full(spec.n_coefficients, np.nan)
    if not refit.converged or refit.coefficients is None:
        return np.full(spec.n_coefficients, np.nan)
    return refit.coefficients.to_vector()


def semiparametric_bootstrap(
    data: np.ndarray,
    spec: LinkedModelSpec,
    fit_method: str = "mle",
    B: int = 199,
    seed: SeedLike = None,
    level: float = 0.95,
    workers: int = 1,
    fit: Optional[FitResult] = None,
) -> BootstrapResult:
    """Dependence-preserving bootstrap of a regional fit.

    The data are mapped to uniforms with the fitted site-and-period margins
    and ranked within site. Each replicate resamples whole years of rank
    vectors, generates matching uniforms, maps them back through the same
    fitted margins and refits. Failed refits are excluded and counted.
    """
    if B < 1:
        raise DomainError("B must be at least 1")
    if fit_method not in REGIONAL_FITTERS:
        raise DomainError(f"Unknown estimator {fit_method!r}; expected one of {sorted(REGIONAL_FITTERS)}")
    _check_level(level)
    if B < MIN_REPORTED_BOOTSTRAP:
        logger.warning(f"Bootstrap intervals from only {B} replicates; {MIN_REPORTED_BOOTSTRAP} or more recommended")
    y = np.asarray(data, dtype=float)
    fit = fit if fit is not None else REGIONAL_FITTERS[fit_method](y, spec)
    if not fit.converged or fit.coefficients is None:
        raise NumericalError("Regional fit failed; nothing to bootstrap", {"message": fit.message})
    coefs = fit.coefficients
    mu, sigma, xi = coefs.implied(spec)
    u = _gev_cdf_arrays(y, mu, sigma, xi[None, :])
    if not np.all(np.isfinite(u)):
        raise NumericalError("Fitted margins give undefined probabilities")
    generators = spawn_generators(seed, B + 1)
    ranks = random_ranks(u, generators[0])
    start = coefs if fit_method != "hybrid" else None
    rows = ordered_map(
        _bootstrap_replicate,
        [(ranks, mu, sigma, xi, spec, fit_method, start, g) for g in generators[1:]],
        workers=workers,
        desc="rank bootstrap",
    )
    matrix = np.vstack(rows)
    ok = np.all(np.isfinite(matrix), axis=1)
    failed = int(B - ok.sum())
    flags = []
    if failed > MAX_BOOTSTRAP_FAILED_FRACTION * B:
        flags.append("many_failures")
        logger.warning(f"{failed} of {B} bootstrap refits failed")
    good = matrix[ok]
    if good.shape[0] < 2:
        raise NumericalError("Fewer than two bootstrap refits succeeded", {"failed": failed})
    tail = (1.0 - level) / 2.0
    low, high = np.quantile(good, [tail, 1.0 - tail], axis=0)
    return BootstrapResult(
        replicates=good,
        se=np.std(good, axis=0, ddof=1),
        ci_low=low,
        ci_high=high,
        failed=failed,
        level=level,
        param_names=fit.param_names,
        flags=flags,
    )

"""Parameter estimation for GEV_r, GPD and regional flood-index models.

Likelihood-based fits work on standardized data (location and scale of the
sample removed) and map estimates back, so a fit of ``a * y + b`` is the
affine image of the fit of ``y``. Optimization is a Nelder-Mead simplex
search over (location, log scale, shape) with two perturbed restarts;
support violations surface as infinite objectives. Covariances come from a
numdifftools Hessian at the optimum and are dropped (with a flag) when the
Hessian is not positive definite.

Regional models follow the flood-index links: site location
``mu_st = x_st . beta_mu``, scale proportionality ``gamma_t = exp(x_t .
beta_gamma)`` so ``sigma_st = gamma_t * mu_st``, and shape
``xi_t = x_t . beta_xi``. Regional data are m x n arrays (sites x periods)
and the location design stacks rows site by site.
"""

import functools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numdifftools as nd
import numpy as np
from scipy import optimize, special

from .errors import DomainError, NumericalError
from .evd_core import (
    GevParams,
    GpdParams,
    TopROrderSample,
    _gev_ppf_neglog,
    _log1p_ratio,
    gev_logpdf_arrays,
    gevr_loglik_rows,
    gpd_logpdf_arrays,
    SHAPE_ZERO_TOL,
)

logger = logging.getLogger(__name__)

EULER_GAMMA = float(np.euler_gamma)
HYBRID_TOL = 1e-6
HYBRID_MAX_ITER = 50
HESSIAN_STEP = 1e-4


@dataclass
class FitResult:
    """Outcome of one estimation call.

    ``params`` holds the estimate as a flat vector named by ``param_names``
    (natural parameters for stationary fits, stacked coefficients for
    regression fits). ``max_objective`` is the maximized log-likelihood for
    likelihood methods and the negated Moran statistic for MPS. A fit that
    did not converge keeps its last iterate with ``converged=False``.
    """

    coefficients: Any
    params: np.ndarray
    param_names: Tuple[str, ...]
    max_objective: float
    converged: bool
    method: str
    covariance: Optional[np.ndarray] = None
    n_obs: int = 0
    flags: List[str] = field(default_factory=list)
    trace: List[float] = field(default_factory=list)
    message: str = ""
    model: Any = None

    @property
    def se(self) -> Optional[np.ndarray]:
        if self.covariance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def params_dict(self) -> dict:
        return {name: float(v) for name, v in zip(self.param_names, self.params)}


# --------------------------------------------------------------------------
# shared numerics


def _minimize(objective: Callable[[np.ndarray], float], start: np.ndarray, restarts: int = 2):
    """Nelder-Mead with perturbed restarts from the incumbent optimum."""
    start = np.asarray(start, dtype=float)
    dim = start.size
    options = {
        "xatol": 1e-8,
        "fatol": 1e-10,
        "maxiter": 2000 * dim,
        "maxfev": 4000 * dim,
        "adaptive": dim > 3,
    }

    def safe(x: np.ndarray) -> float:
        with np.errstate(all="ignore"):
            value = objective(x)
        return value if np.isfinite(value) else np.inf

    best = optimize.minimize(safe, start, method="Nelder-Mead", options=options)
    for k in range(restarts):
        signs = np.where(np.arange(dim) % 2 == k % 2, 1.0, -1.0)
        x0 = best.x + 0.1 * signs * np.maximum(1.0, np.abs(best.x))
        if not np.isfinite(safe(x0)):
            x0 = best.x + 0.01 * signs * np.maximum(1.0, np.abs(best.x))
        res = optimize.minimize(safe, x0, method="Nelder-Mead", options=options)
        if _rank(res) > _rank(best):
            best = res
    return best


def _rank(res: Any) -> Tuple[bool, bool, float]:
    # finite before infinite, converged before not, then lower objective
    fun = float(res.fun)
    return bool(np.isfinite(fun)), bool(res.success), -fun


def _inverse_hessian(
    objective: Callable[[np.ndarray], float], x: np.ndarray
) -> Optional[np.ndarray]:
    """Inverse of the objective's Hessian, or None if not positive definite."""
    try:
        with np.errstate(all="ignore"):
            hess = nd.Hessian(objective, step=HESSIAN_STEP)(x)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        logger.debug(f"Hessian evaluation failed: {e}")
        return None
    hess = np.atleast_2d(hess)
    if not np.all(np.isfinite(hess)):
        return None
    hess = 0.5 * (hess + hess.T)
    if np.min(np.linalg.eigvalsh(hess)) <= 0:
        return None
    cov = np.linalg.inv(hess)
    return 0.5 * (cov + cov.T)


def _check_degenerate(values: np.ndarray, what: str) -> None:
    if np.ptp(values) == 0:
        raise DomainError(f"{what} is constant; parameters are not identifiable")


# --------------------------------------------------------------------------
# L-moments


def _sample_pwm(data: np.ndarray) -> Tuple[float, float, float]:
    """Unbiased probability weighted moments b0, b1, b2."""
    x = np.sort(np.asarray(data, dtype=float))
    n = x.size
    i = np.arange(1, n + 1, dtype=float)
    b0 = x.mean()
    b1 = np.sum((i - 1) / (n - 1) * x) / n
    b2 = np.sum((i - 1) * (i - 2) / ((n - 1) * (n - 2)) * x) / n if n > 2 else np.nan
    return float(b0), float(b1), float(b2)


def sample_lmoments(data: Sequence[float]) -> Tuple[float, float]:
    """First two unbiased sample L-moments.

    ``l1`` is the mean and ``l2 = 2 b1 - b0`` with
    ``b1 = n^-1 sum_i (i-1)/(n-1) y_(i)`` over ascending order statistics,
    which equals half the mean absolute difference over all pairs.
    """
    x = np.asarray(data, dtype=float)
    if x.size < 2:
        raise DomainError("At least two observations are needed for L-moments")
    b0, b1, _ = _sample_pwm(x)
    return b0, 2.0 * b1 - b0


def _sample_lmoment_ratios(data: np.ndarray) -> Tuple[float, float, float]:
    b0, b1, b2 = _sample_pwm(data)
    l2 = 2.0 * b1 - b0
    l3 = 6.0 * b2 - 6.0 * b1 + b0
    return b0, l2, l3 / l2 if l2 > 0 else np.nan


def _gev_from_lmoments(l1: float, l2: float, t3: float) -> GevParams:
    # rational approximation for k = -shape, accurate for -0.8 <= t3 < 1
    if not (np.isfinite(t3) and -0.99 < t3 < 0.99) or l2 <= 0:
        raise NumericalError("L-moment ratios outside the GEV range", {"l2": l2, "t3": t3})
    c = 2.0 / (3.0 + t3) - np.log(2.0) / np.log(3.0)
    k = 7.8590 * c + 2.9554 * c * c
    if abs(k) < 1e-6:
        scale = l2 / np.log(2.0)
        loc = l1 - EULER_GAMMA * scale
    else:
        g = special.gamma(1.0 + k)
        scale = l2 * k / (g * (1.0 - 2.0 ** (-k)))
        loc = l1 - scale * (1.0 - g) / k
    return GevParams(float(loc), float(scale), float(-k))


def fit_gev_lmom(data: Sequence[float]) -> FitResult:
    """Stationary GEV fit by the method of L-moments."""
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 3:
        raise DomainError("At least three observations are needed for an L-moment fit")
    _check_degenerate(x, "Sample")
    l1, l2, t3 = _sample_lmoment_ratios(x)
    try:
        params = _gev_from_lmoments(l1, l2, t3)
    except (NumericalError, DomainError) as e:
        logger.debug(f"L-moment GEV fit failed: {e}")
        return FitResult(
            coefficients=None,
            params=np.full(3, np.nan),
            param_names=("loc", "scale", "shape"),
            max_objective=-np.inf,
            converged=False,
            method="lmom",
            n_obs=x.size,
            message=str(e),
        )
    loglik = float(np.sum(gev_logpdf_arrays(x, params.loc, params.scale, params.shape)))
    return FitResult(
        coefficients=params,
        params=params.as_array(),
        param_names=("loc", "scale", "shape"),
        max_objective=loglik,
        converged=True,
        method="lmom",
        n_obs=x.size,
    )


def _gev_lmom_terms(shape: float) -> Tuple[float, float, float]:
    """(A, B, Gamma(1-xi)) with A = (Gamma(1-xi)-1)/xi and B = (1-2^xi)/xi."""
    gamma_term = float(special.gamma(1.0 - shape))
    if abs(shape) < 1e-4:
        log_gamma = (
            EULER_GAMMA * shape
            + special.zeta(2.0) * shape**2 / 2.0
            + special.zeta(3.0) * shape**3 / 3.0
        )
        a = float(np.expm1(log_gamma) / shape) if shape != 0 else EULER_GAMMA
    else:
        a = (gamma_term - 1.0) / shape
    if shape == 0:
        b = -np.log(2.0)
    else:
        b = float(-np.expm1(shape * np.log(2.0)) / shape)
    return a, b, gamma_term


def gev_scalefree_lmoments(beta_gamma0: float, beta_xi0: float) -> Tuple[float, float]:
    """Population L-moments (I1, I2) of GEV(1, exp(beta_gamma0), beta_xi0)."""
    if not -1.0 < beta_xi0 < 1.0:
        raise DomainError("Shape must lie in (-1, 1) for finite L-moments")
    sigma = np.exp(beta_gamma0)
    a, b, g = _gev_lmom_terms(beta_xi0)
    return float(1.0 + sigma * a), float(-sigma * b * g)


def _scalefree_ratio(shape: float) -> float:
    a, b, g = _gev_lmom_terms(shape)
    return a / (-b * g)


@functools.lru_cache(maxsize=1)
def _scalefree_ratio_peak() -> Tuple[float, float]:
    res = optimize.minimize_scalar(
        lambda s: -_scalefree_ratio(s), bounds=(0.2, 0.99), method="bounded",
        options={"xatol": 1e-12},
    )
    return float(res.x), float(-res.fun)


def lmom_solve_gev_scalefree(l1: float, l2: float) -> Tuple[float, float]:
    """Solve the unit-location GEV L-moment equations for (beta_gamma0, beta_xi0).

    With location fixed at 1 the two equations reduce to
    ``(l1 - 1) / l2 = A(xi) / (-B(xi) Gamma(1 - xi))``, whose right side
    increases from 0 at ``xi = -1`` to a peak near ``xi = 0.65``; the root is
    taken on that increasing branch and the scale follows from ``l2``.
    """
    if not (np.isfinite(l1) and np.isfinite(l2)) or l2 <= 0:
        raise NumericalError("Second L-moment must be positive", {"l1": l1, "l2": l2})
    target = (l1 - 1.0) / l2
    peak_shape, peak_value = _scalefree_ratio_peak()
    lower = -1.0 + 1e-12
    if not 0.0 < target < peak_value:
        raise NumericalError(
            "No GEV shape in (-1, 1) matches these L-moments",
            {"l1": l1, "l2": l2, "ratio": target, "max_ratio": peak_value},
        )
    try:
        shape = optimize.brentq(
            lambda s: _scalefree_ratio(s) - target, lower, peak_shape, xtol=1e-14, maxiter=500
        )
    except (ValueError, RuntimeError) as e:
        raise NumericalError("L-moment root search failed", {"ratio": target}) from e
    _, b, g = _gev_lmom_terms(shape)
    sigma = l2 / (-b * g)
    return float(np.log(sigma)), float(shape)


# --------------------------------------------------------------------------
# GEV_r likelihood and designs


@dataclass(frozen=True)
class GevrDesign:
    """Per-block design matrices for GEV_r regression.

    Location uses an identity link, scale a log link and shape an identity
    link. Every matrix has n rows and an all-ones first column.
    """

    loc: np.ndarray
    scale: np.ndarray
    shape: np.ndarray

    def __post_init__(self) -> None:
        mats = []
        for name in ("loc", "scale", "shape"):
            mat = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if mat.shape[0] == 1 and mat.shape[1] > 1:
                mat = mat.T
            if not np.allclose(mat[:, 0], 1.0):
                raise DomainError(f"{name} design must start with an intercept column")
            if not np.all(np.isfinite(mat)):
                raise DomainError(f"{name} design contains non-finite values")
            object.__setattr__(self, name, mat)
            mats.append(mat)
        if len({m.shape[0] for m in mats}) != 1:
            raise DomainError("Design matrices must have the same number of rows")

    @property
    def n(self) -> int:
        return int(self.loc.shape[0])

    @property
    def is_stationary(self) -> bool:
        return self.loc.shape[1] == self.scale.shape[1] == self.shape.shape[1] == 1

    @classmethod
    def stationary(cls, n: int) -> "GevrDesign":
        ones = np.ones((n, 1))
        return cls(ones, ones.copy(), ones.copy())

    @classmethod
    def with_covariate(
        cls, covariate: Sequence[float], on: Sequence[str] = ("loc",)
    ) -> "GevrDesign":
        """Design with one covariate entering the named components."""
        x = np.asarray(covariate, dtype=float).ravel()
        ones = np.ones((x.size, 1))
        full = np.column_stack([ones, x])
        mats = {name: (full if name in on else ones) for name in ("loc", "scale", "shape")}
        return cls(mats["loc"], mats["scale"], mats["shape"])


@dataclass(frozen=True)
class GevrCoefficients:
    """Regression coefficients of a GEV_r fit on the original covariate scale."""

    loc: np.ndarray
    scale: np.ndarray
    shape: np.ndarray

    def params_at(self, design: GevrDesign, index: int) -> GevParams:
        return GevParams(
            float(design.loc[index] @ self.loc),
            float(np.exp(design.scale[index] @ self.scale)),
            float(design.shape[index] @ self.shape),
        )


def _column_scaling(mat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Centre and scale non-intercept columns.

    Returns the scaled matrix and the map ``A`` taking scaled-design
    coefficients to original-design coefficients.
    """
    p = mat.shape[1]
    scaled = mat.copy()
    a = np.eye(p)
    for j in range(1, p):
        centre = mat[:, j].mean()
        spread = mat[:, j].std()
        if spread == 0:
            raise DomainError(f"Covariate column {j} is constant")
        scaled[:, j] = (mat[:, j] - centre) / spread
        a[j, j] = 1.0 / spread
        a[0, j] = -centre / spread
    return scaled, a


class GevrLikelihood:
    """Stationary GEV_r log-likelihood with a standardized copy of the data.

    ``loglik`` takes natural parameters (mu, sigma, xi); ``std_loglik`` takes
    parameters for the standardized data ``(y - centre) / spread`` and
    differs from ``loglik`` by the constant ``-n r log(spread)``.
    """

    kind = "gevr"

    def __init__(self, sample: TopROrderSample):
        self.sample = sample
        values = sample.values
        self.centre = float(values[:, 0].mean())
        spread = float(values[:, 0].std())
        self.spread = spread if spread > 0 else float(np.ptp(values))
        self.std_values = (values - self.centre) / self.spread

    @property
    def n_obs(self) -> int:
        return self.sample.n

    def rows(self, theta: np.ndarray) -> np.ndarray:
        return gevr_loglik_rows(self.sample.values, theta[0], theta[1], theta[2])

    def loglik(self, theta: np.ndarray) -> float:
        return float(np.sum(self.rows(np.asarray(theta, float))))

    def std_loglik(self, theta_std: np.ndarray) -> float:
        return float(np.sum(gevr_loglik_rows(self.std_values, theta_std[0], theta_std[1], theta_std[2])))

    def to_std(self, theta: np.ndarray) -> np.ndarray:
        return np.array(
            [(theta[0] - self.centre) / self.spread, theta[1] / self.spread, theta[2]]
        )

    def to_natural(self, theta_std: np.ndarray) -> np.ndarray:
        return np.array(
            [self.centre + self.spread * theta_std[0], self.spread * theta_std[1], theta_std[2]]
        )


class GpdLikelihood:
    """GPD log-likelihood of excesses with a scale-standardized copy."""

    kind = "gpd"

    def __init__(self, excesses: np.ndarray):
        self.excesses = np.asarray(excesses, dtype=float)
        self.centre = 0.0
        self.spread = float(self.excesses.mean())
        self.std_values = self.excesses / self.spread

    @property
    def n_obs(self) -> int:
        return int(self.excesses.size)

    def rows(self, theta: np.ndarray) -> np.ndarray:
        return gpd_logpdf_arrays(self.excesses, theta[0], theta[1])

    def loglik(self, theta: np.ndarray) -> float:
        return float(np.sum(self.rows(np.asarray(theta, float))))

    def std_loglik(self, theta_std: np.ndarray) -> float:
        return float(np.sum(gpd_logpdf_arrays(self.std_values, theta_std[0], theta_std[1])))

    def to_std(self, theta: np.ndarray) -> np.ndarray:
        return np.array([theta[0] / self.spread, theta[1]])

    def to_natural(self, theta_std: np.ndarray) -> np.ndarray:
        return np.array([self.spread * theta_std[0], theta_std[1]])


def _gev_start(first_column: np.ndarray) -> GevParams:
    lm = fit_gev_lmom(first_column)
    if lm.converged:
        p = lm.coefficients
        return GevParams(p.loc, p.scale, float(np.clip(p.shape, -0.4, 0.4)))
    scale = max(float(np.std(first_column)) * np.sqrt(6.0) / np.pi, 1e-3)
    return GevParams(float(np.mean(first_column)) - EULER_GAMMA * scale, scale, 0.1)


def _shape_flags(shape: np.ndarray) -> List[str]:
    flags = []
    if np.any(np.asarray(shape) <= -0.5):
        flags.append("shape_below_-0.5")
        logger.warning(
            "Shape estimate at or below -0.5; likelihood-based standard errors are unreliable"
        )
    return flags


def fit_gevr_mle(
    sample: TopROrderSample, design: Optional[GevrDesign] = None
) -> FitResult:
    """Maximum likelihood fit of the GEV_r law, optionally with covariates.

    Without a design the coefficients are :class:`GevParams` and ``params``
    is (loc, scale, shape). With a :class:`GevrDesign` the coefficients are
    :class:`GevrCoefficients` on the original covariate scale; covariates are
    centred and scaled internally.

    Raises:
        DomainError: fewer than three blocks, constant data, or a design
            whose row count differs from the sample.
    """
    if sample.n < 3:
        raise DomainError(f"At least three blocks are needed, got {sample.n}")
    _check_degenerate(sample.values, "Sample")
    model = GevrLikelihood(sample)
    stationary = design is None or design.is_stationary
    if design is None:
        design = GevrDesign.stationary(sample.n)
    if design.n != sample.n:
        raise DomainError(f"Design has {design.n} rows but the sample has {sample.n} blocks")

    x_loc, a_loc = _column_scaling(design.loc)
    x_scale, a_scale = _column_scaling(design.scale)
    x_shape, a_shape = _column_scaling(design.shape)
    p_loc, p_scale, p_shape = x_loc.shape[1], x_scale.shape[1], x_shape.shape[1]
    y = model.std_values

    def unpack(beta: np.ndarray):
        b_loc = beta[:p_loc]
        b_scale = beta[p_loc:p_loc + p_scale]
        b_shape = beta[p_loc + p_scale:]
        return x_loc @ b_loc, np.exp(x_scale @ b_scale), x_shape @ b_shape

    def negloglik(beta: np.ndarray) -> float:
        loc, scale, shape = unpack(beta)
        return -float(np.sum(gevr_loglik_rows(y, loc, scale, shape)))

    start0 = _gev_start(y[:, 0])
    candidates = [
        (start0.loc, np.log(start0.scale), start0.shape),
        (start0.loc, np.log(start0.scale), 0.0),
    ]
    start = None
    for loc0, log_scale0, shape0 in candidates:
        beta0 = np.zeros(p_loc + p_scale + p_shape)
        beta0[0], beta0[p_loc], beta0[p_loc + p_scale] = loc0, log_scale0, shape0
        if np.isfinite(negloglik(beta0)):
            start = beta0
            break
    if start is None:
        beta0[p_loc + p_scale] = 0.0
        beta0[0] = float(np.max(y[:, -1])) + 1.0
        beta0[p_loc] = np.log(max(float(np.ptp(y)), 1.0))
        start = beta0

    res = _minimize(negloglik, start)
    beta_std = res.x
    converged = bool(res.success and np.isfinite(res.fun))
    loc_std, scale_std, shape_hat = unpack(beta_std)

    # standardized coefficients -> original covariates and data units
    t_map = np.zeros((beta_std.size, beta_std.size))
    t_map[:p_loc, :p_loc] = model.spread * a_loc
    t_map[p_loc:p_loc + p_scale, p_loc:p_loc + p_scale] = a_scale
    t_map[p_loc + p_scale:, p_loc + p_scale:] = a_shape
    offset = np.zeros(beta_std.size)
    offset[0] = model.centre
    offset[p_loc] = np.log(model.spread)
    beta = t_map @ beta_std + offset

    cov_std = _inverse_hessian(negloglik, beta_std) if converged else None
    flags = _shape_flags(shape_hat)
    if converged and np.any(shape_hat < -1):
        converged = False
        flags.append("likelihood_unbounded")
    if cov_std is None and converged:
        flags.append("covariance_unavailable")
    max_ll = -float(res.fun) - sample.n * sample.r * np.log(model.spread)

    if stationary:
        params = GevParams(float(beta[0]), float(np.exp(beta[1])), float(beta[2]))
        covariance = None
        if cov_std is not None:
            jac = np.diag([1.0, params.scale, 1.0]) @ t_map
            covariance = jac @ cov_std @ jac.T
        result = FitResult(
            coefficients=params,
            params=params.as_array(),
            param_names=("loc", "scale", "shape"),
            max_objective=max_ll,
            converged=converged,
            method="mle",
            covariance=covariance,
            n_obs=sample.n,
            flags=flags,
            message=str(res.message),
            model=model,
        )
    else:
        coefs = GevrCoefficients(
            beta[:p_loc], beta[p_loc:p_loc + p_scale], beta[p_loc + p_scale:]
        )
        names = (
            tuple(f"loc[{j}]" for j in range(p_loc))
            + tuple(f"log_scale[{j}]" for j in range(p_scale))
            + tuple(f"shape[{j}]" for j in range(p_shape))
        )
        result = FitResult(
            coefficients=coefs,
            params=beta,
            param_names=names,
            max_objective=max_ll,
            converged=converged,
            method="mle",
            covariance=None if cov_std is None else t_map @ cov_std @ t_map.T,
            n_obs=sample.n,
            flags=flags,
            message=str(res.message),
        )
    if not converged:
        logger.warning(f"GEV_r likelihood optimization did not converge: {res.message}")
    else:
        logger.debug(f"GEV_r fit (r={sample.r}, n={sample.n}): {result.params_dict()}")
    return result


# --------------------------------------------------------------------------
# GPD


def _validate_excesses(excesses: Sequence[float], minimum: int = 5) -> np.ndarray:
    y = np.asarray(excesses, dtype=float).ravel()
    if y.size < minimum:
        raise DomainError(f"At least {minimum} excesses are needed, got {y.size}")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise DomainError("Excesses must be finite and non-negative")
    _check_degenerate(y, "Excess sample")
    return y


def _gpd_start(y: np.ndarray) -> Tuple[float, float]:
    l1, l2 = sample_lmoments(y)
    shape = float(np.clip(2.0 - l1 / l2, -0.45, 0.9)) if l2 > 0 else 0.1
    scale = max(l1 * (1.0 - shape), 1e-6)
    if shape < 0 and np.max(y) >= -scale / shape:
        scale = -shape * np.max(y) * 1.05
    return scale, shape


def fit_gpd_mle(
    excesses: Sequence[float], covariance: bool = True, restarts: int = 2
) -> FitResult:
    """Maximum likelihood fit of the GPD to threshold excesses.

    ``covariance=False`` skips the Hessian, which Monte Carlo loops that only
    need the point estimate use.

    Raises:
        DomainError: fewer than five excesses, negative values or constant data.
    """
    y = _validate_excesses(excesses)
    model = GpdLikelihood(y)
    ys = model.std_values

    def negloglik(theta: np.ndarray) -> float:
        return -float(np.sum(gpd_logpdf_arrays(ys, np.exp(theta[0]), theta[1])))

    scale0, shape0 = _gpd_start(ys)
    start = np.array([np.log(scale0), shape0])
    if not np.isfinite(negloglik(start)):
        start = np.array([np.log(float(ys.mean())), 0.0])
    res = _minimize(negloglik, start, restarts=restarts)
    converged = bool(res.success and np.isfinite(res.fun))
    params = GpdParams(float(model.spread * np.exp(res.x[0])), float(res.x[1]))
    flags = _shape_flags(params.shape) if covariance else []
    if converged and params.shape < -1:
        converged = False
        flags.append("likelihood_unbounded")
    cov_opt = _inverse_hessian(negloglik, res.x) if converged and covariance else None
    cov_natural = None
    if cov_opt is not None:
        jac = np.diag([params.scale, 1.0])
        cov_natural = jac @ cov_opt @ jac.T
    elif converged and covariance:
        flags.append("covariance_unavailable")
    if not converged:
        logger.warning(f"GPD likelihood optimization did not converge: {res.message}")
    return FitResult(
        coefficients=params,
        params=params.as_array(),
        param_names=("scale", "shape"),
        max_objective=-float(res.fun) - y.size * np.log(model.spread),
        converged=converged,
        method="mle",
        covariance=cov_natural,
        n_obs=y.size,
        flags=flags,
        message=str(res.message),
        model=model,
    )


# --------------------------------------------------------------------------
# maximum product spacings


def spacings_objective(u: np.ndarray) -> float:
    """Moran's M for probabilities ``u`` of one sample.

    Tied probabilities are merged and their spacing counted with the tie's
    multiplicity, so exact ties never produce a zero spacing.
    """
    values, counts = np.unique(np.asarray(u, dtype=float), return_counts=True)
    spacings = np.diff(np.concatenate([[0.0], values, [1.0]]))
    if np.any(~(spacings > 0)):
        return np.inf
    weights = np.concatenate([counts, [1]])
    return -float(np.sum(weights * np.log(spacings)))


def _gev_cdf_arrays(y: np.ndarray, loc: Any, scale: Any, shape: Any) -> np.ndarray:
    """Elementwise GEV cdf; NaN wherever the scale is not positive."""
    y, loc, scale, shape = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(loc, float), np.asarray(scale, float), np.asarray(shape, float)
    )
    positive = scale > 0
    z = (y - loc) / np.where(positive, scale, 1.0)
    inside = (np.abs(shape) < SHAPE_ZERO_TOL) | (1.0 + shape * z > 0)
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.exp(-np.exp(-_log1p_ratio(np.where(inside, z, 0.0), shape)))
    out = np.where(inside, out, np.where(shape < 0, 1.0, 0.0))
    return np.where(positive, out, np.nan)


def fit_mps(data: Sequence[float], family: str = "gev") -> FitResult:
    """Maximum product spacings fit of a GEV or GPD sample.

    Minimizes ``M(theta) = -sum log D_i`` over the spacings of the fitted
    distribution function at the ordered data, with ``F(y_(0)) = 0`` and
    ``F(y_(n+1)) = 1``. Unlike the MLE it is defined for any shape.
    """
    if family not in ("gev", "gpd"):
        raise DomainError(f"Unknown family {family!r}; expected 'gev' or 'gpd'")
    if family == "gpd":
        y = _validate_excesses(data)
        model: Union[GevrLikelihood, GpdLikelihood] = GpdLikelihood(y)
        ys = np.sort(model.std_values)

        def objective(theta: np.ndarray) -> float:
            scale, shape = np.exp(theta[0]), theta[1]
            x = ys / scale
            inside = (np.abs(shape) < SHAPE_ZERO_TOL) | (1.0 + shape * x > 0)
            u = np.where(inside, -np.expm1(-_log1p_ratio(np.where(inside, x, 0.0), shape)), 1.0)
            return spacings_objective(u)

        scale0, shape0 = _gpd_start(ys)
        start = np.array([np.log(scale0), shape0])
        if not np.isfinite(objective(start)):
            start = np.array([np.log(float(ys.mean())), 0.0])
    else:
        x = np.asarray(data, dtype=float).ravel()
        if x.size < 5:
            raise DomainError(f"At least five observations are needed, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise DomainError("Data must be finite")
        _check_degenerate(x, "Sample")
        model = GevrLikelihood(TopROrderSample(x))
        ys = np.sort(model.std_values[:, 0])

        def objective(theta: np.ndarray) -> float:
            u = _gev_cdf_arrays(ys, theta[0], np.exp(theta[1]), theta[2])
            return spacings_objective(u)

        p0 = _gev_start(ys)
        start = np.array([p0.loc, np.log(p0.scale), p0.shape])
        if not np.isfinite(objective(start)):
            start[2] = 0.0

    res = _minimize(objective, start)
    converged = bool(res.success and np.isfinite(res.fun))
    cov_opt = _inverse_hessian(objective, res.x) if converged else None
    flags: List[str] = []
    if family == "gpd":
        params: Union[GevParams, GpdParams] = GpdParams(
            float(model.spread * np.exp(res.x[0])), float(res.x[1])
        )
        jac = np.diag([params.scale, 1.0])
        names: Tuple[str, ...] = ("scale", "shape")
    else:
        params = GevParams(
            float(model.centre + model.spread * res.x[0]),
            float(model.spread * np.exp(res.x[1])),
            float(res.x[2]),
        )
        jac = np.diag([model.spread, params.scale, 1.0])
        names = ("loc", "scale", "shape")
    covariance = None if cov_opt is None else jac @ cov_opt @ jac.T
    if converged and covariance is None:
        flags.append("covariance_unavailable")
    if not converged:
        logger.warning(f"MPS optimization did not converge: {res.message}")
    return FitResult(
        coefficients=params,
        params=params.as_array(),
        param_names=names,
        max_objective=-float(res.fun),
        converged=converged,
        method="mps",
        covariance=covariance,
        n_obs=int(ys.size),
        flags=flags,
        message=str(res.message),
        model=model,
    )


# --------------------------------------------------------------------------
# regional flood-index models


@dataclass(frozen=True)
class LinkedModelSpec:
    """Design matrices of the flood-index model for m sites and n periods.

    ``loc_design`` is (m*n) x (m + p_mu) with rows ordered site by site and
    the first m columns the site indicators; ``propscale_design`` and
    ``shape_design`` are n x p with an intercept first column. Links are
    identity for location and shape and exponential for the scale
    proportionality gamma.
    """

    m: int
    n: int
    loc_design: np.ndarray
    propscale_design: np.ndarray
    shape_design: np.ndarray

    def __post_init__(self) -> None:
        loc = np.atleast_2d(np.asarray(self.loc_design, dtype=float))
        prop = np.atleast_2d(np.asarray(self.propscale_design, dtype=float))
        shape = np.atleast_2d(np.asarray(self.shape_design, dtype=float))
        m, n = self.m, self.n
        if loc.shape[0] != m * n or loc.shape[1] < m:
            raise DomainError(f"Location design must be {m * n} x (>= {m}), got {loc.shape}")
        indicators = np.kron(np.eye(m), np.ones((n, 1)))
        if not np.array_equal(loc[:, :m], indicators):
            raise DomainError("First m location columns must be site indicators")
        for name, mat in (("propscale", prop), ("shape", shape)):
            if mat.shape[0] != n:
                raise DomainError(f"{name} design must have {n} rows, got {mat.shape[0]}")
            if not np.allclose(mat[:, 0], 1.0):
                raise DomainError(f"{name} design must start with an intercept column")
        object.__setattr__(self, "loc_design", loc)
        object.__setattr__(self, "propscale_design", prop)
        object.__setattr__(self, "shape_design", shape)

    @property
    def link_tags(self) -> Tuple[str, str, str]:
        return ("identity", "exp", "identity")

    @property
    def p_mu(self) -> int:
        return self.loc_design.shape[1] - self.m

    @property
    def n_coefficients(self) -> int:
        return self.loc_design.shape[1] + self.propscale_design.shape[1] + self.shape_design.shape[1]

    @property
    def is_stationary(self) -> bool:
        return self.p_mu == 0 and self.propscale_design.shape[1] == 1 and self.shape_design.shape[1] == 1

    def nonstationary_mask(self) -> np.ndarray:
        """Boolean mask over the stacked coefficient vector of non-intercept terms."""
        mask = np.zeros(self.n_coefficients, dtype=bool)
        m_cols = self.loc_design.shape[1]
        p_gamma = self.propscale_design.shape[1]
        mask[self.m:m_cols] = True
        mask[m_cols + 1:m_cols + p_gamma] = True
        mask[m_cols + p_gamma + 1:] = True
        return mask

    @classmethod
    def build(
        cls,
        m: int,
        n: int,
        loc_covariates: Optional[np.ndarray] = None,
        propscale_covariates: Optional[np.ndarray] = None,
        shape_covariates: Optional[np.ndarray] = None,
    ) -> "LinkedModelSpec":
        """Assemble a spec from covariate columns (intercepts added here).

        ``loc_covariates`` may be n x p (shared by all sites) or (m*n) x p.
        """
        indicators = np.kron(np.eye(m), np.ones((n, 1)))
        loc = indicators
        if loc_covariates is not None:
            cov = np.asarray(loc_covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            if cov.shape[0] == n:
                cov = np.tile(cov, (m, 1))
            loc = np.column_stack([indicators, cov])

        def with_intercept(cov: Optional[np.ndarray]) -> np.ndarray:
            ones = np.ones((n, 1))
            if cov is None:
                return ones
            return np.column_stack([ones, np.asarray(cov, dtype=float).reshape(n, -1)])

        return cls(m, n, loc, with_intercept(propscale_covariates), with_intercept(shape_covariates))

    @classmethod
    def stationary(cls, m: int, n: int) -> "LinkedModelSpec":
        return cls.build(m, n)


@dataclass(frozen=True)
class CoefficientSet:
    """Flood-index coefficients (beta_mu, beta_gamma, beta_xi)."""

    beta_mu: np.ndarray
    beta_gamma: np.ndarray
    beta_xi: np.ndarray

    @property
    def beta_gamma0(self) -> float:
        return float(self.beta_gamma[0])

    @property
    def beta_xi0(self) -> float:
        return float(self.beta_xi[0])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta_mu, self.beta_gamma, self.beta_xi]).astype(float)

    @classmethod
    def from_vector(cls, vector: np.ndarray, spec: LinkedModelSpec) -> "CoefficientSet":
        vector = np.asarray(vector, dtype=float)
        k_mu = spec.loc_design.shape[1]
        k_gamma = spec.propscale_design.shape[1]
        return cls(vector[:k_mu].copy(), vector[k_mu:k_mu + k_gamma].copy(), vector[k_mu + k_gamma:].copy())

    def implied(self, spec: LinkedModelSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Location and scale (m x n) and shape (n) implied by the links."""
        mu = (spec.loc_design @ self.beta_mu).reshape(spec.m, spec.n)
        gamma = np.exp(spec.propscale_design @ self.beta_gamma)
        xi = spec.shape_design @ self.beta_xi
        return mu, gamma[None, :] * mu, xi


def _coefficient_names(spec: LinkedModelSpec) -> Tuple[str, ...]:
    return (
        tuple(f"beta_mu[{j}]" for j in range(spec.loc_design.shape[1]))
        + tuple(f"beta_gamma[{j}]" for j in range(spec.propscale_design.shape[1]))
        + tuple(f"beta_xi[{j}]" for j in range(spec.shape_design.shape[1]))
    )


def _validate_regional(data: np.ndarray, spec: LinkedModelSpec) -> np.ndarray:
    y = np.asarray(data, dtype=float)
    if y.ndim != 2 or y.shape != (spec.m, spec.n):
        raise DomainError(f"Data must be {spec.m} x {spec.n} (sites x periods), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DomainError("Regional data must be complete and finite")
    for s in range(spec.m):
        _check_degenerate(y[s], f"Site {s}")
    return y


def rfa_loglik(data: np.ndarray, spec: LinkedModelSpec, coefs: CoefficientSet) -> float:
    """Independence log-likelihood summed over sites and periods."""
    mu, sigma, xi = coefs.implied(spec)
    return float(np.sum(gev_logpdf_arrays(data, mu, sigma, xi[None, :])))


def frechet_transform(y: Any, params: GevParams) -> Any:
    """Map GEV(mu, sigma, xi) values to the unit Frechet scale.

    ``z = (1 + xi (y - mu) / sigma) ** (1 / xi)``, ``exp((y - mu) / sigma)``
    at xi = 0; ``exp(-1 / z)`` is the GEV distribution function of y.

    Raises:
        DomainError: a value lies outside the GEV support.
    """
    yy = np.asarray(y, dtype=float)
    z = (yy - params.loc) / params.scale
    if abs(params.shape) >= SHAPE_ZERO_TOL and np.any(1.0 + params.shape * z <= 0):
        raise DomainError("Value outside the GEV support")
    out = np.exp(_log1p_ratio(z, np.full_like(z, params.shape)))
    return float(out) if np.ndim(y) == 0 else out


def frechet_inverse(z: Any, params: GevParams) -> Any:
    """Inverse of :func:`frechet_transform`."""
    zz = np.asarray(z, dtype=float)
    if np.any(zz <= 0):
        raise DomainError("Unit Frechet values must be positive")
    log_z = np.log(zz)
    if abs(params.shape) < SHAPE_ZERO_TOL:
        out = params.loc + params.scale * log_z
    else:
        out = params.loc + params.scale * np.expm1(params.shape * log_z) / params.shape
    return float(out) if np.ndim(z) == 0 else out


def _rfa_mps_objective(data: np.ndarray, spec: LinkedModelSpec, coefs: CoefficientSet) -> float:
    mu, sigma, xi = coefs.implied(spec)
    if np.any(sigma <= 0):
        return np.inf
    xi_b = np.broadcast_to(xi[None, :], data.shape)
    z = (data - mu) / sigma
    inside = (np.abs(xi_b) < SHAPE_ZERO_TOL) | (1.0 + xi_b * z > 0)
    if not np.all(inside):
        return np.inf
    frechet = np.exp(_log1p_ratio(z, xi_b))
    u = np.exp(-1.0 / frechet)
    return float(sum(spacings_objective(np.sort(u[s])) for s in range(spec.m)))


def _rfa_lmom_start(data: np.ndarray, spec: LinkedModelSpec) -> CoefficientSet:
    """Stationary L-moment starting values for a regional fit."""
    locs = np.empty(spec.m)
    for s in range(spec.m):
        lm = fit_gev_lmom(data[s])
        locs[s] = lm.coefficients.loc if lm.converged else float(np.median(data[s]))
    locs = np.where(locs > 0, locs, np.maximum(np.abs(data).mean(axis=1), 1e-6))
    pooled = (data / locs[:, None]).ravel()
    l1, l2 = sample_lmoments(pooled)
    try:
        gamma0, xi0 = lmom_solve_gev_scalefree(l1, l2)
    except NumericalError:
        lm = fit_gev_lmom(pooled)
        if lm.converged:
            gamma0 = float(np.log(lm.coefficients.scale / max(lm.coefficients.loc, 1e-6)))
            xi0 = float(np.clip(lm.coefficients.shape, -0.4, 0.4))
        else:
            gamma0, xi0 = float(np.log(max(l2, 1e-6))), 0.0
    beta_mu = np.concatenate([locs, np.zeros(spec.p_mu)])
    beta_gamma = np.zeros(spec.propscale_design.shape[1])
    beta_gamma[0] = gamma0
    beta_xi = np.zeros(spec.shape_design.shape[1])
    beta_xi[0] = xi0
    return CoefficientSet(beta_mu, beta_gamma, beta_xi)


def _failed_rfa(spec: LinkedModelSpec, method: str, message: str, coefs: Optional[CoefficientSet] = None, trace: Optional[List[float]] = None) -> FitResult:
    vector = coefs.to_vector() if coefs is not None else np.full(spec.n_coefficients, np.nan)
    return FitResult(
        coefficients=coefs,
        params=vector,
        param_names=_coefficient_names(spec),
        max_objective=-np.inf,
        converged=False,
        method=method,
        n_obs=spec.m * spec.n,
        trace=list(trace or []),
        message=message,
    )


def _fit_rfa_direct(
    data: np.ndarray,
    spec: LinkedModelSpec,
    method: str,
    objective: Callable[[CoefficientSet], float],
    start: Optional[CoefficientSet],
) -> FitResult:
    def vector_objective(vec: np.ndarray) -> float:
        return objective(CoefficientSet.from_vector(vec, spec))

    starts = []
    if start is not None:
        starts.append(start)
    starts.append(_rfa_lmom_start(data, spec))
    res = None
    for candidate in starts + [None]:
        if candidate is None:
            hybrid = fit_rfa_hybrid(data, spec)
            if hybrid.coefficients is None:
                break
            candidate = hybrid.coefficients
            logger.debug(f"Retrying {method} fit from hybrid estimates")
        x0 = candidate.to_vector()
        if not np.isfinite(vector_objective(x0)):
            continue
        res = _minimize(vector_objective, x0)
        if res.success and np.isfinite(res.fun):
            break
    if res is None:
        logger.warning(f"Regional {method} fit has no feasible starting point")
        return _failed_rfa(spec, method, "no feasible starting point")
    coefs = CoefficientSet.from_vector(res.x, spec)
    converged = bool(res.success and np.isfinite(res.fun))
    covariance = _inverse_hessian(vector_objective, res.x) if converged else None
    flags = _shape_flags(coefs.beta_xi0)
    if converged and covariance is None:
        flags.append("covariance_unavailable")
    if not converged:
        logger.warning(f"Regional {method} optimization did not converge: {res.message}")
    return FitResult(
        coefficients=coefs,
        params=coefs.to_vector(),
        param_names=_coefficient_names(spec),
        max_objective=-float(res.fun),
        converged=converged,
        method=method,
        covariance=covariance,
        n_obs=spec.m * spec.n,
        flags=flags,
        message=str(res.message),
    )


def fit_rfa_mle(
    data: np.ndarray, spec: LinkedModelSpec, start: Optional[CoefficientSet] = None
) -> FitResult:
    """Independence maximum likelihood fit of the flood-index model."""
    y = _validate_regional(data, spec)
    return _fit_rfa_direct(y, spec, "mle", lambda c: -rfa_loglik(y, spec, c), start)


def fit_rfa_mps(
    data: np.ndarray, spec: LinkedModelSpec, start: Optional[CoefficientSet] = None
) -> FitResult:
    """Maximum product spacings fit of the flood-index model.

    Each value is mapped to the unit Frechet scale with its own site and
    period parameters; spacings are formed within each site and their
    negative log sums are added over sites.
    """
    y = _validate_regional(data, spec)
    return _fit_rfa_direct(y, spec, "mps", lambda c: _rfa_mps_objective(y, spec, c), start)


def fit_rfa_hybrid(
    data: np.ndarray,
    spec: LinkedModelSpec,
    tol: float = HYBRID_TOL,
    max_iter: int = HYBRID_MAX_ITER,
) -> FitResult:
    """Iterative hybrid L-moment / likelihood fit of the flood-index model.

    Each iteration transforms the data to site-stationary margins, takes
    per-site L-moment locations, solves the pooled scale-free L-moment
    equations for the shared intercepts (shape kept above -1), then
    maximizes the likelihood over the non-stationary coefficients alone.
    Iteration stops when the log-likelihood changes by less than ``tol``.
    An iteration that would lower the log-likelihood is discarded and the
    previous iterate returned, so the recorded trace never decreases.
    """
    y = _validate_regional(data, spec)
    coefs = _rfa_lmom_start(y, spec)
    mask = spec.nonstationary_mask()
    has_trend = bool(mask.any())
    trace: List[float] = []
    converged = False
    flags: List[str] = []

    for iteration in range(1, max_iter + 1):
        if has_trend:
            mu, sigma, xi = coefs.implied(spec)
            u = _gev_cdf_arrays(y, mu, sigma, xi[None, :])
            if np.any(~np.isfinite(u)):
                return _failed_rfa(spec, "hybrid", "non-positive implied scale", coefs, trace)
            u = np.clip(u, 1e-300, 1.0 - 1e-16)
            site_loc = coefs.beta_mu[:spec.m][:, None]
            stationary = _gev_ppf_neglog(
                -np.log(u), site_loc, site_loc * np.exp(coefs.beta_gamma0), coefs.beta_xi0
            )
        else:
            stationary = y

        locs = np.empty(spec.m)
        for s in range(spec.m):
            lm = fit_gev_lmom(stationary[s])
            if not lm.converged or lm.coefficients.loc <= 0:
                return _failed_rfa(spec, "hybrid", f"site {s} L-moment location not positive", coefs, trace)
            locs[s] = lm.coefficients.loc
        l1, l2 = sample_lmoments((stationary / locs[:, None]).ravel())
        try:
            gamma0, xi0 = lmom_solve_gev_scalefree(l1, l2)
        except NumericalError as e:
            logger.debug(f"Hybrid L-moment step failed: {e}")
            return _failed_rfa(spec, "hybrid", str(e), coefs, trace)

        beta_mu = coefs.beta_mu.copy()
        beta_mu[:spec.m] = locs
        beta_gamma = coefs.beta_gamma.copy()
        beta_gamma[0] = gamma0
        beta_xi = coefs.beta_xi.copy()
        beta_xi[0] = xi0
        candidate = CoefficientSet(beta_mu, beta_gamma, beta_xi)

        if has_trend:
            fixed = candidate.to_vector()

            def negloglik(free: np.ndarray) -> float:
                vec = fixed.copy()
                vec[mask] = free
                return -rfa_loglik(y, spec, CoefficientSet.from_vector(vec, spec))

            free0 = fixed[mask]
            if not np.isfinite(negloglik(free0)):
                free0 = np.zeros_like(free0)
            res = _minimize(negloglik, free0)
            if np.isfinite(res.fun):
                vec = fixed.copy()
                vec[mask] = res.x
                candidate = CoefficientSet.from_vector(vec, spec)

        loglik = rfa_loglik(y, spec, candidate)
        logger.debug(f"Hybrid iteration {iteration}: log-likelihood {loglik:.6f}")
        if trace and loglik < trace[-1] - tol:
            flags.append("stopped_on_decrease")
            converged = True
            break
        coefs = candidate
        trace.append(loglik)
        if not has_trend:
            converged = True
            break
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Hybrid fit did not converge within {max_iter} iterations")
    if not np.isfinite(trace[-1] if trace else -np.inf):
        converged = False
    flags.extend(_shape_flags(coefs.beta_xi0))
    return FitResult(
        coefficients=coefs,
        params=coefs.to_vector(),
        param_names=_coefficient_names(spec),
        max_objective=trace[-1] if trace else -np.inf,
        converged=converged,
        method="hybrid",
        n_obs=spec.m * spec.n,
        flags=flags,
        trace=trace,
        message=f"{len(trace)} iterations"
        + ("; stopped on a log-likelihood decrease" if "stopped_on_decrease" in flags else ""),
    )


REGIONAL_FITTERS = {
    "mle": fit_rfa_mle,
    "mps": fit_rfa_mps,
    "hybrid": fit_rfa_hybrid,
}

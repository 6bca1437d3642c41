"""Distribution kernels for the GEV, GEV_r, GPD and KumGEV laws.

All kernels accept scalars or numpy arrays and return the same kind. The
shape parameter switches to the Gumbel / exponential branch when
``|shape| < SHAPE_ZERO_TOL``; otherwise powers of ``1 + shape * z`` are
evaluated as ``exp(log1p(shape * z) / shape)`` so results stay continuous in
the shape at zero.

Sampling functions take an explicit seed (``int``, ``SeedSequence`` or
``Generator``) and never touch global random state.
"""

import logging
from dataclasses import dataclass
from typing import List, Union

import numpy as np
from scipy import optimize

from .errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

SHAPE_ZERO_TOL = 1e-8

ArrayLike = Union[float, np.ndarray]
SeedLike = Union[None, int, np.random.SeedSequence, np.random.Generator]


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Return a numpy Generator for ``seed``, passing Generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_generators(seed: SeedLike, count: int) -> List[np.random.Generator]:
    """Derive ``count`` independent generators from ``seed``.

    Child ``k`` depends only on ``(seed, k)``, so replicate ``k`` draws the
    same numbers whether it runs inline or in a worker process.
    """
    if isinstance(seed, np.random.Generator):
        root = np.random.SeedSequence(int(seed.integers(0, 2**63 - 1)))
    elif isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in root.spawn(count)]


def _scalar_or_array(value: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class GevParams:
    """GEV location, scale and shape (mu, sigma, xi)."""

    loc: float
    scale: float
    shape: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.loc) and np.isfinite(self.shape)):
            raise DomainError(f"GEV location and shape must be finite: {self}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"GEV scale must be positive, got {self.scale}")

    def as_array(self) -> np.ndarray:
        return np.array([self.loc, self.scale, self.shape], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "GevParams":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True)
class GpdParams:
    """GPD scale and shape for excesses over a threshold."""

    scale: float
    shape: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.shape):
            raise DomainError(f"GPD shape must be finite, got {self.shape}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"GPD scale must be positive, got {self.scale}")

    @property
    def upper_endpoint(self) -> float:
        if self.shape < 0:
            return -self.scale / self.shape
        return float(np.inf)

    def as_array(self) -> np.ndarray:
        return np.array([self.scale, self.shape], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "GpdParams":
        return cls(float(values[0]), float(values[1]))


@dataclass(frozen=True)
class KumGevParams:
    """Kumaraswamy-GEV law F = 1 - (1 - G**a)**b built on a GEV base G."""

    base: GevParams
    a: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"KumGEV a and b must be positive, got a={self.a}, b={self.b}")


class TopROrderSample:
    """The r largest observations of each of n blocks, one row per block.

    Rows must be strictly decreasing: ``values[i, 0] > ... > values[i, r-1]``.
    """

    def __init__(self, values: np.ndarray):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DomainError(f"Top-r sample must be an n x r matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("Top-r sample contains non-finite values")
        if values.shape[1] > 1:
            bad = np.flatnonzero(np.any(np.diff(values, axis=1) >= 0, axis=1))
            if bad.size:
                raise DomainError(
                    f"Top-r rows must be strictly decreasing; {bad.size} rows are not "
                    f"(first offending row {int(bad[0])})"
                )
        values.setflags(write=False)
        self._values = values

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def n(self) -> int:
        return int(self._values.shape[0])

    @property
    def r(self) -> int:
        return int(self._values.shape[1])

    def first(self, r: int) -> "TopROrderSample":
        """Keep only the ``r`` largest values of each block."""
        if not 1 <= r <= self.r:
            raise DomainError(f"Requested depth r={r} but sample has r={self.r}")
        return TopROrderSample(self._values[:, :r])

    def affine(self, a: float, b: float) -> "TopROrderSample":
        """Return the sample of ``a * y + b`` (``a > 0``)."""
        if a <= 0:
            raise DomainError("Affine scale must be positive")
        return TopROrderSample(a * self._values + b)

    def __repr__(self) -> str:
        return f"TopROrderSample(n={self.n}, r={self.r})"


def _log1p_ratio(z: np.ndarray, shape: np.ndarray) -> np.ndarray:
    """log(1 + shape*z) / shape with the z limit at shape == 0."""
    small = np.abs(shape) < SHAPE_ZERO_TOL
    safe_shape = np.where(small, 1.0, shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        general = np.log1p(safe_shape * z) / safe_shape
    return np.where(small, z, general)


def _in_support(z: np.ndarray, shape: np.ndarray) -> np.ndarray:
    small = np.abs(shape) < SHAPE_ZERO_TOL
    return small | (1.0 + shape * z > 0)


def _check_probability(p: np.ndarray, name: str = "p") -> None:
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")


def gev_cdf(y: ArrayLike, params: GevParams) -> ArrayLike:
    """GEV distribution function.

    Points beyond the upper endpoint (shape < 0) give exactly 1 and points
    below the lower endpoint (shape > 0) give exactly 0.
    """
    yy = np.asarray(y, dtype=float)
    z = (yy - params.loc) / params.scale
    xi = np.full_like(z, params.shape)
    inside = _in_support(z, xi)
    with np.errstate(over="ignore"):
        out = np.exp(-np.exp(-_log1p_ratio(np.where(inside, z, 0.0), xi)))
    outside_value = 1.0 if params.shape < 0 else 0.0
    out = np.where(inside, out, outside_value)
    return _scalar_or_array(out, y)


def gev_logpdf_arrays(
    y: np.ndarray, loc: np.ndarray, scale: np.ndarray, shape: np.ndarray
) -> np.ndarray:
    """Elementwise GEV log density with broadcast parameter arrays.

    Returns -inf outside the support or where the scale is not positive.
    """
    y, loc, scale, shape = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(loc, float), np.asarray(scale, float), np.asarray(shape, float)
    )
    positive = scale > 0
    safe_scale = np.where(positive, scale, 1.0)
    z = (y - loc) / safe_scale
    inside = _in_support(z, shape) & positive
    zz = np.where(inside, z, 0.0)
    log_w = _log1p_ratio(zz, shape)
    with np.errstate(over="ignore"):
        out = -np.log(safe_scale) - (shape + 1.0) * log_w - np.exp(-log_w)
    return np.where(inside, out, -np.inf)


def gev_logpdf(y: ArrayLike, params: GevParams) -> ArrayLike:
    out = gev_logpdf_arrays(np.asarray(y, float), params.loc, params.scale, params.shape)
    return _scalar_or_array(out, y)


def gev_pdf(y: ArrayLike, params: GevParams) -> ArrayLike:
    out = np.exp(gev_logpdf_arrays(np.asarray(y, float), params.loc, params.scale, params.shape))
    return _scalar_or_array(out, y)


def _gev_ppf_neglog(s: np.ndarray, loc: ArrayLike, scale: ArrayLike, shape: ArrayLike) -> np.ndarray:
    """GEV quantile at probability exp(-s), s > 0."""
    shape = np.asarray(shape, dtype=float)
    small = np.abs(shape) < SHAPE_ZERO_TOL
    safe_shape = np.where(small, 1.0, shape)
    log_s = np.log(s)
    general = np.expm1(-safe_shape * log_s) / safe_shape
    return np.asarray(loc) + np.asarray(scale) * np.where(small, -log_s, general)


def gev_quantile(p: ArrayLike, params: GevParams) -> ArrayLike:
    """Inverse of :func:`gev_cdf` for ``0 < p < 1``."""
    pp = np.asarray(p, dtype=float)
    _check_probability(pp)
    out = _gev_ppf_neglog(-np.log(pp), params.loc, params.scale, params.shape)
    return _scalar_or_array(out, p)


def gevr_loglik_rows(
    values: np.ndarray, loc: ArrayLike, scale: ArrayLike, shape: ArrayLike
) -> np.ndarray:
    """Per-block GEV_r log densities for an n x r matrix.

    ``loc``, ``scale`` and ``shape`` are scalars or length-n vectors. Rows
    violating the support, or with a non-positive scale, give -inf.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n, r = values.shape
    loc = np.broadcast_to(np.asarray(loc, float), (n,))[:, None]
    scale = np.broadcast_to(np.asarray(scale, float), (n,))[:, None]
    shape = np.broadcast_to(np.asarray(shape, float), (n,))[:, None]
    positive = scale[:, 0] > 0
    safe_scale = np.where(scale > 0, scale, 1.0)
    z = (values - loc) / safe_scale
    xi = np.broadcast_to(shape, z.shape)
    inside = np.all(_in_support(z, xi), axis=1) & positive
    zz = np.where(inside[:, None], z, 0.0)
    log_w = _log1p_ratio(zz, xi)
    with np.errstate(over="ignore"):
        out = (
            -r * np.log(safe_scale[:, 0])
            - np.exp(-log_w[:, -1])
            - (shape[:, 0] + 1.0) * log_w.sum(axis=1)
        )
    return np.where(inside, out, -np.inf)


def gevr_log_density(row: np.ndarray, params: GevParams) -> float:
    """Joint log density of one block's r largest values.

    At r = 1 this is the GEV log density. Support violations give -inf,
    which optimizers treat as a penalty.
    """
    row = np.asarray(row, dtype=float).ravel()
    if row.size == 0:
        raise DomainError("Empty row")
    if np.any(np.isnan(row)):
        raise DomainError("Row contains NaN")
    if row.size > 1 and np.any(np.diff(row) >= 0):
        raise DomainError("Row must be strictly decreasing")
    return float(gevr_loglik_rows(row[None, :], params.loc, params.scale, params.shape)[0])


def gpd_cdf(y: ArrayLike, params: GpdParams) -> ArrayLike:
    """GPD distribution function of excesses, clamped to {0, 1} off support."""
    yy = np.asarray(y, dtype=float)
    x = np.maximum(yy, 0.0) / params.scale
    xi = np.full_like(x, params.shape)
    inside = _in_support(x, xi)
    out = -np.expm1(-_log1p_ratio(np.where(inside, x, 0.0), xi))
    out = np.where(inside, out, 1.0)
    out = np.where(yy <= 0, 0.0, out)
    return _scalar_or_array(out, y)


def gpd_logpdf_arrays(y: np.ndarray, scale: ArrayLike, shape: ArrayLike) -> np.ndarray:
    y, scale, shape = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(scale, float), np.asarray(shape, float)
    )
    positive = scale > 0
    safe_scale = np.where(positive, scale, 1.0)
    x = y / safe_scale
    inside = (y >= 0) & _in_support(x, shape) & positive
    log_w = _log1p_ratio(np.where(inside, x, 0.0), shape)
    out = -np.log(safe_scale) - (shape + 1.0) * log_w
    return np.where(inside, out, -np.inf)


def gpd_logpdf(y: ArrayLike, params: GpdParams) -> ArrayLike:
    out = gpd_logpdf_arrays(np.asarray(y, float), params.scale, params.shape)
    return _scalar_or_array(out, y)


def gpd_pdf(y: ArrayLike, params: GpdParams) -> ArrayLike:
    out = np.exp(gpd_logpdf_arrays(np.asarray(y, float), params.scale, params.shape))
    return _scalar_or_array(out, y)


def _gpd_ppf(q: np.ndarray, scale: float, shape: float) -> np.ndarray:
    neg_log_tail = -np.log1p(-q)
    if abs(shape) < SHAPE_ZERO_TOL:
        return scale * neg_log_tail
    return scale * np.expm1(shape * neg_log_tail) / shape


def gpd_quantile(q: ArrayLike, params: GpdParams) -> ArrayLike:
    """Inverse of :func:`gpd_cdf` for ``0 < q < 1``."""
    qq = np.asarray(q, dtype=float)
    _check_probability(qq, "q")
    return _scalar_or_array(_gpd_ppf(qq, params.scale, params.shape), q)


def sample_gevr(n: int, r: int, params: GevParams, seed: SeedLike = None) -> TopROrderSample:
    """Draw n blocks of the r largest order statistics from the GEV_r law.

    The first value of each block is GEV; each following value is GEV
    right-truncated at its predecessor. On the probability scale this is the
    cumulative product of r uniforms, drawn here as cumulative sums of
    standard exponentials (``-log U``).
    """
    if n < 1 or r < 1:
        raise DomainError(f"n and r must be at least 1, got n={n}, r={r}")
    rng = as_generator(seed)
    neg_log_w = np.cumsum(rng.standard_exponential((n, r)), axis=1)
    values = _gev_ppf_neglog(neg_log_w, params.loc, params.scale, params.shape)
    return TopROrderSample(values)


def gev_truncated_draw(
    params: GevParams, upper: ArrayLike, seed: SeedLike = None
) -> ArrayLike:
    """Draw from the GEV right-truncated at ``upper`` (one draw per bound)."""
    rng = as_generator(seed)
    bound = np.asarray(upper, dtype=float)
    g_upper = np.asarray(gev_cdf(bound, params), dtype=float)
    if np.any(g_upper <= 0):
        raise DomainError("Truncation bound lies below the GEV support")
    s = -np.log(g_upper) + rng.standard_exponential(bound.shape)
    return _scalar_or_array(_gev_ppf_neglog(s, params.loc, params.scale, params.shape), upper)


def sample_gpd(n: int, params: GpdParams, seed: SeedLike = None) -> np.ndarray:
    """Inverse-transform sample of n GPD excesses."""
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    rng = as_generator(seed)
    return _gpd_ppf(rng.random(n), params.scale, params.shape)


def kumgev_cdf(y: ArrayLike, params: KumGevParams) -> ArrayLike:
    g = np.asarray(gev_cdf(np.asarray(y, float), params.base), dtype=float)
    out = -np.expm1(params.b * np.log1p(-(g ** params.a)))
    return _scalar_or_array(out, y)


def _kumgev_inverse_probability(
    target: float, g_upper: float, a: float, b: float
) -> float:
    """Solve 1 - (1 - g**a)**b = target for the base probability g."""

    def gap(g: float) -> float:
        return float(-np.expm1(b * np.log1p(-(g**a)))) - target

    try:
        return float(
            optimize.brentq(gap, 0.0, g_upper, xtol=1e-10 * max(g_upper, 1e-300), maxiter=500)
        )
    except (ValueError, RuntimeError) as e:
        raise NumericalError(
            "KumGEV inversion failed",
            {"target": target, "bracket": (0.0, g_upper), "a": a, "b": b},
        ) from e


def kumgev_truncated_draw(
    params: KumGevParams, upper: ArrayLike, seed: SeedLike = None
) -> ArrayLike:
    """Draw from the KumGEV law right-truncated at ``upper``.

    The distribution function is inverted numerically on the base
    probability scale with a bracketed root search, then mapped through the
    GEV quantile. ``upper`` may be an array (one draw per bound) or +inf.
    """
    rng = as_generator(seed)
    bounds = np.atleast_1d(np.asarray(upper, dtype=float))
    g_upper = np.asarray(gev_cdf(bounds, params.base), dtype=float)
    if np.any(g_upper <= 0):
        raise DomainError("Truncation bound lies below the GEV support")
    f_upper = -np.expm1(params.b * np.log1p(-(g_upper ** params.a)))
    uniforms = rng.random(bounds.shape)
    draws = np.empty_like(bounds)
    for i, (u, gu, fu) in enumerate(zip(uniforms, g_upper, f_upper)):
        g = _kumgev_inverse_probability(u * fu, gu, params.a, params.b)
        g = min(max(g, np.nextafter(0.0, 1.0)), np.nextafter(gu, 0.0))
        draws[i] = _gev_ppf_neglog(-np.log(g), params.base.loc, params.base.scale, params.base.shape)
    draws = np.minimum(draws, np.nextafter(bounds, -np.inf))
    if np.ndim(upper) == 0:
        return float(draws[0])
    return draws

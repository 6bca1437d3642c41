"""Data-generating schemes and the Monte Carlo experiment runner.

Every generator takes an explicit seed. ``run_experiment`` derives one
generator per replicate from the scheme's seed, so summaries are identical
for any number of workers.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .errors import DomainError, EvtError, NumericalError
from .estimation import REGIONAL_FITTERS, CoefficientSet, LinkedModelSpec, fit_gevr_mle
from .evd_core import (
    GevParams,
    GpdParams,
    KumGevParams,
    SeedLike,
    TopROrderSample,
    _gev_ppf_neglog,
    as_generator,
    kumgev_truncated_draw,
    sample_gevr,
    sample_gpd,
    spawn_generators,
)
from .gof_gevr import ed_test, score_test_multiplier, score_test_parametric
from .gof_gpd import GPD_TESTS, STATISTIC_FUNCTIONS, NullTable, get_null_table, run_gpd_test
from .parallel import ordered_map
from .sequential import GEVR_TESTS, RULES, ThresholdGrid, order_statistic_grid, select_r, select_threshold

logger = logging.getLogger(__name__)

SCHEMES = (
    "kumgev_contam",
    "order_mixing",
    "rselect_design",
    "pure_gevr",
    "beta_gpd_splice",
    "pure_gpd",
    "gpd_alternative",
    "gaussian_copula_sites",
)
GPD_ALTERNATIVES = (
    "gamma",
    "lognormal",
    "weibull_0.75",
    "weibull_1.25",
    "gpdmix_-0.4_0.4",
    "gpdmix_0_0.4",
    "gpdmix_-0.25_0.25",
)
RFA_TRUTH = {"beta_gamma0": -1.041, "beta_xi0": -0.0186, "loc_trend": 0.003}
SITE_MEAN = (5.344, 1.865)
SITE_MEAN_FLOOR = 0.5
COORD_RANGE = (0.0, 10.0)
CHOLESKY_JITTER = 1e-10
TRIM_FRACTION = 0.02
MIN_REPLICATES = 100
FWER_PERCENTILES = np.arange(5.0, 50.0 + 1e-9, 5.0)


@dataclass
class SchemeSpec:
    """A data-generating scheme, its parameters and the experiment seed."""

    scheme: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise DomainError(f"Unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        p = self.params
        if "n" in p and int(p["n"]) < 1:
            raise DomainError("n must be at least 1")
        if self.scheme == "kumgev_contam" and not (float(p.get("a", 1.0)) > 0 and float(p.get("b", 1.0)) > 0):
            raise DomainError("KumGEV a and b must be positive")
        if self.scheme == "order_mixing" and not 0.0 <= float(p.get("mix_p", 1.0)) <= 1.0:
            raise DomainError("mix_p must lie in [0, 1]")
        if self.scheme == "gaussian_copula_sites" and float(p.get("phi", 0.0)) < 0:
            raise DomainError("Copula range phi must be non-negative")
        if self.scheme == "gpd_alternative" and p.get("name") not in GPD_ALTERNATIVES:
            raise DomainError(f"Unknown alternative {p.get('name')!r}; expected one of {GPD_ALTERNATIVES}")

    def gev(self) -> GevParams:
        p = self.params
        return GevParams(float(p.get("loc", 0.0)), float(p.get("scale", 1.0)), float(p.get("shape", 0.0)))

    def params_json(self) -> str:
        return json.dumps(self.params, sort_keys=True, default=str)


# --------------------------------------------------------------------------
# top-r schemes


def gen_scheme1_kumgev(n: int, params: GevParams, a: float, b: float, seed: SeedLike = None) -> TopROrderSample:
    """Four GEV_4 columns plus a fifth drawn from KumGEV truncated by the fourth.

    ``a = b = 1`` gives a valid GEV_5 sample.
    """
    rng = as_generator(seed)
    top = sample_gevr(n, 4, params, rng).values
    fifth = kumgev_truncated_draw(KumGevParams(params, a, b), top[:, 3], rng)
    return TopROrderSample(np.column_stack([top, fifth]))


def gen_scheme2_mixing(n: int, params: GevParams, mix_p: float, seed: SeedLike = None) -> TopROrderSample:
    """GEV_6 draws whose fifth value is the 6th order statistic with probability 1 - mix_p.

    Only the first five columns are returned; ``mix_p = 1`` is the null.
    """
    if not 0.0 <= mix_p <= 1.0:
        raise DomainError("mix_p must lie in [0, 1]")
    rng = as_generator(seed)
    values = sample_gevr(n, 6, params, rng).values
    keep = rng.random(n) < mix_p
    fifth = np.where(keep, values[:, 4], values[:, 5])
    return TopROrderSample(np.column_stack([values[:, :4], fifth]))


def gen_rselect_design(n: int, params: GevParams, seed: SeedLike = None) -> TopROrderSample:
    """GEV_7 draws with misspecified 5th and 6th values (r = 6 returned).

    The 5th value is a 50/50 mixture of the 5th and 6th order statistics and
    the 6th a 50/50 mixture of the 6th and 7th; when the 5th takes the 6th,
    the 6th takes the 7th. The correct choice of r is 4.
    """
    rng = as_generator(seed)
    y = sample_gevr(n, 7, params, rng).values
    fifth_shift = rng.random(n) < 0.5
    sixth_shift = fifth_shift | (rng.random(n) < 0.5)
    fifth = np.where(fifth_shift, y[:, 5], y[:, 4])
    sixth = np.where(sixth_shift, y[:, 6], y[:, 5])
    return TopROrderSample(np.column_stack([y[:, :4], fifth, sixth]))


# --------------------------------------------------------------------------
# threshold schemes


def gen_beta_gpd_splice(n1: int, n2: int, seed: SeedLike = None) -> np.ndarray:
    """n1 draws of 5 * Beta(2, 1) and n2 of 5 + GPD(2, 0.25), shuffled."""
    if n1 < 1 or n2 < 1:
        raise DomainError("n1 and n2 must be at least 1")
    rng = as_generator(seed)
    below = 5.0 * rng.beta(2.0, 1.0, size=n1)
    above = 5.0 + sample_gpd(n2, GpdParams(2.0, 0.25), rng)
    return rng.permutation(np.concatenate([below, above]))


def gen_gpd_alternative(name: str, n: int, seed: SeedLike = None) -> np.ndarray:
    """Non-GPD samples used to measure the power of the GPD tests."""
    rng = as_generator(seed)
    if name == "gamma":
        return rng.gamma(2.0, 1.0, size=n)
    if name == "lognormal":
        return rng.lognormal(0.0, 1.0, size=n)
    if name.startswith("weibull_"):
        return rng.weibull(float(name.split("_")[1]), size=n)
    if name.startswith("gpdmix_"):
        _, first, second = name.split("_")
        which = rng.random(n) < 0.5
        a = sample_gpd(n, GpdParams(1.0, float(first)), rng)
        b = sample_gpd(n, GpdParams(1.0, float(second)), rng)
        return np.where(which, a, b)
    raise DomainError(f"Unknown alternative {name!r}; expected one of {GPD_ALTERNATIVES}")


# --------------------------------------------------------------------------
# regional schemes


def exponential_correlation(coords: np.ndarray, phi: float) -> np.ndarray:
    """Correlation ``exp(-||h|| / phi)``; the identity when phi is 0."""
    coords = np.asarray(coords, dtype=float)
    m = coords.shape[0]
    if phi == 0:
        return np.eye(m)
    dist = np.sqrt(np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1))
    return np.exp(-dist / phi)


def gen_gaussian_copula_sites(
    m: int,
    n: int,
    coords: np.ndarray,
    phi: float,
    margins: Tuple[np.ndarray, np.ndarray, np.ndarray],
    seed: SeedLike = None,
) -> np.ndarray:
    """m x n GEV data with a Gaussian copula across sites.

    ``margins`` is (loc m x n, scale m x n, shape n), for instance from
    :meth:`CoefficientSet.implied`. Each period is an independent draw.

    Raises:
        DomainError: coordinates outside [0, 10]^2 or mismatched shapes.
        NumericalError: the correlation matrix is not positive definite
            even after jitter.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (m, 2):
        raise DomainError(f"coords must be {m} x 2, got {coords.shape}")
    if np.any(coords < COORD_RANGE[0]) or np.any(coords > COORD_RANGE[1]):
        raise DomainError("Site coordinates must lie in [0, 10]^2")
    loc, scale, shape = (np.asarray(x, dtype=float) for x in margins)
    if loc.shape != (m, n) or scale.shape != (m, n) or shape.shape != (n,):
        raise DomainError("Margins must be (m x n, m x n, n)")
    corr = exponential_correlation(coords, phi)
    try:
        chol = linalg.cholesky(corr, lower=True)
    except linalg.LinAlgError:
        try:
            chol = linalg.cholesky(corr + CHOLESKY_JITTER * np.eye(m), lower=True)
        except linalg.LinAlgError as e:
            raise NumericalError("Correlation matrix is not positive definite", {"phi": phi}) from e
    rng = as_generator(seed)
    z = chol @ rng.standard_normal((m, n))
    neg_log_u = -stats.norm.logcdf(z)
    return _gev_ppf_neglog(neg_log_u, loc, scale, np.broadcast_to(shape[None, :], (m, n)))


def rfa_truth_design(m: int, n: int, seed: SeedLike = None) -> Tuple[LinkedModelSpec, CoefficientSet, np.ndarray]:
    """Regional truth of the estimator study.

    The coefficients are the flood-index estimates for a subset of northern
    California GHCN precipitation sites: beta_gamma0 = -1.041,
    beta_xi0 = -0.0186 and a location trend of 0.003 on the winter-averaged
    Southern Oscillation Index, with no covariates on the scale or shape
    links. The site location means of that fit average 5.344 with standard
    deviation 1.865, so site locations are drawn once from N(5.344, 1.865)
    (redrawn below 0.5). Coordinates are uniform on [0, 10]^2 and a
    standard normal series stands in for the index.
    """
    rng = as_generator(seed)
    locs = rng.normal(*SITE_MEAN, size=m)
    while np.any(locs <= SITE_MEAN_FLOOR):
        bad = locs <= SITE_MEAN_FLOOR
        locs[bad] = rng.normal(*SITE_MEAN, size=int(bad.sum()))
    coords = rng.uniform(*COORD_RANGE, size=(m, 2))
    index_series = rng.standard_normal(n)
    spec = LinkedModelSpec.build(m, n, loc_covariates=index_series)
    coefs = CoefficientSet(
        np.concatenate([locs, [RFA_TRUTH["loc_trend"]]]),
        np.array([RFA_TRUTH["beta_gamma0"]]),
        np.array([RFA_TRUTH["beta_xi0"]]),
    )
    return spec, coefs, coords


# --------------------------------------------------------------------------
# experiments


def generate(spec: SchemeSpec, seed: SeedLike = None) -> Any:
    """One dataset from ``spec`` (regional schemes need the truth from :func:`rfa_truth_design`)."""
    p = spec.params
    n = int(p.get("n", 100))
    if spec.scheme == "kumgev_contam":
        return gen_scheme1_kumgev(n, spec.gev(), float(p.get("a", 1.0)), float(p.get("b", 1.0)), seed)
    if spec.scheme == "order_mixing":
        return gen_scheme2_mixing(n, spec.gev(), float(p.get("mix_p", 1.0)), seed)
    if spec.scheme == "rselect_design":
        return gen_rselect_design(n, spec.gev(), seed)
    if spec.scheme == "pure_gevr":
        return sample_gevr(n, int(p.get("r", 5)), spec.gev(), seed)
    if spec.scheme == "beta_gpd_splice":
        return gen_beta_gpd_splice(int(p.get("n1", 500)), int(p.get("n2", 500)), seed)
    if spec.scheme == "pure_gpd":
        return sample_gpd(n, GpdParams(float(p.get("scale", 1.0)), float(p.get("shape", 0.25))), seed)
    if spec.scheme == "gpd_alternative":
        return gen_gpd_alternative(p["name"], n, seed)
    raise DomainError(f"Scheme {spec.scheme!r} is generated by gen_gaussian_copula_sites")


def _gevr_test(sample: TopROrderSample, subject: str, L: int, rng: np.random.Generator) -> float:
    fit = fit_gevr_mle(sample)
    if not fit.converged:
        raise NumericalError("fit did not converge")
    if subject == "ed":
        return ed_test(sample, fit=fit).p_value
    if subject == "score_pb":
        return score_test_parametric(sample, L, rng, fit=fit).p_value
    return score_test_multiplier(sample, L, rng, fit=fit).p_value


def _replicate(args: Tuple[SchemeSpec, str, float, int, Optional[NullTable], Any, np.random.Generator]) -> Dict[str, float]:
    spec, subject, alpha, L, table, truth, rng = args
    p = spec.params
    try:
        if spec.scheme == "gaussian_copula_sites":
            design, coefs, coords = truth
            data = gen_gaussian_copula_sites(
                design.m, design.n, coords, float(p.get("phi", 0.0)), coefs.implied(design), rng
            )
            fit = REGIONAL_FITTERS[subject](data, design)
            if not fit.converged:
                return {"failed": 1.0}
            return {
                "err_beta_gamma0": fit.coefficients.beta_gamma0 - coefs.beta_gamma0,
                "err_beta_xi0": fit.coefficients.beta_xi0 - coefs.beta_xi0,
            }
        data = generate(spec, rng)
        if spec.scheme == "rselect_design":
            chosen = select_r(data, data.r, subject, str(p.get("rule", "forward")), alpha, L, rng)
            if chosen.failed:
                return {"failed": 1.0}
            k = chosen.selection.k_hat[chosen.rule]
            return {"chosen_r": float(chosen.chosen_r), "false_share": max(k - 2, 0) / k if k else 0.0}
        if isinstance(data, TopROrderSample):
            return {"p": _gevr_test(data, subject, L, rng)}
        threshold = float(p.get("threshold", 0.0))
        if spec.scheme == "beta_gpd_splice":
            grid = order_statistic_grid(data, int(p.get("count", 50)), int(p.get("step", 15)), lower=threshold)
            result = select_threshold(data, grid, subject, "forward", alpha, table, rng)
        elif spec.scheme == "pure_gpd" and p.get("sequential"):
            grid = ThresholdGrid.from_thresholds(data, np.percentile(data, FWER_PERCENTILES))
            result = select_threshold(data, grid, subject, "strong", alpha, table, rng)
        else:
            excesses = data[data > threshold] - threshold
            return {"p": run_gpd_test(excesses, subject, table=table, seed=rng).p_value}
        if result.failed:
            return {"failed": 1.0}
        row = {f"k_{rule}": float(result.selection.k_hat[rule]) for rule in RULES}
        # unadjusted testing rejects at every p-value below alpha, not only a leading run
        row["any_rejected"] = float(np.any(result.selection.raw_p <= alpha))
        return row
    except EvtError as e:
        logger.debug(f"Replicate failed: {e}")
        return {"failed": 1.0}


def trimmed_rmse(errors: np.ndarray, trim: float = TRIM_FRACTION) -> Tuple[float, float]:
    """RMSE after discarding the largest ``trim`` share of squared errors.

    Returns the value and a delta-method Monte Carlo standard error.
    """
    squared = np.sort(np.asarray(errors, dtype=float) ** 2)
    keep = squared[: squared.size - int(round(trim * squared.size))]
    if keep.size == 0:
        return float("nan"), float("nan")
    rmse = float(np.sqrt(keep.mean()))
    mc = float(keep.std(ddof=1) / (2.0 * rmse * np.sqrt(keep.size))) if keep.size > 1 and rmse > 0 else float("nan")
    return rmse, mc


def _binomial_row(values: np.ndarray) -> Tuple[float, float]:
    rate = float(values.mean())
    return rate, float(np.sqrt(rate * (1.0 - rate) / values.size))


def run_experiment(
    spec: SchemeSpec,
    subject: str,
    replicates: int = 1000,
    alpha: float = 0.05,
    workers: int = 1,
    table: Optional[NullTable] = None,
    L: int = 199,
    progress: bool = False,
) -> pd.DataFrame:
    """Monte Carlo summary of a test or estimator on one scheme.

    ``subject`` is a GEV_r test for top-r schemes, a GPD test for threshold
    schemes and a regional estimator for ``gaussian_copula_sites``. The
    table has the columns scheme, params, subject, metric, value, mc_error.
    """
    if replicates < MIN_REPLICATES:
        raise DomainError(f"At least {MIN_REPLICATES} replicates are required, got {replicates}")
    regional = spec.scheme == "gaussian_copula_sites"
    top_r = spec.scheme in ("kumgev_contam", "order_mixing", "rselect_design", "pure_gevr")
    allowed = sorted(REGIONAL_FITTERS) if regional else (GEVR_TESTS if top_r else GPD_TESTS)
    if subject not in allowed:
        raise DomainError(f"Subject {subject!r} does not apply to {spec.scheme}; expected one of {tuple(allowed)}")
    if not top_r and not regional and subject in STATISTIC_FUNCTIONS and table is None:
        table = get_null_table()
    generators = spawn_generators(spec.seed, replicates + 1)
    truth = None
    if regional:
        truth = rfa_truth_design(int(spec.params.get("m", 10)), int(spec.params.get("n", 25)), generators[0])
    logger.info(f"Running {replicates} replicates of {spec.scheme} for {subject}")
    results = ordered_map(
        _replicate,
        [(spec, subject, alpha, L, table, truth, g) for g in generators[1:]],
        workers=workers,
        progress=progress,
        desc=spec.scheme,
    )
    frame = pd.DataFrame(results)
    failed = frame["failed"].fillna(0.0) if "failed" in frame else pd.Series(np.zeros(len(frame)))
    ok = frame[failed == 0]
    rows: List[Tuple[str, float, float]] = [("failures", float(failed.sum()), float("nan"))]
    if not ok.empty:
        if "p" in ok:
            rows.append(("rejection_rate", *_binomial_row((ok["p"].to_numpy() <= alpha).astype(float))))
        if "chosen_r" in ok:
            chosen = ok["chosen_r"].to_numpy()
            for r in range(0, 7):
                rows.append((f"chosen_r_{r}", *_binomial_row((chosen == r).astype(float))))
            rows.append(("chosen_r_le_4", *_binomial_row((chosen <= 4).astype(float))))
            share = ok["false_share"].to_numpy()
            rows.append(("false_discovery_rate", float(share.mean()), float(share.std(ddof=1) / np.sqrt(share.size))))
        for rule in RULES:
            column = f"k_{rule}"
            if column in ok:
                k = ok[column].to_numpy()
                rows.append((f"median_rejections_{rule}", float(np.median(k)), float("nan")))
                rejected = ok["any_rejected"].to_numpy() if rule == "none" and "any_rejected" in ok else k > 0
                rows.append((f"fwer_{rule}", *_binomial_row(np.asarray(rejected, dtype=float))))
        for name in ("beta_gamma0", "beta_xi0"):
            column = f"err_{name}"
            if column in ok:
                rows.append((f"trimmed_rmse_{name}", *trimmed_rmse(ok[column].to_numpy())))
    return pd.DataFrame(
        [
            {
                "scheme": spec.scheme,
                "params": spec.params_json(),
                "subject": subject,
                "metric": metric,
                "value": value,
                "mc_error": mc_error,
            }
            for metric, value, mc_error in rows
        ],
        columns=["scheme", "params", "subject", "metric", "value", "mc_error"],
    )

"""Goodness-of-fit tests for GPD exceedances over a fixed threshold.

Anderson-Darling and Cramer-von Mises statistics get fast p-values from a
precomputed null table: log-linear interpolation between critical values,
an exponential tail beyond the last one, and linear interpolation of
``-log p`` between neighbouring shapes. Moran's test uses the maximum
product spacings fit; Rao's score test compares a piecewise-shape GPD with
the ordinary GPD.

Null table file layout (little-endian)::

    bytes 0-7    magic b"EVTNULL\\0"
    bytes 8-11   uint32 header length H
    next H bytes UTF-8 JSON header: version, statistics (order of blocks),
                 shape_grid, percentile_grid, mc_replicates,
                 mc_sample_size, seed, failures
    then, per statistic in header order, a float64 block of
                 len(shape_grid) x len(percentile_grid) critical values in
                 row-major order (one row per shape)
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numdifftools as nd
import numpy as np
from scipy import stats

from .errors import DomainError, NullTableError, NumericalError, TableRangeError
from .estimation import FitResult, fit_gpd_mle, fit_mps
from .evd_core import GpdParams, SeedLike, _log1p_ratio, gpd_cdf, gpd_logpdf_arrays, sample_gpd, spawn_generators
from .gof_gevr import MAX_CONDITION, MAX_FAILED_FRACTION, TestOutcome
from .parallel import ordered_map

logger = logging.getLogger(__name__)

TABLE_MAGIC = b"EVTNULL\x00"
TABLE_VERSION = 1
TABLE_FILENAME = f"gpd_null_table_v{TABLE_VERSION}.bin"
STATISTICS = ("ad", "cvm")
SHAPE_GRID = np.round(np.arange(-0.5, 1.0 + 1e-9, 0.1), 1)
PERCENTILE_GRID = np.round(np.arange(999, 0, -1) / 1000.0, 3)
TAIL_WINDOW = (0.05, 0.001)
MIN_TABLE_REPLICATES = 10_000
MIN_TABLE_SAMPLE_SIZE = 500
DEFAULT_TABLE_REPLICATES = 100_000
DEFAULT_TABLE_SAMPLE_SIZE = 1_000
DEFAULT_TABLE_SEED = 20_150_601
Z_LOW = 1e-300
Z_HIGH = 1.0 - 1e-16
BELOW_TABLE_P = 0.999


# --------------------------------------------------------------------------
# statistics


def _probability_integral(excesses: Sequence[float], theta: GpdParams) -> np.ndarray:
    y = np.sort(np.asarray(excesses, dtype=float).ravel())
    if y.size < 1:
        raise DomainError("No excesses supplied")
    z = np.asarray(gpd_cdf(y, theta), dtype=float)
    clamped = np.clip(z, Z_LOW, Z_HIGH)
    if np.any(clamped != z):
        logger.warning(
            f"{int(np.sum(clamped != z))} fitted probabilities hit 0 or 1 and were clamped"
        )
    return clamped


def ad_statistic(excesses: Sequence[float], theta_hat: GpdParams) -> float:
    """Anderson-Darling statistic of the excesses under ``theta_hat``."""
    z = _probability_integral(excesses, theta_hat)
    n = z.size
    i = np.arange(1, n + 1)
    return float(-n - np.sum((2 * i - 1) * (np.log(z) + np.log1p(-z[::-1]))) / n)


def cvm_statistic(excesses: Sequence[float], theta_hat: GpdParams) -> float:
    """Cramer-von Mises statistic of the excesses under ``theta_hat``."""
    z = _probability_integral(excesses, theta_hat)
    n = z.size
    i = np.arange(1, n + 1)
    return float(np.sum((z - (2 * i - 1) / (2.0 * n)) ** 2) + 1.0 / (12.0 * n))


STATISTIC_FUNCTIONS = {"ad": ad_statistic, "cvm": cvm_statistic}


# --------------------------------------------------------------------------
# null tables


@dataclass
class NullTable:
    """Upper-tail critical values of the AD and CvM statistics by shape.

    ``critical_values[stat][i, j]`` is exceeded with probability
    ``percentile_grid[j]`` when the true shape is ``shape_grid[i]`` and the
    parameters are estimated by maximum likelihood.
    """

    shape_grid: np.ndarray
    percentile_grid: np.ndarray
    critical_values: Dict[str, np.ndarray]
    mc_replicates: int
    mc_sample_size: int
    seed: Optional[int] = None
    failures: Dict[str, int] = field(default_factory=dict)
    checksum: Optional[str] = None

    def __post_init__(self) -> None:
        self.shape_grid = np.asarray(self.shape_grid, dtype=float)
        self.percentile_grid = np.asarray(self.percentile_grid, dtype=float)
        if np.any(np.diff(self.shape_grid) <= 0):
            raise NullTableError("Shape grid must be strictly increasing")
        if np.any(np.diff(self.percentile_grid) >= 0):
            raise NullTableError("Percentile grid must be strictly decreasing")
        expected = (self.shape_grid.size, self.percentile_grid.size)
        for name, values in self.critical_values.items():
            values = np.asarray(values, dtype=float)
            if values.shape != expected:
                raise NullTableError(f"{name} critical values have shape {values.shape}, expected {expected}")
            if np.any(np.diff(values, axis=1) <= 0):
                raise NullTableError(f"{name} critical values are not strictly increasing")
            self.critical_values[name] = values


def _strictly_increasing(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float)
    for j in range(1, out.size):
        if out[j] <= out[j - 1]:
            out[j] = np.nextafter(out[j - 1], np.inf)
    return out


def _table_row(args: Tuple[float, int, int, np.random.Generator]) -> Tuple[np.ndarray, np.ndarray, int]:
    shape, replicates, sample_size, rng = args
    theta = GpdParams(1.0, shape)
    values = {name: np.empty(replicates) for name in STATISTICS}
    kept = 0
    failed = 0
    for _ in range(replicates):
        y = sample_gpd(sample_size, theta, rng)
        try:
            fit = fit_gpd_mle(y, covariance=False)
        except DomainError:
            failed += 1
            continue
        if not fit.converged:
            failed += 1
            continue
        for name in STATISTICS:
            values[name][kept] = STATISTIC_FUNCTIONS[name](y, fit.coefficients)
        kept += 1
    if kept < 2:
        raise NumericalError(f"Null table simulation failed at shape {shape}", {"failed": failed})
    rows = []
    for name in STATISTICS:
        quantiles = np.quantile(values[name][:kept], 1.0 - PERCENTILE_GRID)
        rows.append(_strictly_increasing(quantiles))
    return rows[0], rows[1], failed


def build_null_table(
    mc_replicates: int = DEFAULT_TABLE_REPLICATES,
    mc_sample_size: int = DEFAULT_TABLE_SAMPLE_SIZE,
    seed: int = DEFAULT_TABLE_SEED,
    shape_grid: Optional[Sequence[float]] = None,
    allow_small: bool = False,
    workers: int = 1,
    progress: bool = False,
) -> NullTable:
    """Simulate the AD/CvM null distributions on the shape grid.

    For each grid shape, GPD samples are drawn, fitted by maximum
    likelihood, and both statistics recorded; the table stores their upper
    percentiles from 0.999 down to 0.001. Fit failures are dropped and
    counted. Each shape has its own generator derived from ``seed``, so the
    table is bit-identical for identical arguments whatever ``workers`` is.
    """
    if not allow_small and (
        mc_replicates < MIN_TABLE_REPLICATES or mc_sample_size < MIN_TABLE_SAMPLE_SIZE
    ):
        raise DomainError(
            f"Null tables need at least {MIN_TABLE_REPLICATES} replicates of size "
            f"{MIN_TABLE_SAMPLE_SIZE}; pass allow_small=True for coarse tables"
        )
    if mc_replicates < 1000 or mc_sample_size < 10:
        logger.warning("Coarse null table: tail percentiles rest on very few replicates")
    grid = SHAPE_GRID if shape_grid is None else np.asarray(shape_grid, dtype=float)
    generators = spawn_generators(seed, grid.size)
    logger.info(
        f"Building null table: {grid.size} shapes x {mc_replicates} replicates of size {mc_sample_size}"
    )
    rows = ordered_map(
        _table_row,
        [(float(s), mc_replicates, mc_sample_size, g) for s, g in zip(grid, generators)],
        workers=workers,
        progress=progress,
        desc="null table",
    )
    failures = {f"{s:.1f}": int(row[2]) for s, row in zip(grid, rows) if row[2]}
    if failures:
        logger.warning(f"Null table fit failures by shape: {failures}")
    return NullTable(
        shape_grid=grid,
        percentile_grid=PERCENTILE_GRID.copy(),
        critical_values={
            "ad": np.vstack([row[0] for row in rows]),
            "cvm": np.vstack([row[1] for row in rows]),
        },
        mc_replicates=mc_replicates,
        mc_sample_size=mc_sample_size,
        seed=seed,
        failures=failures,
    )


def save_null_table(table: NullTable, path: "os.PathLike[str] | str") -> str:
    """Write ``table`` in the versioned binary layout; returns its sha256."""
    header = {
        "version": TABLE_VERSION,
        "statistics": list(STATISTICS),
        "shape_grid": [float(s) for s in table.shape_grid],
        "percentile_grid": [float(p) for p in table.percentile_grid],
        "mc_replicates": int(table.mc_replicates),
        "mc_sample_size": int(table.mc_sample_size),
        "seed": table.seed,
        "failures": table.failures,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = TABLE_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes
    for name in STATISTICS:
        payload += np.ascontiguousarray(table.critical_values[name], dtype="<f8").tobytes()
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(payload)
    table.checksum = hashlib.sha256(payload).hexdigest()
    logger.info(f"Null table written to {target}")
    return table.checksum


def default_table_path() -> Path:
    """Table location: ``EVT_NULL_TABLE_PATH``, else the cache directory."""
    explicit = os.getenv("EVT_NULL_TABLE_PATH")
    if explicit:
        return Path(explicit).expanduser()
    cache_dir = os.getenv("EVT_CACHE_DIR") or os.path.join("~", ".cache", "evt_autoselect")
    return Path(cache_dir).expanduser() / TABLE_FILENAME


def load_null_table(path: "os.PathLike[str] | str | None" = None) -> NullTable:
    """Read a null table file.

    Raises:
        NullTableError: the file is missing, truncated or of another version.
    """
    source = Path(path) if path is not None else default_table_path()
    try:
        payload = source.read_bytes()
    except OSError as e:
        raise NullTableError(f"Cannot read null table {source}: {e}") from e
    if payload[:8] != TABLE_MAGIC:
        raise NullTableError(f"{source} is not a null table file")
    try:
        (length,) = struct.unpack("<I", payload[8:12])
        header = json.loads(payload[12:12 + length].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise NullTableError(f"Corrupt null table header in {source}") from e
    if header.get("version") != TABLE_VERSION:
        raise NullTableError(f"Unsupported null table version {header.get('version')}")
    shape = (len(header["shape_grid"]), len(header["percentile_grid"]))
    block = shape[0] * shape[1] * 8
    offset = 12 + length
    if len(payload) != offset + block * len(header["statistics"]):
        raise NullTableError(f"Null table {source} is truncated")
    critical = {}
    for k, name in enumerate(header["statistics"]):
        start = offset + k * block
        critical[name] = np.frombuffer(payload[start:start + block], dtype="<f8").reshape(shape).copy()
    return NullTable(
        shape_grid=np.array(header["shape_grid"]),
        percentile_grid=np.array(header["percentile_grid"]),
        critical_values=critical,
        mc_replicates=int(header["mc_replicates"]),
        mc_sample_size=int(header["mc_sample_size"]),
        seed=header.get("seed"),
        failures=dict(header.get("failures", {})),
        checksum=hashlib.sha256(payload).hexdigest(),
    )


def get_null_table(
    path: "os.PathLike[str] | str | None" = None, build_if_missing: bool = True, workers: int = 1
) -> NullTable:
    """Load the configured table, building and caching the default one if absent."""
    source = Path(path) if path is not None else default_table_path()
    if source.exists() or not build_if_missing:
        return load_null_table(source)
    logger.warning(
        f"No null table at {source}; building the default table (this takes a while, "
        f"run 'evt-autoselect build-null-tables' once to avoid it)"
    )
    table = build_null_table(workers=workers, progress=True)
    save_null_table(table, source)
    return table


# --------------------------------------------------------------------------
# p-values


def _tail_slope(critical: np.ndarray, neg_log_p: np.ndarray, probs: np.ndarray) -> float:
    window = (probs <= TAIL_WINDOW[0] + 1e-12) & (probs >= TAIL_WINDOW[1] - 1e-12)
    if np.count_nonzero(window) >= 2:
        slope, _ = np.polyfit(critical[window], neg_log_p[window], 1)
        if slope > 0:
            return float(slope)
    return float((neg_log_p[-1] - neg_log_p[-2]) / (critical[-1] - critical[-2]))


def tail_line(table: NullTable, statistic: str, shape_index: int) -> Tuple[float, float]:
    """(intercept, slope) of the exponential tail ``-log p = a + b * stat``.

    The slope is the least-squares fit over tail probabilities 0.05 to
    0.001; the intercept anchors the line at the last table node.
    """
    critical = table.critical_values[statistic][shape_index]
    probs = table.percentile_grid
    neg_log_p = -np.log(probs)
    slope = _tail_slope(critical, neg_log_p, probs)
    return float(neg_log_p[-1] - slope * critical[-1]), slope


def _row_neg_log_p(stat: float, table: NullTable, statistic: str, shape_index: int) -> float:
    critical = table.critical_values[statistic][shape_index]
    neg_log_p = -np.log(table.percentile_grid)
    if stat <= critical[0]:
        return float(-np.log(BELOW_TABLE_P))
    if stat <= critical[-1]:
        return float(np.interp(stat, critical, neg_log_p))
    intercept, slope = tail_line(table, statistic, shape_index)
    return intercept + slope * stat


def ad_cvm_pvalue(stat: float, xi_hat: float, table: NullTable, statistic: str = "ad") -> float:
    """Approximate p-value of an AD or CvM statistic from the null table.

    Raises:
        TableRangeError: ``xi_hat`` lies outside the table's shape grid.
    """
    if statistic not in table.critical_values:
        raise DomainError(f"Table has no {statistic!r} block")
    grid = table.shape_grid
    if not grid[0] - 1e-9 <= xi_hat <= grid[-1] + 1e-9:
        raise TableRangeError(xi_hat, float(grid[0]), float(grid[-1]))
    hi = int(np.clip(np.searchsorted(grid, xi_hat), 1, grid.size - 1)) if grid.size > 1 else 0
    if grid.size == 1:
        return float(np.exp(-_row_neg_log_p(stat, table, statistic, 0)))
    lo = hi - 1
    weight = float(np.clip((xi_hat - grid[lo]) / (grid[hi] - grid[lo]), 0.0, 1.0))
    value = (1.0 - weight) * _row_neg_log_p(stat, table, statistic, lo)
    value += weight * _row_neg_log_p(stat, table, statistic, hi)
    return float(np.exp(-value))


def _gof_bootstrap_replicate(args: Tuple[int, GpdParams, str, np.random.Generator]) -> float:
    n, theta, statistic, rng = args
    y = sample_gpd(n, theta, rng)
    try:
        fit = fit_gpd_mle(y, covariance=False)
    except DomainError:
        return np.nan
    if not fit.converged:
        return np.nan
    return STATISTIC_FUNCTIONS[statistic](y, fit.coefficients)


def gpd_gof_bootstrap(
    excesses: Sequence[float],
    statistic: str = "ad",
    L: int = 199,
    seed: SeedLike = None,
    fit: Optional[FitResult] = None,
    workers: int = 1,
) -> TestOutcome:
    """AD/CvM test with a parametric bootstrap p-value.

    Used when the fitted shape is outside the null table's range.
    """
    if statistic not in STATISTIC_FUNCTIONS:
        raise DomainError(f"Unknown statistic {statistic!r}")
    y = np.asarray(excesses, dtype=float)
    fit = fit if fit is not None else fit_gpd_mle(y)
    if not fit.converged:
        raise NumericalError("GPD maximum likelihood fit failed", {"message": fit.message})
    theta = fit.coefficients
    observed = STATISTIC_FUNCTIONS[statistic](y, theta)
    generators = spawn_generators(seed, L)
    replicates = np.array(
        ordered_map(_gof_bootstrap_replicate, [(y.size, theta, statistic, g) for g in generators], workers=workers),
        dtype=float,
    )
    ok = replicates[np.isfinite(replicates)]
    if ok.size == 0:
        raise NumericalError("Every bootstrap refit failed", {"requested": L})
    failed = L - ok.size
    return TestOutcome(
        statistic=observed,
        p_value=float(np.sum(ok > observed)) / ok.size,
        theta_hat=theta,
        method=f"{statistic}_bootstrap",
        bootstrap_size=int(ok.size),
        failed_refits=int(failed),
        reliable=failed <= MAX_FAILED_FRACTION * L,
    )


def gpd_gof_test(
    excesses: Sequence[float],
    statistic: str = "ad",
    table: Optional[NullTable] = None,
    fit: Optional[FitResult] = None,
    bootstrap_size: int = 199,
    seed: SeedLike = None,
) -> TestOutcome:
    """AD or CvM test with table p-values and a bootstrap fallback.

    Shape estimates outside the table range fall back to
    :func:`gpd_gof_bootstrap`; the outcome records the fallback in ``extras``.
    """
    if statistic not in STATISTIC_FUNCTIONS:
        raise DomainError(f"Unknown statistic {statistic!r}")
    y = np.asarray(excesses, dtype=float)
    fit = fit if fit is not None else fit_gpd_mle(y)
    if not fit.converged:
        raise NumericalError("GPD maximum likelihood fit failed", {"message": fit.message})
    theta = fit.coefficients
    table = table if table is not None else get_null_table()
    value = STATISTIC_FUNCTIONS[statistic](y, theta)
    try:
        p_value = ad_cvm_pvalue(value, theta.shape, table, statistic)
    except TableRangeError as e:
        logger.info(f"{e}; using a parametric bootstrap p-value")
        outcome = gpd_gof_bootstrap(y, statistic, bootstrap_size, seed, fit=fit)
        outcome.extras["fallback"] = "shape_outside_table"
        return outcome
    return TestOutcome(statistic=value, p_value=p_value, theta_hat=theta, method=statistic)


# --------------------------------------------------------------------------
# Moran


def moran_moments(n: int) -> Tuple[float, float]:
    """Null mean and variance of Moran's statistic for n observations."""
    m = n + 1.0
    mean = m * (np.log(m) + np.euler_gamma) - 0.5 - 1.0 / (12.0 * m)
    variance = m * (np.pi**2 / 6.0 - 1.0) - 0.5 - 1.0 / (6.0 * m)
    return float(mean), float(variance)


def moran_test(excesses: Sequence[float], fit: Optional[FitResult] = None) -> TestOutcome:
    """Moran's goodness-of-fit test based on the product spacings fit.

    The statistic ``(M + 1 - C1) / C2`` is referred to a chi-square law with
    n degrees of freedom.
    """
    y = np.asarray(excesses, dtype=float)
    fit = fit if fit is not None else fit_mps(y, "gpd")
    if not fit.converged:
        raise NumericalError("Maximum product spacings fit failed", {"message": fit.message})
    n = y.size
    moran = -fit.max_objective
    mean, variance = moran_moments(n)
    sd = np.sqrt(variance)
    c1 = mean - np.sqrt(n / 2.0) * sd
    c2 = sd / np.sqrt(2.0 * n)
    statistic = float((moran + 1.0 - c1) / c2)
    return TestOutcome(
        statistic=statistic,
        p_value=float(stats.chi2.sf(statistic, n)),
        theta_hat=fit.coefficients,
        method="moran",
        extras={"moran_m": moran},
    )


# --------------------------------------------------------------------------
# Rao piecewise-shape score test


def decile_breaks(excesses: np.ndarray, k: int) -> np.ndarray:
    """k interior thresholds at the j/(k+1) quantiles of the excesses."""
    return np.quantile(excesses, np.arange(1, k + 1) / (k + 1.0))


def piecewise_gpd_loglik_rows(
    y: np.ndarray, breaks: np.ndarray, scale: float, shapes: np.ndarray
) -> np.ndarray:
    """Per-observation log density of the GPD with piecewise-constant shape.

    Shape ``shapes[j]`` applies on the j-th interval between consecutive
    ``breaks`` (the first starts at 0); scales carry over between intervals
    as for threshold stability.
    """
    k = breaks.size
    starts = np.concatenate([[0.0], breaks])
    widths = np.diff(starts)
    scales = np.empty(k + 1)
    log_survival = np.zeros(k + 1)
    scales[0] = scale
    for j in range(k):
        if scales[j] <= 0:
            return np.full(y.shape, -np.inf)
        x = widths[j] / scales[j]
        if abs(shapes[j]) >= 1e-8 and 1.0 + shapes[j] * x <= 0:
            return np.full(y.shape, -np.inf)
        log_survival[j + 1] = log_survival[j] - float(_log1p_ratio(np.asarray(x), np.asarray(shapes[j])))
        scales[j + 1] = scales[j] + shapes[j] * widths[j]
    idx = np.searchsorted(breaks, y, side="left")
    return log_survival[idx] + gpd_logpdf_arrays(y - starts[idx], scales[idx], shapes[idx])


def rao_score_test(
    excesses: Sequence[float], k: int = 9, fit: Optional[FitResult] = None
) -> TestOutcome:
    """Rao score test of a common shape against a piecewise-constant shape.

    The k interior thresholds sit at the deciles (generally the j/(k+1)
    quantiles) of the excesses. The statistic ``U' I^-1 U`` is evaluated at
    the ordinary GPD fit and referred to a chi-square law with k degrees of
    freedom.

    Raises:
        DomainError: an interval between thresholds holds no data.
        NumericalError: the information matrix is singular.
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    y = np.asarray(excesses, dtype=float).ravel()
    fit = fit if fit is not None else fit_gpd_mle(y)
    if not fit.converged:
        raise NumericalError("GPD maximum likelihood fit failed", {"message": fit.message})
    spread = float(y.mean())
    ys = y / spread
    breaks = decile_breaks(ys, k)
    if np.any(np.diff(breaks) <= 0) or breaks[0] <= 0:
        raise DomainError("Interval thresholds are not strictly increasing (heavily tied data)")
    counts = np.bincount(np.searchsorted(breaks, ys, side="left"), minlength=k + 1)
    if np.any(counts == 0):
        raise DomainError(f"Empty interval in the piecewise partition (counts {counts.tolist()})")

    theta = fit.coefficients
    restricted = np.concatenate([[theta.scale / spread], np.full(k + 1, theta.shape)])

    def rows(par: np.ndarray) -> np.ndarray:
        return piecewise_gpd_loglik_rows(ys, breaks, par[0], par[1:])

    def total(par: np.ndarray) -> float:
        return float(np.sum(rows(par)))

    with np.errstate(all="ignore"):
        score = np.asarray(nd.Gradient(total, step=1e-5)(restricted), dtype=float)
        info = -np.asarray(nd.Hessian(total, step=1e-4)(restricted), dtype=float)
    info = 0.5 * (info + info.T)
    method = "observed"
    if not (np.all(np.isfinite(info)) and np.min(np.linalg.eigvalsh(info)) > 0):
        with np.errstate(all="ignore"):
            per_obs = np.asarray(nd.Jacobian(rows, step=1e-5)(restricted), dtype=float)
        per_obs = per_obs.reshape(ys.size, k + 2)
        info = per_obs.T @ per_obs
        method = "outer_product"
        logger.debug("Observed information not positive definite; using outer product of scores")
    if not np.all(np.isfinite(score)):
        raise NumericalError("Non-finite piecewise score")
    cond = float(np.linalg.cond(info))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise NumericalError("Piecewise information matrix is singular", {"condition_number": cond})
    statistic = max(float(score @ np.linalg.solve(info, score)), 0.0)
    return TestOutcome(
        statistic=statistic,
        p_value=float(stats.chi2.sf(statistic, k)),
        theta_hat=theta,
        method="rao",
        extras={"breaks": breaks * spread, "information": method},
    )


GPD_TESTS = ("ad", "cvm", "moran", "rao")


def run_gpd_test(
    excesses: np.ndarray,
    test: str,
    table: Optional[NullTable] = None,
    seed: SeedLike = None,
) -> TestOutcome:
    """Dispatch one of the GPD goodness-of-fit tests by name."""
    if test in STATISTIC_FUNCTIONS:
        return gpd_gof_test(excesses, test, table=table, seed=seed)
    if test == "moran":
        return moran_test(excesses)
    if test == "rao":
        return rao_score_test(excesses)
    raise DomainError(f"Unknown GPD test {test!r}; expected one of {GPD_TESTS}")


def table_summary(table: NullTable) -> Dict[str, Any]:
    """Provenance of a table, for run metadata."""
    return {
        "mc_replicates": table.mc_replicates,
        "mc_sample_size": table.mc_sample_size,
        "seed": table.seed,
        "checksum": table.checksum,
    }

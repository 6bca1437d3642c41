"""Batch processing of many site series: ingest, per-site selection, reports.

Input is a UTF-8 CSV with the header ``site_id,date,value``; ``date`` holds
either bare years (one value per annual block) or ISO dates. Blocks are
calendar years restricted to an optional season window; a window that wraps
the new year (for example November to March) belongs to the year it ends in.

Every run writes ``results.csv`` (one row per site), ``paths.csv`` (the
p-value and parameter paths behind each selection) and ``run.json`` (config
echo, seed, library version, null-table checksum and per-site errors).
Nothing time-dependent is written, so identical inputs, config and seed
give byte-identical files.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, EvtError, IngestError
from .estimation import REGIONAL_FITTERS, LinkedModelSpec, fit_gevr_mle, fit_gpd_mle
from .gof_gpd import (
    DEFAULT_TABLE_SAMPLE_SIZE,
    GPD_TESTS,
    STATISTIC_FUNCTIONS,
    TABLE_FILENAME,
    NullTable,
    build_null_table,
    get_null_table,
    save_null_table,
    table_summary,
)
from .inference import (
    ProfileTarget,
    ReturnLevelEstimate,
    delta_method_ci,
    profile_likelihood_ci,
    rfa_return_level,
    semiparametric_bootstrap,
)
from .parallel import ordered_map
from .sequential import (
    GEVR_TESTS,
    RULES,
    SequentialSelection,
    StepResult,
    decluster_top_r,
    order_statistic_grid,
    percentile_threshold_grid,
    select_r,
    select_threshold,
)
from .simkit import SchemeSpec, run_experiment

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COLUMNS = ("site_id", "date", "value")
MODES = ("select-r", "select-threshold", "rfa-fit", "simulate", "build-null-tables")
GRIDS = ("percentile", "order")
TRENDS = ("none", "year")
FLOAT_FORMAT = "%.10g"


# --------------------------------------------------------------------------
# ingest


@dataclass
class SiteSeries:
    """Observations of one site after season filtering and screening.

    ``blocks`` gives the block (year) of each record; ``completeness`` is
    the mean per-block completeness.
    """

    site_id: str
    times: np.ndarray
    values: np.ndarray
    blocks: np.ndarray
    completeness: float
    block_completeness: Dict[int, float] = field(default_factory=dict)
    annual: bool = False

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def n_blocks(self) -> int:
        return int(np.unique(self.blocks).size)

    def block_maxima(self) -> pd.Series:
        return pd.Series(self.values).groupby(self.blocks).max()


@dataclass
class IngestResult:
    series: List[SiteSeries]
    excluded: Dict[str, str] = field(default_factory=dict)
    dropped_blocks: Dict[str, List[int]] = field(default_factory=dict)


def parse_season(text: Optional[str]) -> Tuple[int, int]:
    """``"11-3"`` -> (11, 3); None means the whole year."""
    if not text:
        return 1, 12
    try:
        start, end = (int(part) for part in text.split("-"))
    except ValueError as e:
        raise ConfigError(f"Season must look like START-END in months, got {text!r}") from e
    if not (1 <= start <= 12 and 1 <= end <= 12):
        raise ConfigError(f"Season months must lie in 1..12, got {text!r}")
    return start, end


def _season_mask(months: np.ndarray, season: Tuple[int, int]) -> np.ndarray:
    start, end = season
    if start <= end:
        return (months >= start) & (months <= end)
    return (months >= start) | (months <= end)


def _season_days(year: int, season: Tuple[int, int]) -> int:
    start, end = season
    first = pd.Timestamp(year=year - 1 if start > end else year, month=start, day=1)
    last = pd.Timestamp(year=year, month=end, day=1) + pd.offsets.MonthEnd(0)
    return int((last - first).days) + 1


def _read_frame(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError as e:
        raise IngestError(f"Input file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise IngestError(f"Input file {path} is empty") from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestError(f"Cannot parse {path}", [(0, str(e))]) from e
    header = [c.strip() for c in frame.columns]
    if header != list(COLUMNS):
        raise IngestError(f"Expected header {','.join(COLUMNS)}, got {','.join(header)}")
    if frame.empty:
        raise IngestError(f"Input file {path} has no data rows")
    frame.columns = list(COLUMNS)
    frame = frame.fillna("").apply(lambda column: column.str.strip())
    frame["line"] = np.arange(len(frame)) + 2
    return frame


def _validate_rows(frame: pd.DataFrame) -> Tuple[pd.DataFrame, List[Tuple[int, str]]]:
    problems: List[Tuple[int, str]] = []
    frame["is_year"] = frame["date"].str.fullmatch(r"\d{1,4}")
    frame["year"] = pd.to_numeric(frame["date"].where(frame["is_year"]), errors="coerce")
    frame["stamp"] = pd.to_datetime(
        frame["date"].where(~frame["is_year"]), errors="coerce", format="ISO8601"
    )
    frame["number"] = pd.to_numeric(frame["value"], errors="coerce")
    for row in frame.itertuples():
        if not row.site_id:
            problems.append((row.line, "missing site_id"))
        if not row.is_year and pd.isna(row.stamp):
            problems.append((row.line, f"malformed date {row.date!r}"))
        if not np.isfinite(row.number):
            problems.append((row.line, f"non-numeric or non-finite value {row.value!r}"))
    frame["key"] = np.where(frame["is_year"], frame["year"].astype(str), frame["stamp"].astype(str))
    valid = frame["is_year"] | frame["stamp"].notna()
    duplicated = frame[valid].duplicated(["site_id", "key"], keep="first")
    for row in frame[valid][duplicated].itertuples():
        problems.append((row.line, f"duplicate date {row.date!r} for site {row.site_id!r}"))
    for site, group in frame[valid].groupby("site_id"):
        if group["is_year"].any() and not group["is_year"].all():
            problems.append((int(group["line"].iloc[0]), f"site {site!r} mixes bare years and dates"))
    return frame, sorted(problems)


def ingest(
    path: str,
    season: Optional[str] = None,
    min_completeness: float = 0.0,
    min_blocks: int = 0,
) -> IngestResult:
    """Read and screen a site CSV.

    Blocks less complete than ``min_completeness`` are dropped, then sites
    with fewer than ``min_blocks`` blocks are excluded; both are reported
    rather than raised.

    Raises:
        IngestError: missing or empty file, wrong header, or malformed rows
            (all problems are collected with their line numbers).
    """
    frame, problems = _validate_rows(_read_frame(path))
    if problems:
        raise IngestError(f"{len(problems)} invalid rows in {path}", problems)
    window = parse_season(season)
    result = IngestResult(series=[])
    for site in sorted(frame["site_id"].unique()):
        group = frame[frame["site_id"] == site]
        annual = bool(group["is_year"].all())
        if annual:
            group = group.sort_values("year")
            times = group["year"].to_numpy(dtype=int)
            blocks = times.copy()
            completeness = {int(b): 1.0 for b in blocks}
        else:
            group = group.sort_values("stamp")
            stamps = pd.DatetimeIndex(group["stamp"])
            keep = _season_mask(stamps.month.to_numpy(), window)
            group, stamps = group[keep], stamps[keep]
            if group.empty:
                result.excluded[site] = "no observations inside the season window"
                continue
            start, end = window
            blocks = stamps.year.to_numpy() + ((start > end) & (stamps.month.to_numpy() >= start))
            days = pd.Series(stamps.normalize()).groupby(blocks).nunique()
            completeness = {int(b): float(days[b]) / _season_days(int(b), window) for b in days.index}
            times = stamps.to_numpy()
        values = group["number"].to_numpy(dtype=float)
        low = sorted(b for b, c in completeness.items() if c < min_completeness)
        if low:
            result.dropped_blocks[site] = low
            logger.info(f"Site {site}: dropped {len(low)} blocks below {min_completeness:.0%} completeness")
            keep_rows = ~np.isin(blocks, low)
            times, values, blocks = times[keep_rows], values[keep_rows], blocks[keep_rows]
            completeness = {b: c for b, c in completeness.items() if b not in low}
        if len(completeness) < max(min_blocks, 1):
            result.excluded[site] = f"{len(completeness)} usable blocks (minimum {max(min_blocks, 1)})"
            logger.warning(f"Excluding site {site}: {result.excluded[site]}")
            continue
        result.series.append(
            SiteSeries(
                site_id=str(site),
                times=times,
                values=values,
                blocks=np.asarray(blocks, dtype=int),
                completeness=float(np.mean(list(completeness.values()))),
                block_completeness=completeness,
                annual=annual,
            )
        )
    logger.info(f"Ingested {len(result.series)} sites ({len(result.excluded)} excluded) from {path}")
    return result


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Everything one batch run needs; checked by :meth:`validate` up front."""

    mode: str
    input: Optional[str] = None
    out: Optional[str] = None
    test: Optional[str] = None
    rule: str = "forward"
    alpha: float = 0.05
    rmax: int = 10
    grid: str = "percentile"
    tau: float = 0.0
    periods: List[float] = field(default_factory=lambda: [10.0, 50.0, 100.0])
    bootstrap: int = 199
    seed: Optional[int] = None
    workers: int = 1
    null_table: Optional[str] = None
    season: Optional[str] = None
    min_completeness: float = 0.0
    min_blocks: int = 0
    estimator: str = "mle"
    trend: str = "none"
    scheme: Optional[str] = None
    subject: Optional[str] = None
    params: Dict[str, Any] = field(default_factory=dict)
    replicates: int = 1000
    level: float = 0.95

    def validate(self) -> "RunConfig":
        """Check mode-consistent fields and fill mode defaults.

        Raises:
            ConfigError: the first inconsistency found.
        """
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.out:
            raise ConfigError("An output path is required (--out)")
        if self.mode in ("select-r", "select-threshold", "rfa-fit") and not self.input:
            raise ConfigError(f"{self.mode} needs an input file (--input)")
        if self.mode == "select-r":
            self.test = self.test or "ed"
            if self.test not in GEVR_TESTS:
                raise ConfigError(f"select-r tests are {GEVR_TESTS}, got {self.test!r}")
            if self.rmax < 1:
                raise ConfigError("--rmax must be at least 1")
            if self.tau < 0:
                raise ConfigError("--tau must be non-negative")
        if self.mode == "select-threshold":
            self.test = self.test or "ad"
            if self.test not in GPD_TESTS:
                raise ConfigError(f"select-threshold tests are {GPD_TESTS}, got {self.test!r}")
            if self.grid not in GRIDS:
                raise ConfigError(f"--grid must be one of {GRIDS}")
        if self.mode == "rfa-fit":
            if self.estimator not in REGIONAL_FITTERS:
                raise ConfigError(f"--estimator must be one of {sorted(REGIONAL_FITTERS)}")
            if self.trend not in TRENDS:
                raise ConfigError(f"--trend must be one of {TRENDS}")
            if self.bootstrap < 0:
                raise ConfigError("--bootstrap must be non-negative")
        if self.mode == "simulate":
            if not self.scheme or not self.subject:
                raise ConfigError("simulate needs --scheme and --subject")
            if self.replicates < 100:
                raise ConfigError("--replicates must be at least 100")
        if self.mode == "build-null-tables" and self.replicates < 1:
            raise ConfigError("--replicates must be positive")
        if self.rule not in RULES:
            raise ConfigError(f"--rule must be one of {sorted(RULES)}")
        if not 0 < self.alpha < 1:
            raise ConfigError("--alpha must lie in (0, 1)")
        if not 0.5 < self.level < 1:
            raise ConfigError("--level must lie in (0.5, 1)")
        if any(t <= 1 for t in self.periods):
            raise ConfigError("Return periods must exceed 1")
        if self.mode == "select-r" and self.bootstrap < 99:
            raise ConfigError("--bootstrap must be at least 99 for the score tests")
        if not 0 <= self.min_completeness <= 1:
            raise ConfigError("--min-completeness must lie in [0, 1]")
        parse_season(self.season)
        if self.seed is None:
            self.seed = int(np.random.SeedSequence().entropy % (2**63))
            logger.info(f"No seed given; using {self.seed}")
        return self

    def echo(self) -> Dict[str, Any]:
        return {k: v for k, v in sorted(asdict(self).items())}


def site_seed(seed: int, site_id: str) -> np.random.SeedSequence:
    """Seed of one site, derived from the run seed and the site id only."""
    digest = int.from_bytes(hashlib.sha256(site_id.encode("utf-8")).digest()[:8], "little")
    return np.random.SeedSequence([int(seed), digest])


# --------------------------------------------------------------------------
# per-site work


def _interval_columns(prefix: str, estimate: Optional[ReturnLevelEstimate]) -> Dict[str, Any]:
    if estimate is None:
        return {prefix: np.nan, f"{prefix}_low": np.nan, f"{prefix}_high": np.nan, f"{prefix}_method": "NA"}
    return {
        prefix: estimate.estimate,
        f"{prefix}_low": estimate.ci_low,
        f"{prefix}_high": estimate.ci_high,
        f"{prefix}_method": estimate.method,
    }


def _return_levels(fit: Any, targets: Sequence[Tuple[str, ProfileTarget]], level: float) -> Dict[str, Any]:
    row: Dict[str, Any] = {}
    for name, target in targets:
        estimate = None
        try:
            estimate = profile_likelihood_ci(fit, target, level)
        except EvtError as e:
            logger.debug(f"Profile interval for {name} failed ({e}); trying the delta method")
            try:
                estimate = delta_method_ci(fit, target, level)
            except EvtError:
                estimate = None
        row.update(_interval_columns(name, estimate))
    return row


def _path_rows(site_id: str, steps: List[StepResult], selection: Optional[SequentialSelection], reverse: bool) -> List[Dict[str, Any]]:
    rows = []
    m = selection.m if selection is not None else 0
    for step in steps:
        position = (m - 1 - step.index) if reverse else step.index
        inside = selection is not None and 0 <= position < m
        row = {
            "site_id": site_id,
            "index": step.index + 1,
            "level": step.level,
            "n_obs": step.n_obs,
            "statistic": step.outcome.statistic if step.ok else np.nan,
            "p_value": step.p_value,
            "forwardstop": selection.forwardstop_path[position] if inside else np.nan,
            "strongstop": selection.strongstop_path[position] if inside else np.nan,
            "error": step.error or "",
        }
        row.update({f"param_{k}": v for k, v in sorted(step.params.items())})
        row.update({f"se_{k}": v for k, v in sorted(step.se.items())})
        rows.append(row)
    return rows


def _select_r_site(series: SiteSeries, config: RunConfig, seed: np.random.SeedSequence) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    declustered = decluster_top_r(series.values, config.rmax, config.tau, series.blocks)
    sample = declustered.sample
    if sample.n < 3:
        raise EvtError(f"only {sample.n} blocks with {config.rmax} declustered peaks")
    chosen = select_r(sample, sample.r, config.test, config.rule, config.alpha, config.bootstrap, seed)
    row: Dict[str, Any] = {
        "site_id": series.site_id,
        "n_blocks": sample.n,
        "excluded_blocks": len(declustered.short_blocks) + len(declustered.tied_blocks),
        "chosen_r": chosen.chosen_r if not chosen.failed else np.nan,
        "status": "failed" if chosen.failed else ("all_rejected" if chosen.all_rejected else "ok"),
        "reason": "",
    }
    if chosen.failed:
        row["reason"] = chosen.steps[0].error or "test failed at r = 1"
    elif chosen.all_rejected:
        row["reason"] = "GEV rejected for block maxima"
    else:
        fit = fit_gevr_mle(sample.first(chosen.chosen_r))
        row.update({k: v for k, v in fit.params_dict().items()})
        if fit.se is not None:
            row.update({f"se_{k}": float(v) for k, v in zip(fit.param_names, fit.se)})
        targets = [(f"rl_{t:g}", ProfileTarget.return_level(t)) for t in config.periods]
        row.update(_return_levels(fit, targets, config.level))
    return row, _path_rows(series.site_id, chosen.steps, chosen.selection, reverse=True)


def _select_threshold_site(
    series: SiteSeries, config: RunConfig, table: Optional[NullTable], seed: np.random.SeedSequence
) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    y = series.values
    grid = percentile_threshold_grid(y) if config.grid == "percentile" else order_statistic_grid(y)
    chosen = select_threshold(y, grid, config.test, config.rule, config.alpha, table, seed)
    status = "failed" if chosen.failed else ("all_rejected" if chosen.all_rejected else "ok")
    row: Dict[str, Any] = {
        "site_id": series.site_id,
        "n_obs": y.size,
        "n_thresholds": len(grid),
        "chosen_index": np.nan if chosen.chosen_index is None else chosen.chosen_index + 1,
        "chosen_threshold": np.nan if chosen.chosen_threshold is None else chosen.chosen_threshold,
        "status": status,
        "reason": chosen.reason or {"all_rejected": "every threshold rejected"}.get(status, ""),
    }
    if status == "ok":
        u = chosen.chosen_threshold
        excesses = y[y > u] - u
        fit = fit_gpd_mle(excesses)
        row.update(fit.params_dict())
        if fit.se is not None:
            row.update({f"se_{k}": float(v) for k, v in zip(fit.param_names, fit.se)})
        per_year = y.size / series.n_blocks
        rate = excesses.size / y.size
        row["exceedance_rate"] = rate
        targets = [(f"rl_{t:g}", ProfileTarget.return_level(t, per_year, rate, u)) for t in config.periods]
        row.update(_return_levels(fit, targets, config.level))
    return row, _path_rows(series.site_id, chosen.steps, chosen.selection, reverse=False)


def _process_site(args: Tuple[SiteSeries, RunConfig, Optional[NullTable]]) -> Tuple[Dict[str, Any], List[Dict[str, Any]], Optional[str]]:
    series, config, table = args
    seed = site_seed(config.seed, series.site_id)
    try:
        if config.mode == "select-r":
            row, paths = _select_r_site(series, config, seed)
        else:
            row, paths = _select_threshold_site(series, config, table, seed)
        if row["status"] == "failed":
            logger.error(f"Site {series.site_id} failed: {row['reason']}")
            return row, paths, row["reason"]
        return row, paths, None
    except EvtError as e:
        logger.error(f"Site {series.site_id} failed: {e}")
        return {"site_id": series.site_id, "status": "failed", "reason": str(e)}, [], str(e)


# --------------------------------------------------------------------------
# regional fit


def _regional_matrix(sites: List[SiteSeries]) -> Tuple[np.ndarray, np.ndarray]:
    maxima = pd.DataFrame({s.site_id: s.block_maxima() for s in sites}).sort_index()
    complete = maxima.dropna()
    if len(complete) < len(maxima):
        logger.warning(f"Regional fit uses the {len(complete)} blocks observed at every site (of {len(maxima)})")
    return complete.to_numpy().T, complete.index.to_numpy(dtype=float)


def _run_rfa(config: RunConfig, sites: List[SiteSeries]) -> Tuple[pd.DataFrame, pd.DataFrame, Dict[str, str]]:
    data, years = _regional_matrix(sites)
    m, n = data.shape
    if n < 5:
        raise EvtError(f"Only {n} blocks are shared by all sites")
    trend = None if config.trend == "none" else (years - years.mean()) / 10.0
    spec = LinkedModelSpec.build(m, n, loc_covariates=trend)
    fit = REGIONAL_FITTERS[config.estimator](data, spec)
    if not fit.converged:
        raise EvtError(f"Regional {config.estimator} fit failed: {fit.message}")
    boot = None
    if config.bootstrap > 0:
        boot = semiparametric_bootstrap(
            data, spec, config.estimator, config.bootstrap, config.seed, config.level, config.workers, fit=fit
        )
    coefficients = pd.DataFrame(
        {
            "name": fit.param_names,
            "estimate": fit.params,
            "se_model": fit.se if fit.se is not None else np.full(fit.params.size, np.nan),
            "se_bootstrap": boot.se if boot is not None else np.nan,
            "ci_low": boot.ci_low if boot is not None else np.nan,
            "ci_high": boot.ci_high if boot is not None else np.nan,
        }
    )
    rows = []
    for s, series in enumerate(sites):
        row: Dict[str, Any] = {"site_id": series.site_id, "n_blocks": n, "status": "ok", "reason": ""}
        for t in config.periods:
            row.update(_interval_columns(f"rl_{t:g}", rfa_return_level(fit.coefficients, spec, s, t, bootstrap=boot, level=config.level)))
        rows.append(row)
    flags = {"fit_flags": ",".join(fit.flags)}
    if boot is not None:
        flags["bootstrap_failed"] = str(boot.failed)
        flags["bootstrap_flags"] = ",".join(boot.flags)
    return pd.DataFrame(rows), coefficients, flags


# --------------------------------------------------------------------------
# run


@dataclass
class RunReport:
    exit_code: int
    files: List[str]
    errors: Dict[str, str]


def _write_csv(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="NA", lineterminator="\n")


def _write_json(payload: Dict[str, Any], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def run(config: RunConfig, data: Optional[IngestResult] = None) -> RunReport:
    """Execute one batch run and write its report files under ``config.out``.

    Per-site failures are caught, recorded in ``run.json`` and turned into
    ``status=failed`` rows; the exit code is 1 if any site failed.
    """
    from .. import __version__

    config.validate()
    meta: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "mode": config.mode,
        "seed": config.seed,
        "config": config.echo(),
    }
    errors: Dict[str, str] = {}
    files: List[str] = []

    if config.mode == "build-null-tables":
        target = config.out
        if os.path.isdir(target) or target.endswith(os.sep):
            target = os.path.join(target, TABLE_FILENAME)
        size = int(config.params.get("n", DEFAULT_TABLE_SAMPLE_SIZE))
        table = build_null_table(
            config.replicates, size, config.seed, allow_small=bool(config.params.get("allow_small", False)),
            workers=config.workers, progress=True,
        )
        save_null_table(table, target)
        meta["null_table"] = {**table_summary(table), "path": target, "failures": table.failures}
        _write_json(meta, os.path.splitext(target)[0] + ".json")
        return RunReport(0, [target], errors)

    os.makedirs(config.out, exist_ok=True)
    results_path = os.path.join(config.out, "results.csv")
    run_path = os.path.join(config.out, "run.json")

    if config.mode == "simulate":
        spec = SchemeSpec(config.scheme, dict(config.params), config.seed)
        table = None
        if config.subject in STATISTIC_FUNCTIONS:
            table = get_null_table(config.null_table, workers=config.workers)
            meta["null_table_checksum"] = table.checksum
            meta["null_table"] = table_summary(table)
        summary = run_experiment(spec, config.subject, config.replicates, config.alpha, config.workers, table, config.bootstrap)
        _write_csv(summary, results_path)
        _write_json(meta, run_path)
        return RunReport(0, [results_path, run_path], errors)

    data = data if data is not None else ingest(config.input, config.season, config.min_completeness, config.min_blocks)
    meta["excluded_sites"] = data.excluded
    meta["dropped_blocks"] = {k: list(map(int, v)) for k, v in data.dropped_blocks.items()}
    if not data.series:
        raise EvtError("No site passed screening")

    if config.mode == "rfa-fit":
        results, coefficients, flags = _run_rfa(config, data.series)
        coef_path = os.path.join(config.out, "coefficients.csv")
        _write_csv(results, results_path)
        _write_csv(coefficients, coef_path)
        meta.update(flags)
        meta["sites"] = [s.site_id for s in data.series]
        meta["errors"] = errors
        _write_json(meta, run_path)
        return RunReport(0, [results_path, coef_path, run_path], errors)

    table = None
    if config.mode == "select-threshold" and config.test in STATISTIC_FUNCTIONS:
        table = get_null_table(config.null_table, workers=config.workers)
        meta["null_table_checksum"] = table.checksum
        meta["null_table"] = table_summary(table)
    outcomes = ordered_map(
        _process_site,
        [(series, config, table) for series in data.series],
        workers=config.workers,
        progress=len(data.series) > 1,
        desc=config.mode,
    )
    rows, paths = [], []
    for series, (row, site_paths, error) in zip(data.series, outcomes):
        rows.append(row)
        paths.extend(site_paths)
        if error is not None:
            errors[series.site_id] = error
    paths_path = os.path.join(config.out, "paths.csv")
    _write_csv(pd.DataFrame(rows), results_path)
    _write_csv(pd.DataFrame(paths), paths_path)
    meta["errors"] = errors
    meta["sites"] = [s.site_id for s in data.series]
    _write_json(meta, run_path)
    if errors:
        logger.error(f"{len(errors)} of {len(data.series)} sites failed")
    return RunReport(1 if errors else 0, [results_path, paths_path, run_path], errors)

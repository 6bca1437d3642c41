"""Ordered multiple testing and automatic selection of r and thresholds.

The stopping rules take p-values in the order the hypotheses are presented
and reject a prefix of them. ForwardStop controls the false discovery rate
and StrongStop the family-wise error rate; the unadjusted rule stops at the
first acceptance. The drivers run a goodness-of-fit test at every candidate
(each depth r, or each threshold) and turn the p-value sequence into a
choice.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, EvtError
from .estimation import fit_gevr_mle
from .evd_core import SeedLike, TopROrderSample, spawn_generators
from .gof_gevr import TestOutcome, ed_test, score_test_multiplier, score_test_parametric
from .gof_gpd import GPD_TESTS, STATISTIC_FUNCTIONS, NullTable, get_null_table, run_gpd_test
from .parallel import ordered_map

logger = logging.getLogger(__name__)

P_FLOOR = 1e-300
RULE_RTOL = 1e-12
MIN_EXCEEDANCES = 10
GEVR_TESTS = ("ed", "score_pb", "score_mb")


def _validate_p(p: Sequence[float]) -> np.ndarray:
    values = np.asarray(p, dtype=float).ravel()
    if values.size == 0:
        raise DomainError("Empty p-value sequence")
    if np.any(np.isnan(values)) or np.any((values < 0) | (values > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    return values


def forwardstop_path(p: Sequence[float]) -> np.ndarray:
    """ForwardStop statistics ``-(1/k) sum_{i<=k} log(1 - p_i)`` for every k."""
    values = _validate_p(p)
    terms = -np.log(np.maximum(1.0 - values, P_FLOOR))
    return np.cumsum(terms) / np.arange(1, values.size + 1)


def strongstop_path(p: Sequence[float]) -> np.ndarray:
    """StrongStop adjusted p-values ``exp(sum_{j>=k} log(p_j) / j) * m / k``.

    Hypothesis k is rejected by StrongStop at level alpha exactly when the
    adjusted value at k is at most alpha.
    """
    values = _validate_p(p)
    m = values.size
    j = np.arange(1, m + 1)
    tail = np.cumsum((np.log(np.maximum(values, P_FLOOR)) / j)[::-1])[::-1]
    return np.exp(tail) * m / j


def _last_at_or_below(path: np.ndarray, alpha: float) -> int:
    passing = np.flatnonzero(path <= alpha * (1.0 + RULE_RTOL))
    return int(passing[-1]) + 1 if passing.size else 0


def forward_stop(p: Sequence[float], alpha: float) -> int:
    """Number of leading hypotheses rejected by ForwardStop."""
    return _last_at_or_below(forwardstop_path(p), alpha)


def strong_stop(p: Sequence[float], alpha: float) -> int:
    """Number of leading hypotheses rejected by StrongStop."""
    return _last_at_or_below(strongstop_path(p), alpha)


def unadjusted_stop(p: Sequence[float], alpha: float) -> int:
    """Number of hypotheses before the first p-value above alpha."""
    values = _validate_p(p)
    accepted = np.flatnonzero(values > alpha)
    return int(accepted[0]) if accepted.size else int(values.size)


RULES: Dict[str, Callable[[Sequence[float], float], int]] = {
    "forward": forward_stop,
    "strong": strong_stop,
    "none": unadjusted_stop,
}


@dataclass
class SequentialSelection:
    """P-values of an ordered test sequence and the rejections per rule.

    ``k_hat[rule]`` hypotheses, the first ones in presented order, are
    rejected; 0 means none.
    """

    raw_p: np.ndarray
    forwardstop_path: np.ndarray
    strongstop_path: np.ndarray
    k_hat: Dict[str, int]
    alpha: float

    @property
    def m(self) -> int:
        return int(self.raw_p.size)


def adjust_sequence(p: Sequence[float], alpha: float) -> SequentialSelection:
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    values = _validate_p(p)
    return SequentialSelection(
        raw_p=values,
        forwardstop_path=forwardstop_path(values),
        strongstop_path=strongstop_path(values),
        k_hat={name: rule(values, alpha) for name, rule in RULES.items()},
        alpha=alpha,
    )


def _check_rule(rule: str) -> None:
    if rule not in RULES:
        raise DomainError(f"Unknown rule {rule!r}; expected one of {sorted(RULES)}")


@dataclass
class StepResult:
    """Outcome of the test at one candidate depth or threshold."""

    index: int
    level: float
    n_obs: int
    outcome: Optional[TestOutcome] = None
    params: Dict[str, float] = field(default_factory=dict)
    se: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.outcome is not None

    @property
    def p_value(self) -> float:
        return self.outcome.p_value if self.outcome is not None else float("nan")


def _available_prefix(steps: List[StepResult], what: str) -> int:
    available = 0
    for step in steps:
        if not step.ok:
            break
        available += 1
    if available < len(steps):
        failed = [s.level for s in steps if not s.ok]
        logger.warning(
            f"Tests failed at {what} {failed}; applying the rule to the first {available} only"
        )
    return available


# --------------------------------------------------------------------------
# choosing r


@dataclass
class RSelection:
    """Automatic choice of the number of order statistics per block.

    ``chosen_r`` is 0 when even the block-maximum model is rejected, and
    ``failed`` is True when no test could be run at r = 1.
    """

    selection: Optional[SequentialSelection]
    chosen_r: int
    rule: str
    test: str
    steps: List[StepResult]
    failed: bool = False

    @property
    def all_rejected(self) -> bool:
        return not self.failed and self.chosen_r == 0


def _r_step(args: Tuple[TopROrderSample, int, str, int, np.random.Generator]) -> StepResult:
    sample, r, test, L, rng = args
    sub = sample.first(r)
    step = StepResult(index=r - 1, level=float(r), n_obs=sub.n)
    try:
        fit = fit_gevr_mle(sub)
        step.params = fit.params_dict()
        if fit.se is not None:
            step.se = dict(zip(fit.param_names, map(float, fit.se)))
        if not fit.converged:
            step.error = f"fit did not converge: {fit.message}"
            return step
        if test == "score_mb":
            step.outcome = score_test_multiplier(sub, L, rng, fit=fit)
        elif test == "score_pb" or r == 1:
            step.outcome = score_test_parametric(sub, L, rng, fit=fit)
        else:
            step.outcome = ed_test(sub, fit=fit)
    except EvtError as e:
        step.error = str(e)
    return step


def select_r(
    sample: TopROrderSample,
    R: int,
    test: str = "ed",
    rule: str = "forward",
    alpha: float = 0.05,
    L: int = 199,
    seed: SeedLike = None,
    workers: int = 1,
) -> RSelection:
    """Choose r by testing GEV_r at every depth 1..R.

    The p-values for depths R, R-1, ..., 1 are fed to the stopping rule in
    that order, so rejecting k hypotheses selects ``r = R - k``. With the
    entropy-difference test the r = 1 hypothesis is tested by the
    parametric-bootstrap score test. The unadjusted rule instead scans
    r = 1, 2, ... and stops before the first rejection.

    Each depth has its own generator derived from ``seed``.
    """
    if test not in GEVR_TESTS:
        raise DomainError(f"Unknown test {test!r}; expected one of {GEVR_TESTS}")
    _check_rule(rule)
    if not 1 <= R <= sample.r:
        raise DomainError(f"R={R} must lie between 1 and the sample depth {sample.r}")
    generators = spawn_generators(seed, R)
    steps = ordered_map(
        _r_step,
        [(sample, r, test, L, generators[r - 1]) for r in range(1, R + 1)],
        workers=workers,
    )
    for step in steps:
        if step.ok:
            logger.debug(f"r={int(step.level)}: p={step.p_value:.4g} ({step.outcome.method})")
        else:
            logger.debug(f"r={int(step.level)}: test failed ({step.error})")
    available = _available_prefix(steps, "r =")
    if available == 0:
        logger.error("No test succeeded at r = 1; r cannot be selected")
        return RSelection(None, 0, rule, test, steps, failed=True)

    raw = np.array([s.p_value for s in steps[:available]])
    selection = adjust_sequence(raw[::-1], alpha)
    if rule == "none":
        rejected = np.flatnonzero(raw <= alpha)
        chosen = int(rejected[0]) if rejected.size else available
        selection.k_hat["none"] = available - chosen
    else:
        chosen = available - selection.k_hat[rule]
    logger.info(f"Selected r = {chosen} ({test}, {rule} rule, alpha={alpha})")
    return RSelection(selection, chosen, rule, test, steps)


# --------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class ThresholdGrid:
    """Strictly increasing candidate thresholds with their exceedance counts."""

    thresholds: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.thresholds, dtype=float).ravel()
        counts = np.asarray(self.counts, dtype=int).ravel()
        if u.size == 0:
            raise DomainError("Threshold grid is empty")
        if u.size != counts.size:
            raise DomainError("Thresholds and counts differ in length")
        if np.any(np.diff(u) <= 0):
            raise DomainError("Thresholds must be strictly increasing")
        if np.any(np.diff(counts) > 0):
            raise DomainError("Exceedance counts must be non-increasing")
        object.__setattr__(self, "thresholds", u)
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return int(self.thresholds.size)

    @classmethod
    def from_thresholds(cls, data: Sequence[float], thresholds: Sequence[float]) -> "ThresholdGrid":
        y = np.asarray(data, dtype=float).ravel()
        u = np.unique(np.asarray(thresholds, dtype=float))
        counts = np.array([np.count_nonzero(y > level) for level in u], dtype=int)
        return cls(u, counts)

    def excesses(self, data: np.ndarray, index: int) -> np.ndarray:
        u = self.thresholds[index]
        return data[data > u] - u


PERCENTILES = np.unique(
    np.round(np.concatenate([np.arange(75.0, 97.0 + 1e-9, 2.0), np.arange(97.0, 99.5 + 1e-9, 0.1)]), 1)
)


def percentile_threshold_grid(data: Sequence[float]) -> ThresholdGrid:
    """Thresholds at the 75th-97th percentiles by 2, then 97th-99.5th by 0.1.

    Coinciding percentile values are kept once, so tied data give fewer
    than 37 thresholds.
    """
    y = np.asarray(data, dtype=float).ravel()
    y = y[np.isfinite(y)]
    if y.size == 0:
        raise DomainError("No finite data")
    if y.size < 100:
        logger.warning(f"Percentile threshold grid built from only {y.size} observations")
    return ThresholdGrid.from_thresholds(y, np.percentile(y, PERCENTILES))


def order_statistic_grid(
    data: Sequence[float], count: int = 50, step: int = 15, lower: Optional[float] = None
) -> ThresholdGrid:
    """Thresholds that drop the ``step`` lowest remaining observations each time.

    The first threshold keeps every observation (it sits at ``lower``, by
    default just below the minimum); threshold i lies at the (i * step)-th
    smallest value.
    """
    y = np.sort(np.asarray(data, dtype=float).ravel())
    if count < 1 or step < 1:
        raise DomainError("count and step must be positive")
    if (count - 1) * step >= y.size:
        raise DomainError(f"{count} thresholds of step {step} need more than {y.size} observations")
    first = np.nextafter(y[0], -np.inf) if lower is None else float(lower)
    if first >= y[0]:
        raise DomainError("Lower threshold must lie below every observation")
    thresholds = [first] + [y[i * step - 1] for i in range(1, count)]
    return ThresholdGrid.from_thresholds(y, thresholds)


@dataclass
class ThresholdSelection:
    """Automatic threshold choice.

    ``chosen_index`` is the 0-based grid index of the first threshold not
    rejected; it and ``chosen_threshold`` are None when every threshold is
    rejected. ``failed`` marks selections that would need a threshold whose
    test did not run, with the cause in ``reason``.
    """

    selection: Optional[SequentialSelection]
    chosen_index: Optional[int]
    chosen_threshold: Optional[float]
    all_rejected: bool
    rule: str
    test: str
    steps: List[StepResult]
    failed: bool = False
    reason: str = ""


def _threshold_step(args: Tuple[np.ndarray, int, float, str, Optional[NullTable], np.random.Generator]) -> StepResult:
    excesses, index, level, test, table, rng = args
    step = StepResult(index=index, level=level, n_obs=int(excesses.size))
    try:
        outcome = run_gpd_test(excesses, test, table=table, seed=rng)
        step.outcome = outcome
        step.params = {"scale": float(outcome.theta_hat.scale), "shape": float(outcome.theta_hat.shape)}
    except EvtError as e:
        step.error = str(e)
    return step


def select_threshold(
    data: Sequence[float],
    grid: ThresholdGrid,
    test: str = "ad",
    rule: str = "forward",
    alpha: float = 0.05,
    table: Optional[NullTable] = None,
    seed: SeedLike = None,
    workers: int = 1,
) -> ThresholdSelection:
    """Choose the lowest threshold whose exceedances fit the GPD.

    The GPD test runs at every grid threshold in ascending order; rejecting
    k hypotheses selects the (k+1)-th threshold.

    Raises:
        DomainError: a threshold has fewer than ten exceedances.
    """
    if test not in GPD_TESTS:
        raise DomainError(f"Unknown test {test!r}; expected one of {GPD_TESTS}")
    _check_rule(rule)
    y = np.asarray(data, dtype=float).ravel()
    y = y[np.isfinite(y)]
    sparse = np.flatnonzero(grid.counts < MIN_EXCEEDANCES)
    if sparse.size:
        raise DomainError(
            f"Threshold {grid.thresholds[sparse[0]]:.6g} has only {grid.counts[sparse[0]]} exceedances "
            f"(at least {MIN_EXCEEDANCES} needed)"
        )
    if test in STATISTIC_FUNCTIONS and table is None:
        table = get_null_table()
    generators = spawn_generators(seed, len(grid))
    steps = ordered_map(
        _threshold_step,
        [
            (grid.excesses(y, i), i, float(u), test, table, generators[i])
            for i, u in enumerate(grid.thresholds)
        ],
        workers=workers,
    )
    available = _available_prefix(steps, "thresholds")
    if available == 0:
        logger.error("No goodness-of-fit test succeeded at the lowest threshold")
        return ThresholdSelection(
            None, None, None, False, rule, test, steps, failed=True, reason="no test succeeded at the lowest threshold"
        )
    selection = adjust_sequence([s.p_value for s in steps[:available]], alpha)
    k = selection.k_hat[rule]
    if k >= available:
        if available < len(grid):
            reason = (
                f"all {available} tested thresholds rejected and the test failed at "
                f"{grid.thresholds[available]:.6g} ({steps[available].error})"
            )
            logger.error(f"No threshold selected: {reason}")
            return ThresholdSelection(selection, None, None, False, rule, test, steps, failed=True, reason=reason)
        logger.info(f"All {len(grid)} thresholds rejected ({test}, {rule} rule)")
        return ThresholdSelection(selection, None, None, True, rule, test, steps)
    logger.info(f"Selected threshold {grid.thresholds[k]:.6g} (index {k}, {test}, {rule} rule)")
    return ThresholdSelection(selection, k, float(grid.thresholds[k]), False, rule, test, steps)


# --------------------------------------------------------------------------
# declustering


@dataclass
class DeclusterResult:
    """Declustered top-r values with the labels of the blocks they came from."""

    sample: TopROrderSample
    blocks: List[Any]
    short_blocks: List[Any]
    tied_blocks: List[Any]


def _block_peaks(values: np.ndarray, positions: np.ndarray, r: int, half_window: float) -> List[float]:
    remaining = np.ones(values.size, dtype=bool)
    peaks = []
    while len(peaks) < r and remaining.any():
        idx = int(np.flatnonzero(remaining)[np.argmax(values[remaining])])
        peaks.append(float(values[idx]))
        remaining &= np.abs(positions - positions[idx]) > half_window
    return peaks


def decluster_top_r(
    values: Sequence[float],
    r: int,
    tau: float,
    blocks: Sequence[Any],
    positions: Optional[Sequence[float]] = None,
) -> DeclusterResult:
    """Extract the r largest storm peaks of each block.

    Within each block the largest remaining value is taken and every
    observation within ``tau / 2`` positions of it (in observation index
    units unless ``positions`` is given) is removed, until r peaks are found.
    Blocks with fewer than r peaks, or with tied peaks, are excluded.
    """
    if tau < 0:
        raise DomainError("Storm length tau must be non-negative")
    if r < 1:
        raise DomainError("r must be at least 1")
    y = np.asarray(values, dtype=float).ravel()
    labels = np.asarray(blocks).ravel()
    pos = np.arange(y.size, dtype=float) if positions is None else np.asarray(positions, dtype=float).ravel()
    if not y.size == labels.size == pos.size:
        raise DomainError("values, blocks and positions must have the same length")
    finite = np.isfinite(y)
    rows, kept, short, tied = [], [], [], []
    for label in np.unique(labels):
        member = (labels == label) & finite
        peaks = _block_peaks(y[member], pos[member], r, tau / 2.0)
        if len(peaks) < r:
            short.append(label.item() if hasattr(label, "item") else label)
            continue
        if np.any(np.diff(peaks) >= 0):
            tied.append(label.item() if hasattr(label, "item") else label)
            continue
        rows.append(peaks)
        kept.append(label.item() if hasattr(label, "item") else label)
    if short:
        logger.warning(f"{len(short)} blocks have fewer than {r} declustered peaks and were excluded")
    if tied:
        logger.warning(f"{len(tied)} blocks have tied peaks and were excluded")
    if not rows:
        raise DomainError(f"No block yields {r} distinct declustered peaks")
    return DeclusterResult(TopROrderSample(np.array(rows)), kept, short, tied)


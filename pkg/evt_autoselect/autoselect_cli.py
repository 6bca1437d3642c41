#!/usr/bin/env python
"""Command-line interface for automated extreme value analysis.

Runs r selection, threshold selection, regional fits, simulation studies and
null-table builds over CSV files of site observations.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv

from evt_autoselect.utils.batch import GRIDS, MODES, TRENDS, RunConfig, run
from evt_autoselect.utils.errors import EvtError, IngestError
from evt_autoselect.utils.estimation import REGIONAL_FITTERS
from evt_autoselect.utils.gof_gpd import DEFAULT_TABLE_REPLICATES, GPD_TESTS
from evt_autoselect.utils.parallel import default_workers
from evt_autoselect.utils.sequential import GEVR_TESTS, RULES
from evt_autoselect.utils.simkit import SCHEMES

# Load environment variables (EVT_NULL_TABLE_PATH, EVT_CACHE_DIR, EVT_WORKERS)
load_dotenv()

logger = logging.getLogger("evt_autoselect")


def setup_logging(log_level):
    """Set up logging configuration."""
    handler = logging.StreamHandler(sys.stderr)
    logger.setLevel(log_level)
    handler.setLevel(log_level)
    formatter = logging.Formatter('%(levelname)s: %(message)s')
    handler.setFormatter(formatter)
    # Replace handlers so repeated calls don't duplicate messages
    logger.handlers = [handler]


def parse_param(text: str) -> Tuple[str, Any]:
    """``key=value`` with the value read as JSON when possible."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", "-o", required=True, help="Output directory (or table file for build-null-tables)")
    parser.add_argument("--seed", type=int, help="Master random seed (drawn and recorded when omitted)")
    parser.add_argument("--workers", type=int, default=None, help="Worker processes (default: EVT_WORKERS or 1)")
    parser.add_argument(
        "--quiet", "-q", action="store_true",
        help="Reduce output verbosity (equivalent to --log-level ERROR)"
    )
    parser.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        default="INFO", help="Set logging level (default: INFO)"
    )


def _add_selection(parser: argparse.ArgumentParser, tests, default_test: str) -> None:
    parser.add_argument("--input", "-i", required=True, help="CSV with columns site_id,date,value")
    parser.add_argument("--test", choices=tests, default=default_test, help=f"Goodness-of-fit test (default: {default_test})")
    parser.add_argument("--rule", choices=sorted(RULES), default="forward", help="Stopping rule (default: forward)")
    parser.add_argument("--alpha", type=float, default=0.05, help="Error rate for the stopping rule (default: 0.05)")
    parser.add_argument("--periods", type=float, nargs="+", default=[10.0, 50.0, 100.0], help="Return periods in years")
    parser.add_argument("--bootstrap", type=int, default=199, help="Bootstrap size for bootstrap tests (default: 199)")
    parser.add_argument("--level", type=float, default=0.95, help="Confidence level (default: 0.95)")
    parser.add_argument("--season", help="Season window as START-END months, e.g. 11-3")
    parser.add_argument("--min-completeness", type=float, default=0.0, help="Drop blocks below this completeness")
    parser.add_argument("--min-blocks", type=int, default=0, help="Exclude sites with fewer usable blocks")


def parse_args(argv: Optional[List[str]] = None):
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        description="Automated GEV_r / GPD fitting with sequential selection of r and thresholds.",
        epilog="Environment: EVT_NULL_TABLE_PATH overrides the AD/CvM null table location; "
               "EVT_CACHE_DIR sets where a built table is cached; EVT_WORKERS sets the default worker count.",
    )
    sub = parser.add_subparsers(dest="mode", required=True, metavar="{" + ",".join(MODES) + "}")

    select_r = sub.add_parser("select-r", help="Choose the number of order statistics per block")
    _add_selection(select_r, GEVR_TESTS, "ed")
    select_r.add_argument("--rmax", type=int, default=10, help="Largest r considered (default: 10)")
    select_r.add_argument("--tau", type=float, default=0.0, help="Storm length in observations for declustering")
    _add_common(select_r)

    threshold = sub.add_parser("select-threshold", help="Choose a GPD threshold")
    _add_selection(threshold, GPD_TESTS, "ad")
    threshold.add_argument("--grid", choices=GRIDS, default="percentile", help="Candidate thresholds (default: percentile)")
    threshold.add_argument("--null-table", help="AD/CvM null table file")
    _add_common(threshold)

    rfa = sub.add_parser("rfa-fit", help="Fit the regional flood-index GEV model")
    rfa.add_argument("--input", "-i", required=True, help="CSV with columns site_id,date,value")
    rfa.add_argument("--estimator", choices=sorted(REGIONAL_FITTERS), default="mle", help="Estimator (default: mle)")
    rfa.add_argument("--trend", choices=TRENDS, default="none", help="Location trend in years (default: none)")
    rfa.add_argument("--periods", type=float, nargs="+", default=[10.0, 50.0, 100.0], help="Return periods in years")
    rfa.add_argument("--bootstrap", type=int, default=199, help="Rank bootstrap size, 0 to skip (default: 199)")
    rfa.add_argument("--level", type=float, default=0.95, help="Confidence level (default: 0.95)")
    rfa.add_argument("--season", help="Season window as START-END months, e.g. 11-3")
    rfa.add_argument("--min-completeness", type=float, default=0.0, help="Drop blocks below this completeness")
    rfa.add_argument("--min-blocks", type=int, default=0, help="Exclude sites with fewer usable blocks")
    _add_common(rfa)

    simulate = sub.add_parser("simulate", help="Run a Monte Carlo study")
    simulate.add_argument("--scheme", choices=SCHEMES, required=True, help="Data-generating scheme")
    simulate.add_argument("--subject", required=True, help="Test, rule or estimator under study")
    simulate.add_argument("--param", action="append", type=parse_param, default=[], metavar="KEY=VALUE",
                          help="Scheme parameter (repeatable)")
    simulate.add_argument("--replicates", type=int, default=1000, help="Monte Carlo replicates (default: 1000)")
    simulate.add_argument("--alpha", type=float, default=0.05, help="Nominal level (default: 0.05)")
    simulate.add_argument("--bootstrap", type=int, default=199, help="Bootstrap size inside each replicate")
    simulate.add_argument("--null-table", help="AD/CvM null table file")
    _add_common(simulate)

    tables = sub.add_parser("build-null-tables", help="Build the AD/CvM null table")
    tables.add_argument("--replicates", type=int, default=DEFAULT_TABLE_REPLICATES,
                        help=f"Replicates per shape (default: {DEFAULT_TABLE_REPLICATES})")
    tables.add_argument("--param", action="append", type=parse_param, default=[], metavar="KEY=VALUE",
                        help="n=<sample size>, allow_small=true")
    _add_common(tables)

    return parser.parse_args(argv)


def config_from_args(args) -> RunConfig:
    """Map parsed arguments onto a run configuration."""
    fields: Dict[str, Any] = {k.replace("-", "_"): v for k, v in vars(args).items()}
    fields.pop("quiet", None)
    fields.pop("log_level", None)
    fields["params"] = dict(fields.pop("param", []) or [])
    if fields.get("workers") is None:
        fields["workers"] = default_workers()
    return RunConfig(**fields)


def main(argv: Optional[List[str]] = None):
    """Main entry point."""
    args = parse_args(argv)

    if args.quiet:
        log_level = logging.ERROR
    else:
        log_level = getattr(logging, args.log_level)
    setup_logging(log_level)

    try:
        report = run(config_from_args(args))
    except IngestError as e:
        logger.error(f"Input rejected: {e}")
        sys.exit(1)
    except EvtError as e:
        logger.error(str(e))
        sys.exit(1)

    for path in report.files:
        logger.info(f"Wrote {path}")
    if report.exit_code:
        logger.error(f"Sites failed: {', '.join(sorted(report.errors))}")
        sys.exit(report.exit_code)


if __name__ == "__main__":
    main()

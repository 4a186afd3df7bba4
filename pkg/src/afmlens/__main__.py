#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

import argparse as ap
import inspect
import logging
import sys
from pathlib import Path
from typing import Callable

from . import __version__, common
from .__config__ import read_cfg, write_cfg
from .ingestion import DataFormat
from .model import ModelKind
from .synthgen import AfmMode


class ArgumentParser(ap.ArgumentParser):
    """An ArgumentParser exiting with status 1 on usage errors; 2 and 3 are fit verdicts."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def setup_logging(verbose: bool = False) -> None:
    """Log to stderr: warnings by default, everything with --verbose."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )


def filter_args(unfiltered_kwargs: dict, func: Callable) -> dict:
    """Filter Keyword Arguments for a function that does not accept some.

    Args:
        unfiltered_kwargs (dict): Keyword Arguments which could cause unexpected Keywords.
        func (function): The function that should accept the Keyword Arguments.

    Returns:
        dict: A dictionary containing all Arguments safe for the supplied function.
    """
    sig = inspect.signature(func)
    filter_keys = [param.name for param in sig.parameters.values()
                   if param.kind == param.POSITIONAL_OR_KEYWORD]

    filtered_dict = {}
    for filter_key in filter_keys:
        try:
            filtered_dict[filter_key] = unfiltered_kwargs[filter_key]
        except KeyError:
            pass

    return filtered_dict


def get_parser() -> ap.ArgumentParser:
    """Parse Arguments from the Command Line input and returns the converted Values.

    Returns:
        ArgumentParser: A parser with all arguments.

    Raises:
        argparse.ArgumentTypeError: Raised when the parameters given cannot be parsed correctly.
    """
    def check_fraction(value: str) -> float:
        try:
            num = float(value)
        except ValueError:
            raise ap.ArgumentTypeError(f"'{value}' is not a number.") from None
        if not 0 < num < 1:
            raise ap.ArgumentTypeError("must lie strictly between 0 and 1.")
        return num

    def check_positive(value: str) -> float:
        try:
            num = float(value)
        except ValueError:
            raise ap.ArgumentTypeError(f"'{value}' is not a number.") from None
        if num <= 0:
            raise ap.ArgumentTypeError("must be positive.")
        return num

    default_err_template = "run '{args.action}'"

    parser = ArgumentParser("afmlens", description="Model application-facing metrics from network-level metrics: "
                            "detect congestion knees and fit quantile-regression models.\n"
                            f"Version: {__version__}",
                            formatter_class=ap.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action='store_true',
                        help="Enable verbose/debugging output.")
    parser.set_defaults(err_template=default_err_template)

    subparsers = parser.add_subparsers(title="actions", dest="action")
    subparsers.required = True

    deterministic_parser = ap.ArgumentParser(add_help=False)
    deterministic_parser.add_argument(
        "--deterministic", action='store_true', help="Leave timestamps out of the manifest.")

    input_parser = ap.ArgumentParser(add_help=False)
    input_parser.add_argument("--nlm-file", type=Path, required=True,
                              help="Port counter records (.csv or .jsonl).")
    input_parser.add_argument("--afm-file", type=Path, required=True,
                              help="AFM records (.csv or .jsonl).")
    input_parser.add_argument("--afm", default="transmit_latency:1KiB:p99",
                              help="AFM to model, e.g. 'transmit_latency:1KiB:p99' or 'delivery_rate:p1'.")
    input_parser.add_argument("--qos", default="low", help="QoS class (high, medium, low).")
    input_parser.add_argument("--scope", default="fabric",
                              help="Scope: 'fabric', 'block:<ID>' or 'adjacency:<SRC>:<DST>'.")
    input_parser.add_argument("--fabric", help="Fabric to use when the input holds several.")
    input_parser.add_argument("--window", type=int, default=300,
                              help="Aggregation window in seconds.")

    nlm_parser = ap.ArgumentParser(add_help=False)
    nlm_parser.add_argument("--nlm", default="mau",
                            help="NLM to model, e.g. 'mau', 'mlu', 'link_p90'.")

    knee_parser = ap.ArgumentParser(add_help=False)
    knee_parser.add_argument("--curvature", type=check_fraction,
                             help="Curvature threshold of knee detection (configured default if omitted).")
    knee_parser.add_argument("--buckets", type=int, help="Bucket count (configured default if omitted).")

    model_parser = ap.ArgumentParser(add_help=False)
    model_parser.add_argument("--tau", type=check_fraction, help="Target quantile.")
    model_parser.add_argument("--alpha", type=check_fraction, help="Overprediction weight of the loss.")
    model_parser.add_argument("--threshold", type=check_positive, help="rARMSE threshold of an accurate model.")

    split_parser = ap.ArgumentParser(add_help=False)
    split_parser.add_argument("--train-end", type=int,
                              help="Epoch second where training ends and testing starts (default: 2/3 of the span).")

    out_parser = ap.ArgumentParser(add_help=False)
    out_parser.add_argument("-o", "--out", type=Path, help="Write the JSON report here instead of stdout.")

    table_parser = ap.ArgumentParser(add_help=False)
    table_parser.add_argument("--table", type=Path, help="Also write the rows as plot-ready CSV.")

    parser_synth = subparsers.add_parser(
        "synth", parents=[deterministic_parser], help="Generate a synthetic trace with known ground truth.")
    parser_synth.add_argument("--kind", choices=[kind.value for kind in ModelKind], default="linear",
                              help="Functional form of the AFM.")
    parser_synth.add_argument("--beta", type=float, default=1.0, help="Slope.")
    parser_synth.add_argument("--c", type=float, default=0.0, help="Intercept.")
    parser_synth.add_argument("--knee-x", type=check_fraction, help="Inject a congestion knee at this NLM value.")
    parser_synth.add_argument("--penalty", type=check_positive, default=500.0,
                              help="Slope of the quadratic penalty beyond the knee.")
    parser_synth.add_argument("--sigma", type=float, default=0.05, help="Lognormal noise sigma.")
    parser_synth.add_argument("--n", type=int, default=1000, help="Number of windows.")
    parser_synth.add_argument("--seed", type=int, default=0, help="Random seed.")
    parser_synth.add_argument("--x-lo", type=float, default=0.05, help="Lowest NLM value.")
    parser_synth.add_argument("--x-hi", type=float, default=0.9, help="Highest NLM value.")
    parser_synth.add_argument("--format", dest="fmt", choices=[fmt.value for fmt in DataFormat], default="csv",
                              help="Output file format.")
    parser_synth.add_argument("--afm-mode", choices=[mode.value for mode in AfmMode], default="scalar",
                              help="Emit AFMs as percentile scalars, sketches or both.")
    parser_synth.add_argument("--out", type=Path, required=True, help="Output directory.")
    parser_synth.set_defaults(func=common.cmd_synth, err_template="generate a trace in '{args.out}'")

    parser_fit = subparsers.add_parser(
        "fit", parents=[input_parser, nlm_parser, knee_parser, model_parser, split_parser, out_parser,
                        deterministic_parser],
        help="Fit one NLM/AFM pair. Exits 0 if accurate, 2 without a clear relationship, 3 on too little data.")
    parser_fit.add_argument("--plot", type=Path, help="Write plot-ready CSV (bucket, observed, predicted, knee).")
    parser_fit.set_defaults(func=common.cmd_fit, err_template="fit '{args.nlm}' against '{args.afm}'")

    parser_stability = subparsers.add_parser(
        "stability", parents=[input_parser, nlm_parser, knee_parser, model_parser, out_parser, table_parser,
                              deterministic_parser],
        help="Refit on sliding train/test windows.")
    parser_stability.add_argument("--train-weeks", type=check_positive, default=4, help="Training weeks.")
    parser_stability.add_argument("--test-weeks", type=check_positive, default=2, help="Test weeks.")
    parser_stability.add_argument("--step-weeks", type=check_positive, default=2, help="Weeks between windows.")
    parser_stability.set_defaults(func=common.cmd_stability)

    parser_sweep = subparsers.add_parser(
        "sweep", parents=[input_parser, nlm_parser, knee_parser, model_parser, split_parser, out_parser,
                          table_parser, deterministic_parser],
        help="Sweep parameters. Without axis flags, bias and curvature use their default grids; "
             "an axis flag without values uses its default grid.")
    parser_sweep.add_argument("--alphas", nargs="*", type=check_fraction, help="Loss biases.")
    parser_sweep.add_argument("--curvatures", nargs="*", type=check_fraction, help="Curvature thresholds.")
    parser_sweep.add_argument("--thresholds", nargs="*", type=check_positive, help="rARMSE thresholds.")
    parser_sweep.add_argument("--taus", nargs="*", type=check_fraction, help="Target quantiles.")
    parser_sweep.set_defaults(func=common.cmd_sweep)

    parser_knees = subparsers.add_parser(
        "knees", parents=[input_parser, nlm_parser, knee_parser, out_parser, table_parser, deterministic_parser],
        help="Detect the knee per window to see whether it persists.")
    parser_knees.add_argument("--window-weeks", type=check_positive, default=1, help="Window length in weeks.")
    parser_knees.add_argument("--step-weeks", type=check_positive, default=1, help="Weeks between windows.")
    parser_knees.set_defaults(func=common.cmd_knees, err_template="detect knees of '{args.nlm}'")

    parser_rank = subparsers.add_parser(
        "rank", parents=[input_parser, model_parser, split_parser, out_parser, deterministic_parser],
        help="Rank NLMs by how well they predict the AFM.")
    parser_rank.add_argument("--nlms", nargs="+", help="NLMs to compare (default: mlu alu mau aau link_p90 "
                             "adjacency_p90).")
    parser_rank.add_argument("--curvature", type=check_fraction, help="Curvature threshold of knee detection.")
    parser_rank.set_defaults(func=common.cmd_rank, err_template="rank predictors of '{args.afm}'")

    parser_wcfg = subparsers.add_parser(
        "write-cfg", help="Write afmlens configuration and exit.")
    parser_wcfg.add_argument("-u", "--user", action="store_true",
                             help="Write the Configuration in the Home of the user instead of /etc.")
    parser_wcfg.set_defaults(func=write_cfg, err_template="write Configuration File")

    return parser


def main() -> None:
    """Start afmlens.

    This function handles all arguments and parameters for functions.
    The logic is moved into the other files as much as possible.
    """
    read_cfg()
    args = get_parser().parse_args()
    setup_logging(args.verbose)
    safe_kwargs = filter_args(vars(args), args.func)
    try:
        ret = args.func(**safe_kwargs)
    except Exception as ex:  # pylint: disable=broad-except
        if args.verbose:
            raise
        err_msg = args.err_template.format(args=args)
        print(f"Unable to {err_msg}: {ex}", file=sys.stderr)
        sys.exit(1)
    except KeyboardInterrupt:
        print("Interrupted by User", file=sys.stderr)
        sys.exit(130)
    sys.exit(ret if isinstance(ret, int) else 0)


if __name__ == "__main__":
    main()

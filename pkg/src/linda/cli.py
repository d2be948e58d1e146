"""
Command-line front end.

    linda analyze counts.tsv meta.tsv --formula "smoke + sex | subject"
    linda simulate --setting S0 --design C0 --m 200 --n 50 --gamma 0.05
    linda plot-data result.tsv --kind volcano

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .bias import DEFAULT_GRID
from .data_io import DesignSpec, read_count_table, read_metadata
from .errors import LindaError, NumericError
from .pipeline import linda
from .preprocess import ADAPTIVE_THRESHOLD, ZERO_STRATEGIES
from .report import plot_data, read_result, write_result, write_table
from .simulate import DESIGNS, MU_GRID, SETTINGS, SimConfig, run_replications

log = logging.getLogger("linda")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(argv, config: dict, inputs, started: float, seeds=()) -> dict:
    canonical = json.dumps(config, sort_keys=True, default=str).encode()
    return {
        "command": ["linda", *argv],
        "config": config,
        "config_digest": hashlib.sha256(canonical).hexdigest(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "versions": {"linda": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "pandas": pd.__version__, "python": platform.python_version()},
        "wall_clock_seconds": round(time.perf_counter() - started, 6),
        "seeds": list(seeds),
    }


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _emit_manifest(args, manifest):
    target = args.manifest
    if target is None and args.out not in (None, "-"):
        target = f"{args.out}.manifest.json"
    text = json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"
    if target is None:
        sys.stderr.write(text)
    else:
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(text)


def _bandwidth(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'auto' or a positive number") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return value


def _quantile(text):
    if text == "off":
        return None
    return float(text)


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def cmd_analyze(args, argv) -> int:
    started = time.perf_counter()
    spec = DesignSpec.parse(args.formula)
    if args.random_intercept:
        spec = DesignSpec(spec.covariate_of_interest, spec.adjustments, args.random_intercept)
    counts = read_count_table(args.counts, args.format)
    meta = read_metadata(args.metadata, args.meta_format or args.format)
    result = linda(counts, meta, spec, min_libsize=args.min_libsize,
                   min_prevalence=args.min_prevalence, winsor_quantile=args.winsor_quantile,
                   zero_handling=args.zero_handling, q=args.q, bias_correction=args.bias,
                   bandwidth=args.kde_bandwidth, grid_points=args.kde_grid,
                   adaptive_threshold=args.adaptive_threshold, threads=args.threads)
    with _open_out(args.out) as fh:
        write_result(result, fh)
    config = {
        "subcommand": "analyze", "formula": str(spec), "method": result.meta["method"],
        "zero_handling": args.zero_handling, "zero_strategy": result.meta["zero_strategy"],
        "q": args.q, "bias": args.bias, "kde_bandwidth": args.kde_bandwidth,
        "kde_grid": args.kde_grid, "min_libsize": args.min_libsize,
        "min_prevalence": args.min_prevalence, "winsor_quantile": args.winsor_quantile,
        "adaptive_threshold": args.adaptive_threshold,
    }
    _emit_manifest(args, _manifest(argv, config, [args.counts, args.metadata], started,
                                   [args.seed] if args.seed is not None else []))
    return EXIT_OK


def simulate_table(args) -> pd.DataFrame:
    indices = args.effect_index or list(range(1, len(MU_GRID) + 1))
    seed = 1 if args.seed is None else args.seed
    rows = []
    for k in indices:
        cfg = SimConfig(setting=args.setting, covariate_design=args.design, m=args.m, n=args.n,
                        gamma=args.gamma, mu_index=k, replicates=args.reps, seed=seed,
                        param_source=args.param_file or "synthetic",
                        mixed_signs=args.mixed_signs)
        met = run_replications(cfg, method=args.method, zero=args.zero_handling,
                               bias=args.bias, q=args.q, workers=args.threads)
        rows.append({
            "setting": cfg.setting, "design": cfg.covariate_design, "m": cfg.m, "n": cfg.n,
            "gamma": cfg.gamma, "effect_index": k, "mu": cfg.mu, "method": args.method,
            "zero_handling": args.zero_handling, "bias": "on" if args.bias else "off",
            "q": args.q, "reps": cfg.replicates, "failures": met.failures,
            "fdr": met.fdr_mean, "tpr": met.tpr_mean, "fdr_ci": met.fdr_ci_halfwidth,
        })
    return pd.DataFrame(rows)


def cmd_simulate(args, argv) -> int:
    started = time.perf_counter()
    table = simulate_table(args)
    with _open_out(args.out) as fh:
        write_table(table, fh)
    config = {k: v for k, v in vars(args).items() if k not in ("func", "out", "manifest")}
    inputs = [args.param_file] if args.param_file else []
    _emit_manifest(args, _manifest(argv, config, inputs, started,
                                   [1 if args.seed is None else args.seed]))
    return EXIT_OK


def cmd_plot_data(args, argv) -> int:
    started = time.perf_counter()
    result = read_result(args.result)
    table = plot_data(result, args.kind, args.fdr)
    with _open_out(args.out) as fh:
        write_table(table, fh)
    _emit_manifest(args, _manifest(argv, {"subcommand": "plot-data", "kind": args.kind,
                                          "fdr": args.fdr}, [args.result], started))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linda", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker cap (default: available cores)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", "-o", default=None, help="output path (default stdout)")
    common.add_argument("--manifest", default=None,
                        help="manifest path (default <out>.manifest.json, or stderr)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="differential abundance of a table")
    p.add_argument("counts", help="taxa x samples count table")
    p.add_argument("metadata", help="samples x variables metadata table")
    p.add_argument("--formula", required=True, help='"u [+ c1 + c2] [| group]"')
    p.add_argument("--format", choices=("tsv", "csv"), default=None,
                   help="delimiter override (default: by extension)")
    p.add_argument("--meta-format", choices=("tsv", "csv"), default=None)
    p.add_argument("--random-intercept", default=None, metavar="GROUP",
                   help="fit a random intercept per level of GROUP")
    p.add_argument("--zero-handling", choices=ZERO_STRATEGIES, default="adaptive")
    p.add_argument("--adaptive-threshold", type=float, default=ADAPTIVE_THRESHOLD)
    p.add_argument("--q", type=float, default=0.05, help="target FDR")
    p.add_argument("--bias", type=_on_off, default=True, help="on|off")
    p.add_argument("--kde-bandwidth", type=_bandwidth, default="auto")
    p.add_argument("--kde-grid", type=int, default=DEFAULT_GRID)
    p.add_argument("--min-libsize", type=int, default=1000)
    p.add_argument("--min-prevalence", type=float, default=0.10)
    p.add_argument("--winsor-quantile", type=_quantile, default=0.97, help="quantile or 'off'")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", parents=[common], help="empirical FDR / power")
    p.add_argument("--setting", choices=SETTINGS, default="S0")
    p.add_argument("--design", choices=DESIGNS, default="C0")
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--gamma", type=float, default=0.05)
    p.add_argument("--effect-index", type=int, action="append", choices=range(1, 7),
                   help="repeatable; default all six")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--method", choices=("ols", "lmm"), default="ols")
    p.add_argument("--zero-handling", choices=ZERO_STRATEGIES, default="adaptive")
    p.add_argument("--bias", type=_on_off, default=True, help="on|off")
    p.add_argument("--q", type=float, default=0.05)
    p.add_argument("--param-file", default=None, help="two-column TSV of beta0, sigma2")
    p.add_argument("--mixed-signs", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plot-data", parents=[common], help="effect-size / volcano tables")
    p.add_argument("result", help="result TSV from analyze")
    p.add_argument("--kind", choices=("effectsize", "volcano"), default="effectsize")
    p.add_argument("--fdr", type=float, default=0.1)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args, argv)
    except NumericError as exc:
        print(f"linda: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LindaError, OSError) as exc:
        print(f"linda: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

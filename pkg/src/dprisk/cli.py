"""Command-line front end.

Subcommands ``fit``, ``copula``, ``portfolio`` and ``risk`` run the pipeline
up to that stage; ``pipeline`` runs everything including density, PCA and
diagnostics output.  ``report`` re-renders a saved risk report as text and
``simulate-gbm`` runs the mixture-GBM martingale check.

Settings come from defaults, then a YAML config file, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .errors import DpRiskError, InputError, NumericalError
from .market import MixtureGbmParams, martingale_pass_fraction, martingale_residuals, simulate_mixture_gbm
from .pipeline import EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, RunConfig, run_pipeline
from .risk import RiskReport

STAGE_COMMANDS = {"fit": "fit", "copula": "copula", "portfolio": "portfolio", "risk": "risk", "pipeline": "all"}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _add_run_flags(p):
    p.add_argument("--config", help="YAML configuration file")
    p.add_argument("--input", action="append", dest="inputs", metavar="CSV",
                   help="price CSV with a date column (repeatable)")
    p.add_argument("--date-column", default=None)
    p.add_argument("--columns", help="comma-separated price columns to read")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--aggregate", choices=("index_mean", "predictive"),
                   help="summarise sweeps by index-wise means or by the pooled predictive")
    p.add_argument("--copula-df", type=float)
    p.add_argument("--weights", type=_floats, help="comma-separated portfolio weights")
    p.add_argument("--risk-aversion", type=float, help="mean-variance weights with this lambda")
    p.add_argument("--long-only", action="store_true")
    p.add_argument("--gammas", type=_floats, help="comma-separated tail levels")
    p.add_argument("--wang-r", type=float)
    p.add_argument("--n-sims", type=int)


def _run_config(args):
    overrides = {"output_dir": args.output_dir, "seed": args.seed, "copula_df": args.copula_df,
                 "weights": args.weights, "gammas": args.gammas, "wang_r": args.wang_r, "n_sims": args.n_sims}
    if args.inputs:
        cols = args.columns.split(",") if args.columns else None
        overrides["inputs"] = [{"path": p, "date_column": args.date_column or "date", "columns": cols}
                               for p in args.inputs]
    if args.risk_aversion is not None or args.long_only:
        overrides["mean_variance"] = {"risk_aversion": args.risk_aversion, "long_only": args.long_only}
    if args.config:
        cfg = RunConfig.from_file(args.config, overrides)
    else:
        if not args.inputs:
            raise InputError("give --config or at least one --input")
        cfg = RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    dp = dict(cfg.dp)
    if args.max_iter is not None:
        dp["max_iter"] = args.max_iter
    if args.burn_in is not None:
        dp["burn_in"] = args.burn_in
    if args.aggregate is not None:
        dp["aggregate"] = args.aggregate
    cfg.dp = dp
    return cfg


def _cmd_stage(args):
    cfg = _run_config(args)
    result = run_pipeline(cfg, until=STAGE_COMMANDS[args.command])
    if result.error:
        print(f"error: {result.error}", file=sys.stderr)
    elif result.report is not None:
        print(result.report.to_text(), end="")
    print(f"artifacts in {result.output_dir} (exit {result.exit_code})", file=sys.stderr)
    return result.exit_code


def _cmd_report(args):
    try:
        with open(args.report) as fh:
            report = RiskReport.from_dict(json.load(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read risk report {args.report}: {exc}") from exc
    text = report.to_text(percent=not args.raw)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def _cmd_simulate_gbm(args):
    params = MixtureGbmParams(args.mu, np.asarray(args.weights), np.asarray(args.sigmas))
    paths = simulate_mixture_gbm(params, args.horizon, args.n_paths, args.dt, args.seed)
    res = martingale_residuals(paths, params)
    frac = martingale_pass_fraction(res)
    if args.out:
        np.savetxt(args.out, res, delimiter=",", header="t,mean,std_error", comments="", fmt="%.17g")
    print(f"steps within 3 SE of zero: {frac:.4f}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dprisk", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the pipeline through the {name} stage")
        _add_run_flags(p)
        p.set_defaults(func=_cmd_stage)
    p = sub.add_parser("report", help="render a saved risk_report.json as a text table")
    p.add_argument("report")
    p.add_argument("--out")
    p.add_argument("--raw", action="store_true", help="print raw values rather than percent")
    p.set_defaults(func=_cmd_report)
    p = sub.add_parser("simulate-gbm", help="mixture-GBM simulation and martingale check")
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--weights", type=_floats, default=[0.5, 0.3, 0.2])
    p.add_argument("--sigmas", type=_floats, default=[0.1, 0.2, 0.4])
    p.add_argument("--horizon", type=int, default=252)
    p.add_argument("--n-paths", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1 / 252)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV of per-step residual means and standard errors")
    p.set_defaults(func=_cmd_simulate_gbm)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DpRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

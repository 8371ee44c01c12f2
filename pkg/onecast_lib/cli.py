"""
Command-line surface: decompose, verify, train, forecast, eval, budget,
selfcheck and generate.

Every command validates its configuration before writing anything; failures
exit with the code carried by the raised OneCastError.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch
from dotenv import load_dotenv
from pydantic import ValidationError

from .benchmark import DEFAULT_HORIZONS, plot_forecast_svg, run_evaluation, write_report_csv, write_report_json
from .checkpoint import load_checkpoint
from .config import LOG_LEVEL_ENV, STEPS_PER_DAY, DatasetSpec, load_run_config, resolve_output_dir
from .dataset import domain_windows, load_csv, write_csv
from .decomposition import (
    DEFAULT_EPSILON,
    DEFAULT_MA_WINDOW,
    SeriesWindow,
    moving_average_decompose,
    normalize,
    residual_component_rate,
)
from .diffusion import SCHEDULER_KINDS, write_trace_jsonl
from .errors import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ConfigError, DatasetError, NumericError, OneCastError
from .evaluator import BUDGET_METHODS, token_budget
from .generate_csvs import write_corpora
from .pipeline import forecast, run_training
from .seasonal import build_basis, default_periods, evaluate_basis, fit_weights_least_squares
from .selfcheck import CHECKS, run_selfcheck

logger = logging.getLogger(__name__)

VERIFY_TOLERANCE = 1e-12


# ------------------------------------------------------------------------
# decompose / verify
# ------------------------------------------------------------------------
def cmd_decompose(args) -> int:
    if args.window < 1:
        raise ConfigError(f"moving-average window must be >= 1, got {args.window}")
    series = load_csv(args.input)
    x_norm, stats = normalize(series, args.epsilon)
    dec = moving_average_decompose(x_norm, args.window, stats)

    basis = build_basis(default_periods(STEPS_PER_DAY[args.sampling_period]), STEPS_PER_DAY[args.sampling_period])
    if series.shape[0] >= 2 * basis.size:
        fitted = evaluate_basis(basis, fit_weights_least_squares(basis, dec.season), 0, series.shape[0])
    else:
        logger.warning("Series of %d steps is too short to fit %d basis frequencies; RCR uses a zero residual",
                       series.shape[0], basis.size)
        fitted = dec.season
    rcr = residual_component_rate(dec.trend, fitted, dec.season - fitted)

    out = resolve_output_dir(args.output_dir, "decomposed")
    write_csv(dec.trend, out / "trend.csv")
    write_csv(dec.season, out / "season.csv")
    write_csv(torch.stack([stats.mu, stats.sigma]).T, out / "stats.csv", columns=["mu", "sigma"])
    (out / "rcr.txt").write_text(f"rcr {rcr:.17g}\n", encoding="utf-8")
    print(f"rcr {rcr:.6g}")
    logger.info("Wrote trend/season/stats for %d x %d series to %s", series.shape[0], series.shape[1], out)
    return EXIT_OK


def cmd_verify(args) -> int:
    series = load_csv(args.input)
    x_norm, _ = normalize(series, args.epsilon)
    trend = load_csv(Path(args.decomposed) / "trend.csv")
    season = load_csv(Path(args.decomposed) / "season.csv")
    if trend.shape != x_norm.shape or season.shape != x_norm.shape:
        raise DatasetError(f"decomposition files {tuple(trend.shape)} / {tuple(season.shape)} do not match input "
                           f"{tuple(x_norm.shape)}")
    gap = float((trend + season - x_norm).abs().max())
    if gap > VERIFY_TOLERANCE:
        raise NumericError(f"trend + season differs from the normalized input by {gap:.3e}")
    print(f"ok max deviation {gap:.3e}")
    return EXIT_OK


# ------------------------------------------------------------------------
# train
# ------------------------------------------------------------------------
def _train_overrides(args) -> Dict[str, Any]:
    train: Dict[str, Any] = {"seed": args.seed, "epochs": args.epochs, "stage": args.stage,
                             "batch_size": args.batch_size}
    model: Dict[str, Any] = {"scheduler": args.scheduler}
    if args.single_decoder:
        model["dual_decoder"] = False
    overrides: Dict[str, Any] = {"train": train, "model": model, "output_dir": args.output_dir}
    if args.input:
        overrides["datasets"] = [{"path": args.input, "domain_id": args.domain, "sampling_period": args.sampling_period}]
    return overrides


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, _train_overrides(args))
    if not cfg.datasets:
        raise ConfigError("no datasets configured; pass --config or --input")
    datasets = [
        domain_windows(spec, cfg.train.history_length, cfg.train.horizon, cfg.train.stride) for spec in cfg.datasets
    ]
    written = run_training(datasets, cfg, cfg.output_dir, show_progress=not args.quiet)
    for stage, path in written.items():
        print(f"{stage} {path}")
    return EXIT_OK


# ------------------------------------------------------------------------
# forecast / eval
# ------------------------------------------------------------------------
def _pick_domain(domains: Dict[str, int], requested: Optional[str]) -> str:
    if requested is None:
        if len(domains) != 1:
            raise ConfigError(f"checkpoint has domains {sorted(domains)}; pass --domain")
        return next(iter(domains))
    if requested not in domains:
        raise ConfigError(f"domain {requested!r} not in checkpoint domains {sorted(domains)}")
    return requested


def cmd_forecast(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    if args.horizon is not None and args.horizon != model.horizon:
        raise ConfigError(f"checkpoint forecasts {model.horizon} steps, --horizon {args.horizon} requested")
    if args.steps is not None and args.steps < 1:
        raise ConfigError(f"--steps must be >= 1, got {args.steps}")
    domain_id = _pick_domain(model.domains, args.domain)
    series = load_csv(args.input)
    if series.shape[0] < model.history_length:
        raise DatasetError(f"input has {series.shape[0]} rows, the checkpoint needs {model.history_length}")
    window = SeriesWindow(series[-model.history_length:], domain_id)

    traces: List = []
    prediction = forecast(window, ckpt, steps=args.steps, components=args.components, traces=traces)
    write_csv(prediction, args.output)
    if args.trace:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        Path(args.trace).write_text("", encoding="utf-8")
        write_trace_jsonl(traces, args.trace)
    if args.plot:
        plot_forecast_svg(window.values, None, prediction, args.plot, title=f"{domain_id} forecast")
    logger.info("Wrote %d x %d forecast to %s", prediction.shape[0], prediction.shape[1], args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model
    horizons = args.horizons or [h for h in DEFAULT_HORIZONS if h <= model.horizon]
    too_long = [h for h in horizons if h > model.horizon or h < 1]
    if too_long:
        raise ConfigError(f"horizons {too_long} outside [1, {model.horizon}] for this checkpoint")
    if args.input:
        specs = [DatasetSpec(path=args.input, domain_id=_pick_domain(model.domains, args.domain),
                             sampling_period=args.sampling_period)]
    else:
        specs = load_run_config(args.config).datasets if args.config else ckpt.config.datasets
    specs = [s for s in specs if s.domain_id in model.domains]
    if not specs:
        raise ConfigError(f"no dataset matches the checkpoint domains {sorted(model.domains)}")

    reports = []
    plot_windows = None
    for spec in specs:
        windows = domain_windows(spec, model.history_length, model.horizon, ckpt.config.train.stride)
        if plot_windows is None:
            plot_windows = windows
        reports.append(run_evaluation(ckpt, windows.test, spec.domain_id, horizons, steps=args.steps,
                                      oracle=args.oracle, checkpoint_name=str(args.checkpoint),
                                      show_progress=not args.quiet))
    out = resolve_output_dir(args.output_dir, "eval")
    for report in reports:
        write_report_json(report, out / f"eval_{report.domain_id}.json")
    write_report_csv(reports, out / "eval.csv")
    if args.plot:
        test = plot_windows.test
        components = "full" if model.predictor is not None else "seasonal"
        window = SeriesWindow(test.history[-1], specs[0].domain_id)
        prediction = forecast(window, ckpt, steps=args.steps, components=components)
        plot_forecast_svg(window.values, test.future[-1], prediction, args.plot, title=f"{specs[0].domain_id} test window")
    print(f"report {out / 'eval.csv'}")
    return EXIT_OK


# ------------------------------------------------------------------------
# budget / selfcheck / generate
# ------------------------------------------------------------------------
def cmd_budget(args) -> int:
    methods = [args.method] if args.method else list(BUDGET_METHODS)
    for method in methods:
        count = token_budget(method, args.length, args.patch, args.channels, args.digits, args.vocab_tokens)
        print(f"{method} {count}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    table = run_selfcheck(inject_fault=args.inject_fault)
    print(table.to_string(index=False))
    return EXIT_OK if bool(table["passed"].all()) else EXIT_NUMERIC


def cmd_generate(args) -> int:
    written = write_corpora(args.output_dir, seeds=range(args.seeds), length=args.length)
    for name, paths in written.items():
        for path in paths:
            print(f"{name} {path}")
    return EXIT_OK


# ------------------------------------------------------------------------
# parser
# ------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onecast", description="Cross-domain time series forecasting")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (default INFO)")
    parser.add_argument("--quiet", action="store_true", help="Hide progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="Write trend / season / stats CSVs and the RCR of a series")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", help="Default: decomposed, or ONECAST_OUTPUT_DIR")
    p.add_argument("--window", type=int, default=DEFAULT_MA_WINDOW, help="Moving-average length n")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--sampling-period", default="1h", choices=sorted(STEPS_PER_DAY))
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("verify", help="Check that decompose outputs sum to the normalized input")
    p.add_argument("--input", required=True)
    p.add_argument("--decomposed", required=True, help="Directory written by decompose")
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="Train Stage I, Stage II or both")
    p.add_argument("--config", help="TOML run file")
    p.add_argument("--input", help="Single CSV dataset instead of the config's datasets")
    p.add_argument("--domain", default="default")
    p.add_argument("--sampling-period", default="1h", choices=sorted(STEPS_PER_DAY))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--stage", choices=["joint", "diffusion", "both"])
    p.add_argument("--scheduler", choices=SCHEDULER_KINDS)
    p.add_argument("--single-decoder", action="store_true", help="Ablation: the history decoder also decodes the future")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="Forecast from the last L_h rows of a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--domain")
    p.add_argument("--horizon", type=int)
    p.add_argument("--steps", type=int, help="Inference rounds T (1 = all tokens at once)")
    p.add_argument("--components", choices=["full", "seasonal"], default="full")
    p.add_argument("--trace", help="Write per-round denoise traces (JSON lines)")
    p.add_argument("--plot", help="Write an SVG plot")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="Per-horizon metrics on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--input")
    p.add_argument("--domain")
    p.add_argument("--sampling-period", default="1h", choices=sorted(STEPS_PER_DAY))
    p.add_argument("--horizons", type=int, nargs="+")
    p.add_argument("--steps", type=int)
    p.add_argument("--output-dir", help="Default: eval, or ONECAST_OUTPUT_DIR")
    p.add_argument("--plot")
    p.add_argument("--oracle", action="store_true", help="Debug: score the truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("budget", help="Tokens needed to encode one window")
    p.add_argument("--method", choices=BUDGET_METHODS)
    p.add_argument("--length", type=int, default=96)
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--digits", type=int, default=3, help="Tokens per value for the text method")
    p.add_argument("--vocab-tokens", type=int, default=437, help="M for the onecast method")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("selfcheck", help="Numeric self-check battery")
    p.add_argument("--inject-fault", choices=sorted(CHECKS), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("generate", help="Write the synthetic corpora to CSV")
    p.add_argument("--output-dir", default="data/synthetic")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--length", type=int, default=4000)
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OneCastError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Stochastic forecasting toolkit: command-line entry point.

Subcommands: simulate, spm, mpm, backtest, compare.  Progress goes to
standard error through logging; artifacts go to the output directory only.
Exit codes: 0 success, 1 usage, 2 data, 3 numeric.
"""

import argparse
import logging
import os
import sys
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from backtest import METHODS, STREAM_MPM, STREAM_SPM, run_backtests
from config import CONFIG_KEYS, LOG_LEVEL, RunConfig, load_run_config
from errors import ForecastError, UsageError
from estimation import resolve_policy
from exporter import read_report, spm_forecast_frame, write_comparison, write_forecasts, write_horizon_curves, write_runs
from generator import ENGINE_PRESET_LABEL, STREAM_SYNTH, load_spec, simulate_gbm, simulate_linear_sde
from models import GbmSpec, MultiSeries
from rng import SeededRng, derive_substream
from series import load_csv, resolve_column, window, write_csv
from simulation import forecast_mpm_multistep
from spm import estimate_gbm, forecast_spm_multistep

# ---------- Logging ----------
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
logger = logging.getLogger(__name__)


# ---------- Parser ----------

class _Parser(argparse.ArgumentParser):
    """Bad flags become a UsageError (exit 1) instead of argparse's exit 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _config_epilog() -> str:
    width = max(len(k) for k in CONFIG_KEYS)
    lines = ["config keys (KEY=VALUE lines in --config files):"]
    lines += [f"  {key.ljust(width)}  {text}" for key, text in CONFIG_KEYS.items()]
    return "\n".join(lines)


def _common(parser: argparse.ArgumentParser, with_input: bool = True) -> None:
    parser.add_argument("--config", help="KEY=VALUE run configuration file")
    parser.add_argument("--seed", type=int, help="u64 seed")
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--threads", type=int, help="worker threads")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    if with_input:
        parser.add_argument("--input", help="input CSV (header row, one column per feature)")
        parser.add_argument("--dt", type=float, help="sampling interval")
        parser.add_argument("--column", help="restrict to one feature (name or 0-based index)")
        parser.add_argument(
            "--timestamp-column", action="store_const", const=True, default=None,
            help="the first CSV column is a timestamp and is skipped",
        )


def _window_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--w-base", type=int, dest="window_base")
    parser.add_argument("--w-min", type=int, dest="window_min")
    parser.add_argument("--w-max", type=int, dest="window_max")
    parser.add_argument("--threshold", type=float, dest="window_threshold")
    parser.add_argument("--lookback", type=int, dest="window_lookback")


def _mpm_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--particles", type=int, dest="mpm_particles")
    parser.add_argument("--sigma-mode", dest="mpm_sigma_mode")
    parser.add_argument("--freeze-params", action="store_const", const=True, default=None, dest="mpm_freeze_params")


def build_parser() -> argparse.ArgumentParser:
    epilog = _config_epilog()
    formatter = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="forecast", description=__doc__, epilog=epilog, formatter_class=formatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    sim = sub.add_parser("simulate", help="generate a synthetic series", epilog=epilog, formatter_class=formatter)
    _common(sim, with_input=False)
    sim.add_argument("--model", choices=["gbm", "linear"], default="linear")
    sim.add_argument("--spec", help="KEY=VALUE generator spec file")
    sim.add_argument("--preset", choices=["engine"], help="built-in linear spec")
    sim.add_argument("--out", help="CSV path (default <output>/simulated.csv)")

    spm = sub.add_parser("spm", help="single-particle GBM forecast from the end of a series", epilog=epilog, formatter_class=formatter)
    _common(spm)
    spm.add_argument("--window", type=int, dest="spm_window")
    spm.add_argument("--horizon", type=int, dest="spm_horizon")
    spm.add_argument("--bounds", choices=["variance", "quantile"], dest="spm_bounds")
    spm.add_argument("--confidence", type=float, dest="spm_confidence")

    mpm = sub.add_parser("mpm", help="multi-particle SDE forecast from the end of a series", epilog=epilog, formatter_class=formatter)
    _common(mpm)
    _window_flags(mpm)
    _mpm_flags(mpm)
    mpm.add_argument("--horizon", type=int, dest="mpm_horizon")

    bt = sub.add_parser("backtest", help="rolling-origin evaluation", epilog=epilog, formatter_class=formatter)
    _common(bt)
    _window_flags(bt)
    _mpm_flags(bt)
    bt.add_argument("--method", choices=[*METHODS, "all"])
    bt.add_argument("--horizon", type=int, dest="backtest_horizon")
    bt.add_argument("--stride", type=int, dest="backtest_stride")
    bt.add_argument("--window", type=int, dest="spm_window")
    bt.add_argument("--train-fraction", type=float, dest="baseline_train_fraction")
    bt.add_argument("--criterion", choices=["aic", "bic"], dest="baseline_criterion")

    cmp_ = sub.add_parser("compare", help="compare saved report JSON files", epilog=epilog, formatter_class=formatter)
    _common(cmp_, with_input=False)
    cmp_.add_argument("--reports", nargs="+", required=True, help="report_<method>.json files")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """argparse dests map to config keys: ``mpm_particles`` -> ``mpm.particles``."""
    overrides: Dict[str, Any] = {}
    for dest, value in vars(args).items():
        if value is None:
            continue
        if dest in CONFIG_KEYS:
            overrides[dest] = value
            continue
        section, _, name = dest.partition("_")
        key = f"{section}.{name}"
        if key in CONFIG_KEYS:
            overrides[key] = value
    return overrides


# ---------- Commands ----------

def _load_series(config: RunConfig) -> MultiSeries:
    if not config.input:
        raise UsageError("--input (or input= in --config) is required")
    series = load_csv(config.input, config.dt, has_timestamp_column=config.timestamp_column)
    if config.column is not None:
        j = resolve_column(series, config.column)
        series = MultiSeries(rows=series.rows[:, [j]], dt=series.dt, feature_names=(series.feature_names[j],))
    return series


def cmd_simulate(args: argparse.Namespace, config: RunConfig) -> int:
    spec = load_spec(args.spec, args.model, args.preset)
    rng = SeededRng(config.seed, STREAM_SYNTH)
    if isinstance(spec, GbmSpec):
        path = simulate_gbm(spec, rng)
        series = MultiSeries(rows=path.values[:, None], dt=spec.dt, feature_names=("value",))
    else:
        series = simulate_linear_sde(spec, rng)
        if args.preset:
            logger.info("Using the %s", ENGINE_PRESET_LABEL)
    out = args.out or os.path.join(config.output, "simulated.csv")
    write_csv(series, out)
    return 0


def cmd_spm(args: argparse.Namespace, config: RunConfig) -> int:
    series = _load_series(config)
    settings = config.spm
    stream = SeededRng(config.seed, STREAM_SPM)
    frames = []
    for j in range(series.n_features):
        col = series.column(j)
        params = estimate_gbm(window(col, len(col), settings.window), series.dt)
        logger.info("%s: a=%.6g b=%.6g over %d increments", col.name, params.a, params.b, params.window_size)
        steps = forecast_spm_multistep(
            col,
            params,
            settings.horizon,
            series.dt,
            derive_substream(stream, len(series), j),
            bounds=settings.bounds,
            confidence=settings.confidence,
        )
        frames.append(spm_forecast_frame(col.name, steps))
    write_forecasts("SPM", pd.concat(frames, ignore_index=True), config.output)
    return 0


def cmd_mpm(args: argparse.Namespace, config: RunConfig) -> int:
    series = _load_series(config)
    w = config.window
    policy = resolve_policy(
        series, series.dt,
        w_base=w.base, w_min=w.min, w_max=w.max, threshold=w.threshold, lookback=w.lookback,
    )
    forecast = forecast_mpm_multistep(
        series,
        policy,
        config.mpm.horizon,
        config.mpm.particles,
        series.dt,
        derive_substream(SeededRng(config.seed, STREAM_MPM), len(series), 0),
        sigma_mode=config.mpm.sigma_mode,
        freeze_params=config.mpm.freeze_params,
        threads=config.threads,
    )
    horizon, n = forecast.standard.shape
    frame = pd.DataFrame({
        "step": np.repeat(np.arange(1, horizon + 1), n),
        "feature": list(series.feature_names) * horizon,
        "standard": np.asarray(forecast.standard).reshape(-1),
        "corrected": np.asarray(forecast.corrected).reshape(-1),
        "window": np.repeat([d.chosen_width for d in forecast.decisions], n),
        "regime": np.repeat([d.regime for d in forecast.decisions], n),
    })
    write_forecasts("MPM", frame, config.output)
    return 0


def cmd_backtest(args: argparse.Namespace, config: RunConfig) -> int:
    series = _load_series(config)
    methods = list(METHODS) if config.method == "all" else [config.method]
    runs = run_backtests(series, config, methods)
    write_runs(runs, config.output)
    return 0


def cmd_compare(args: argparse.Namespace, config: RunConfig) -> int:
    reports = [read_report(path) for path in args.reports]
    write_comparison(reports, config.output)
    write_horizon_curves(reports, config.output)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "spm": cmd_spm,
    "mpm": cmd_mpm,
    "backtest": cmd_backtest,
    "compare": cmd_compare,
}


# ---------- Entry point ----------

def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "log_level", None):
            logging.getLogger().setLevel(args.log_level.upper())
        if not args.command:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        config = load_run_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, config)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else 0
    except ForecastError as exc:
        logger.error("%s", exc.detail)
        return exc.exit_code
    except ValidationError as exc:
        first = exc.errors()[0]
        logger.error("Invalid value for %s: %s", ".".join(str(p) for p in first.get("loc", ())), first.get("msg"))
        return UsageError.exit_code
    except ValueError as exc:
        logger.error("%s", exc)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Error metrics, the rolling-origin harness and cross-method comparison tables."""

import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from baselines import fit_ar, fit_var, forecast_ar, forecast_var, select_order, select_var_order
from config import BASELINE_DISCLAIMER, RunConfig
from errors import DimensionMismatch, InsufficientData, LengthMismatch, ProtocolMismatch, SingularDesign
from estimation import resolve_policy
from models import (
    BacktestProtocol,
    BacktestReport,
    BacktestRun,
    ErrorPair,
    MultiSeries,
    UniformSeries,
)
from rng import SeededRng, derive_substream
from series import window
from simulation import forecast_mpm_multistep
from spm import estimate_gbm, forecast_spm_multistep

logger = logging.getLogger(__name__)

METHODS = ("spm", "mpm", "ari", "var")
STREAM_SPM = 1
STREAM_MPM = 2

AVERAGE_ROW = "[feature_average]"
AGGREGATE_ROW = "[aggregate_norm]"

# origin -> ({label: k x n forecasts}, optional (lower, upper) bounds)
OriginForecast = Tuple[Dict[str, np.ndarray], Optional[Tuple[np.ndarray, np.ndarray]]]


# ========================================================================
# Metrics
# ========================================================================

def _pair(abs_errors: np.ndarray) -> ErrorPair:
    mae = float(np.mean(abs_errors))
    rmse = float(np.sqrt(np.mean(abs_errors ** 2)))
    # rounding can leave sqrt(mean(e^2)) a hair under mean(|e|) when all errors are equal
    return ErrorPair(mae=mae, rmse=max(rmse, mae), count=len(abs_errors))


def mae_rmse(actual, predicted) -> Tuple[List[ErrorPair], ErrorPair]:
    """Per-feature scalar MAE/RMSE and the vector-norm aggregate over N paired rows."""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.ndim == 1:
        actual = actual[:, None]
    if predicted.ndim == 1:
        predicted = predicted[:, None]
    if len(actual) != len(predicted):
        raise LengthMismatch(f"{len(actual)} actual rows vs {len(predicted)} predicted rows")
    if len(actual) == 0:
        raise LengthMismatch("at least one forecast is needed to score")
    if actual.shape[1:] != predicted.shape[1:]:
        raise DimensionMismatch(f"actual dimension {actual.shape[1:]} vs predicted {predicted.shape[1:]}")

    errors = predicted - actual
    per_feature = [_pair(np.abs(errors[:, j])) for j in range(errors.shape[1])]
    aggregate = _pair(np.linalg.norm(errors, axis=1))
    return per_feature, aggregate


def feature_average(pairs: Sequence[ErrorPair]) -> ErrorPair:
    return ErrorPair(
        mae=float(np.mean([p.mae for p in pairs])),
        rmse=float(np.mean([p.rmse for p in pairs])),
        count=pairs[0].count,
    )


# ========================================================================
# Protocol
# ========================================================================

def series_digest(series: MultiSeries) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(series.rows).tobytes())
    digest.update(repr(float(series.dt)).encode())
    digest.update("\x1f".join(series.feature_names).encode())
    return digest.hexdigest()


def shared_horizon(config: RunConfig, methods: Sequence[str]) -> int:
    """One horizon for every compared method: the largest of their defaults unless set explicitly."""
    return max(config.horizon_for(method) for method in methods)


def warmup_for(method: str, config: RunConfig, series: MultiSeries) -> int:
    if method == "spm":
        return config.spm.window
    if method == "mpm":
        lookback = config.window.lookback if config.window.lookback is not None else config.window.min
        return config.window.max + lookback
    return int(math.ceil(config.baseline.train_fraction * len(series)))


def origin_indices(n_rows: int, warmup: int, horizon: int, stride: int) -> List[int]:
    """Origins ``t`` with rows ``[0, t)`` observed and rows ``t .. t+horizon-1`` to score."""
    origins = list(range(warmup, n_rows - horizon + 1, stride))
    if not origins:
        raise InsufficientData(
            f"{n_rows} rows leave no origin after a warmup of {warmup} with horizon {horizon}"
        )
    dropped = len(range(warmup, n_rows, stride)) - len(origins)
    if dropped:
        logger.info("Dropped %d trailing origins whose horizon runs past the series end", dropped)
    return origins


# ========================================================================
# Per-method forecasters
# ========================================================================

def _spm_forecaster(series: MultiSeries, config: RunConfig, horizon: int):
    columns = [series.column(j) for j in range(series.n_features)]
    stream = SeededRng(config.seed, STREAM_SPM)
    settings = config.spm
    use_mean = settings.point == "mean"

    def predict(t: int) -> OriginForecast:
        paths = np.empty((horizon, series.n_features))
        lower = np.empty_like(paths)
        upper = np.empty_like(paths)
        for j, col in enumerate(columns):
            view = window(col, t, settings.window)
            params = estimate_gbm(view, series.dt)
            recent = UniformSeries(values=view.data, dt=series.dt, name=col.name)
            steps = forecast_spm_multistep(
                recent,
                params,
                horizon,
                series.dt,
                derive_substream(stream, t, j),
                bounds=settings.bounds,
                confidence=settings.confidence,
            )
            paths[:, j] = [s.mean if use_mean else s.sample for s in steps]
            lower[:, j] = [s.lower for s in steps]
            upper[:, j] = [s.upper for s in steps]
        return {"SPM": paths}, (lower, upper)

    notes = [f"spm.point={settings.point}", f"spm.bounds={settings.bounds}"]
    return ["SPM"], predict, notes


def _mpm_forecaster(series: MultiSeries, config: RunConfig, horizon: int, inner_threads: int):
    settings = config.window
    policy = resolve_policy(
        series,
        series.dt,
        w_base=settings.base,
        w_min=settings.min,
        w_max=settings.max,
        threshold=settings.threshold,
        lookback=settings.lookback,
    )
    stream = SeededRng(config.seed, STREAM_MPM)
    mpm = config.mpm

    def predict(t: int) -> OriginForecast:
        forecast = forecast_mpm_multistep(
            series.head(t),
            policy,
            horizon,
            mpm.particles,
            series.dt,
            derive_substream(stream, t, 0),
            sigma_mode=mpm.sigma_mode,
            freeze_params=mpm.freeze_params,
            threads=inner_threads,
        )
        return {"MPM-standard": np.asarray(forecast.standard), "MPM-corrected": np.asarray(forecast.corrected)}, None

    notes = [
        f"window threshold={policy.threshold:.17g} lookback={policy.lookback_L}",
        f"mpm.sigma_mode={mpm.sigma_mode}",
        f"mpm.freeze_params={str(mpm.freeze_params).lower()}",
    ]
    return ["MPM-standard", "MPM-corrected"], predict, notes


def training_rows(config: RunConfig, series: MultiSeries, first_origin: Optional[int] = None) -> int:
    """Baseline training share, clipped so it never reaches past the first scored origin."""
    train_end = int(math.ceil(config.baseline.train_fraction * len(series)))
    if first_origin is not None and first_origin < train_end:
        logger.warning(
            "Baselines train on rows [0, %d) instead of [0, %d): the first origin comes earlier",
            first_origin, train_end,
        )
        train_end = first_origin
    return train_end


def _check_origin(t: int, train_end: int) -> None:
    if t < train_end:
        raise InsufficientData(f"origin {t} precedes the end of the baseline training rows ({train_end})")


def _ari_forecaster(series: MultiSeries, config: RunConfig, horizon: int, first_origin: Optional[int]):
    settings = config.baseline
    train_end = training_rows(config, series, first_origin)
    models = []
    for j in range(series.n_features):
        train = UniformSeries(values=series.rows[:train_end, j], dt=series.dt, name=series.feature_names[j])
        order = select_order(train, settings.p_max, settings.d_max, settings.criterion)
        models.append(fit_ar(train, order))

    def predict(t: int) -> OriginForecast:
        _check_origin(t, train_end)
        paths = np.empty((horizon, series.n_features))
        for j, model in enumerate(models):
            tail = model.order.p + model.order.d + 1
            history = UniformSeries(values=series.rows[max(0, t - tail):t, j], dt=series.dt)
            paths[:, j] = forecast_ar(model, history, horizon)
        return {"ARI": paths}, None

    orders = ", ".join(
        f"{name}=(p={m.order.p}, d={m.order.d})" for name, m in zip(series.feature_names, models)
    )
    notes = [BASELINE_DISCLAIMER, f"orders: {orders}", f"trained on rows [0, {train_end})"]
    return ["ARI"], predict, notes


def _var_forecaster(series: MultiSeries, config: RunConfig, horizon: int, first_origin: Optional[int]):
    settings = config.baseline
    train_end = training_rows(config, series, first_origin)
    train = series.head(train_end)
    p = select_var_order(train, settings.var_p_max, settings.var_d, settings.criterion)
    model = fit_var(train, p, settings.var_d)
    tail = p + settings.var_d + 1

    def predict(t: int) -> OriginForecast:
        _check_origin(t, train_end)
        return {"VAR": forecast_var(model, series.rows[max(0, t - tail):t], horizon)}, None

    notes = [BASELINE_DISCLAIMER, f"order: VAR(p={p}, d={settings.var_d})", f"trained on rows [0, {train_end})"]
    return ["VAR"], predict, notes


def prepare_forecaster(
    method: str,
    series: MultiSeries,
    config: RunConfig,
    horizon: int,
    inner_threads: int = 1,
    first_origin: Optional[int] = None,
) -> Tuple[List[str], Callable[[int], OriginForecast], List[str]]:
    """Fit whatever the method fits once and return ``(labels, predict(origin), notes)``.

    Baselines train on rows before ``first_origin`` at most; ``predict`` refuses earlier origins.
    """
    if method == "spm":
        return _spm_forecaster(series, config, horizon)
    if method == "mpm":
        return _mpm_forecaster(series, config, horizon, inner_threads)
    if method == "ari":
        return _ari_forecaster(series, config, horizon, first_origin)
    if method == "var":
        return _var_forecaster(series, config, horizon, first_origin)
    raise ValueError(f"unknown method {method!r}")


# ========================================================================
# Harness
# ========================================================================

def _forecast_frame(
    origins: Sequence[int],
    actual: np.ndarray,
    predicted: np.ndarray,
    feature_names: Sequence[str],
    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> pd.DataFrame:
    n_origins, horizon, n = actual.shape
    frame = pd.DataFrame({
        "origin": np.repeat(np.asarray(origins), horizon * n),
        "step": np.tile(np.repeat(np.arange(1, horizon + 1), n), n_origins),
        "feature": np.tile(np.asarray(feature_names, dtype=object), n_origins * horizon),
        "actual": actual.reshape(-1),
        "predicted": predicted.reshape(-1),
    })
    if bounds is not None:
        frame["lower"] = bounds[0].reshape(-1)
        frame["upper"] = bounds[1].reshape(-1)
    return frame


def run_backtest(
    series: MultiSeries,
    config: RunConfig,
    method: str,
    horizon: Optional[int] = None,
    warmup: Optional[int] = None,
) -> BacktestRun:
    """Rolling-origin evaluation of one method; MPM yields a standard and a corrected report."""
    horizon = horizon or config.horizon_for(method)
    warmup = warmup if warmup is not None else warmup_for(method, config, series)
    stride = config.backtest.stride
    origins = origin_indices(len(series), warmup, horizon, stride)

    started = time.perf_counter()
    outer = min(config.threads, len(origins))
    labels, predict, notes = prepare_forecaster(
        method, series, config, horizon,
        inner_threads=1 if outer > 1 else config.threads,
        first_origin=origins[0],
    )
    if outer > 1:
        with ThreadPoolExecutor(max_workers=outer) as pool:
            results = list(pool.map(predict, origins))
    else:
        results = [predict(t) for t in origins]

    actual = np.stack([series.rows[t:t + horizon] for t in origins])
    protocol = BacktestProtocol(
        series_digest=series_digest(series),
        n_rows=len(series),
        dt=series.dt,
        horizon=horizon,
        stride=stride,
        first_origin=origins[0],
        last_origin=origins[-1],
        n_origins=len(origins),
    )
    echo = config.echo()
    names = list(series.feature_names)

    reports: List[BacktestReport] = []
    frames: Dict[str, pd.DataFrame] = {}
    for label in labels:
        predicted = np.stack([paths[label] for paths, _ in results])
        per_feature: Dict[str, List[ErrorPair]] = {name: [] for name in names}
        averages: List[ErrorPair] = []
        aggregates: List[ErrorPair] = []
        for step in range(horizon):
            pairs, aggregate = mae_rmse(actual[:, step], predicted[:, step])
            for name, pair in zip(names, pairs):
                per_feature[name].append(pair)
            averages.append(feature_average(pairs))
            aggregates.append(aggregate)

        bounds = None
        coverage = None
        if results[0][1] is not None:
            lower = np.stack([b[0] for _, b in results])
            upper = np.stack([b[1] for _, b in results])
            bounds = (lower, upper)
            inside = (actual >= lower) & (actual <= upper)
            coverage = {name: [float(v) for v in inside[:, :, j].mean(axis=0)] for j, name in enumerate(names)}

        reports.append(BacktestReport(
            method=label,
            feature_names=names,
            protocol=protocol,
            per_feature=per_feature,
            feature_average=averages,
            aggregate_norm=aggregates,
            bound_coverage=coverage,
            config_echo=echo,
            seed=config.seed,
            notes=notes,
        ))
        frames[label] = _forecast_frame(origins, actual, predicted, names, bounds)

    logger.info(
        "Backtest %s: %d origins [%d..%d], horizon %d in %.2fs",
        method, len(origins), origins[0], origins[-1], horizon, time.perf_counter() - started,
    )
    return BacktestRun(reports=reports, forecasts=frames)


def run_backtests(series: MultiSeries, config: RunConfig, methods: Sequence[str]) -> List[BacktestRun]:
    """Run several methods under one protocol (shared horizon and first origin)."""
    horizon = shared_horizon(config, methods)
    warmup = max(warmup_for(method, config, series) for method in methods)
    runs: List[BacktestRun] = []
    for method in methods:
        try:
            runs.append(run_backtest(series, config, method, horizon=horizon, warmup=warmup))
        except SingularDesign as exc:
            # a singular fit drops only its own method
            if len(methods) == 1:
                raise
            logger.error("Skipping %s: %s", method, exc.detail)
    if not runs:
        raise SingularDesign(f"no method could be fitted: {', '.join(methods)}")
    return runs


# ========================================================================
# Comparison
# ========================================================================

def _rows_of(report: BacktestReport) -> Dict[str, List[ErrorPair]]:
    rows = {name: report.per_feature[name] for name in report.feature_names}
    rows[AVERAGE_ROW] = report.feature_average
    rows[AGGREGATE_ROW] = report.aggregate_norm
    return rows


def compare_methods(reports: Sequence[BacktestReport]) -> pd.DataFrame:
    """Wide table: one row per feature, ``<method>_<metric>_h<k>`` columns and ``best_<metric>_h<k>``.

    Best cells name the winning method; ties list every tied method joined by ``=``.
    """
    if not reports:
        raise ProtocolMismatch("nothing to compare")
    first = reports[0]
    labels = [r.method for r in reports]
    if len(set(labels)) != len(labels):
        raise ProtocolMismatch(f"duplicate method labels: {labels}")
    for report in reports[1:]:
        if report.protocol != first.protocol:
            raise ProtocolMismatch(
                f"{report.method} was scored under a different protocol than {first.method}"
            )
        if report.feature_names != first.feature_names:
            raise ProtocolMismatch(f"{report.method} covers different features than {first.method}")

    horizon = first.protocol.horizon
    row_names = list(_rows_of(first))
    tables = {r.method: _rows_of(r) for r in reports}
    data: Dict[str, List] = {}
    for label in labels:
        for step in range(horizon):
            for metric in ("mae", "rmse"):
                data[f"{label}_{metric}_h{step + 1}"] = [
                    getattr(tables[label][row][step], metric) for row in row_names
                ]
    for step in range(horizon):
        for metric in ("mae", "rmse"):
            best = []
            for i in range(len(row_names)):
                scores = np.array([data[f"{label}_{metric}_h{step + 1}"][i] for label in labels])
                winners = [label for label, s in zip(labels, scores) if s == scores.min()]
                best.append("=".join(winners))
            data[f"best_{metric}_h{step + 1}"] = best

    table = pd.DataFrame(data, index=pd.Index(row_names, name="feature"))
    return table


def horizon_curves(reports: Sequence[BacktestReport]) -> pd.DataFrame:
    """Long format ``method, feature, horizon, mae, rmse`` including the averaged and aggregate rows."""
    records = []
    for report in reports:
        for row, pairs in _rows_of(report).items():
            for step, pair in enumerate(pairs, start=1):
                records.append({
                    "method": report.method,
                    "feature": row,
                    "horizon": step,
                    "mae": pair.mae,
                    "rmse": pair.rmse,
                })
    return pd.DataFrame.from_records(records, columns=["method", "feature", "horizon", "mae", "rmse"])

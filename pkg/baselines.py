"""Linear benchmarks: ARI(p, d) and VAR(p) on differenced data, fit by ordinary least squares.

Moving-average terms are not modelled; every report carries that disclaimer.
"""

import logging
from typing import Literal, Optional, Tuple, Union

import numpy as np

from errors import InsufficientData, SingularDesign
from models import ArModel, ArOrder, MultiSeries, UniformSeries, VarModel

logger = logging.getLogger(__name__)

Criterion = Literal["aic", "bic"]

_TINY = np.finfo(np.float64).tiny


def difference(values: np.ndarray, d: int) -> np.ndarray:
    """d-th order differences along the first axis."""
    return np.diff(np.asarray(values, dtype=np.float64), n=d, axis=0)


def integrate(future_diffs: np.ndarray, history: np.ndarray, d: int) -> np.ndarray:
    """Undo ``d`` differences for values that continue ``history``.

    Anchors are the last value of each lower-order difference of ``history``.
    """
    out = np.asarray(future_diffs, dtype=np.float64)
    history = np.asarray(history, dtype=np.float64)
    for k in reversed(range(d)):
        anchor = np.diff(history, n=k, axis=0)[-1]
        out = anchor + np.cumsum(out, axis=0)
    return out


def _lag_design(z: np.ndarray, p: int, first_row: int) -> Tuple[np.ndarray, np.ndarray]:
    """Design ``[1, z[t-1], ..., z[t-p]]`` and targets ``z[t]`` for ``t >= first_row``."""
    if z.ndim == 1:
        z = z[:, None]
    rows = len(z) - first_row
    design = np.empty((rows, 1 + p * z.shape[1]))
    design[:, 0] = 1.0
    width = z.shape[1]
    for lag in range(1, p + 1):
        design[:, 1 + (lag - 1) * width: 1 + lag * width] = z[first_row - lag: len(z) - lag]
    return design, z[first_row:]


def _least_squares(design: np.ndarray, targets: np.ndarray, label: str) -> np.ndarray:
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesign(f"{label}: lag matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return coef


def _first_row(p: int, d: int, first_target: Optional[int]) -> int:
    # first_target is an index into the undifferenced series
    return p if first_target is None else max(p, first_target - d)


def fit_ar(series: UniformSeries, order: ArOrder, first_target: Optional[int] = None) -> ArModel:
    """OLS fit of an AR(p) with intercept on the d-differenced series.

    ``first_target`` drops leading targets so that models of different order
    are scored on the same observations.
    """
    p, d = order.p, order.d
    z = difference(series.values, d)
    if len(z) < p + 2:
        raise InsufficientData(
            f"AR({p}) with d={d} needs {p + 2 + d} observations, {series.name!r} has {len(series)}"
        )
    start = _first_row(p, d, first_target)
    if len(z) - start < 2:
        raise InsufficientData(f"AR({p}) with d={d}: fewer than 2 targets from index {start}")

    design, targets = _lag_design(z, p, start)
    targets = targets[:, 0]
    coef = _least_squares(design, targets, f"AR({p}) d={d}")
    residuals = targets - design @ coef
    n_eff = len(targets)
    variance = float(residuals @ residuals / n_eff)
    log_var = np.log(max(variance, _TINY))
    return ArModel(
        order=order,
        coefficients=tuple(float(c) for c in coef[1:]),
        intercept=float(coef[0]),
        residual_variance=variance,
        aic=float(n_eff * log_var + 2 * (p + 1)),
        bic=float(n_eff * log_var + (p + 1) * np.log(n_eff)),
        n_eff=n_eff,
    )


def select_order(series: UniformSeries, p_max: int, d_max: int, criterion: Criterion = "aic") -> ArOrder:
    """Grid search over ``d <= d_max``, ``p <= p_max`` on a common sample; ties go to smaller d, then p."""
    if len(series) - d_max < p_max + 2:
        raise InsufficientData(
            f"order search up to p={p_max}, d={d_max} needs {p_max + d_max + 2} observations, "
            f"{series.name!r} has {len(series)}"
        )
    best: Optional[Tuple[float, ArOrder]] = None
    for d in range(d_max + 1):
        for p in range(p_max + 1):
            order = ArOrder(p=p, d=d)
            try:
                model = fit_ar(series, order, first_target=p_max + d_max)
            except SingularDesign:
                logger.debug("Skipping %s on %s: singular design", order, series.name)
                continue
            score = model.aic if criterion == "aic" else model.bic
            if best is None or score < best[0]:
                best = (score, order)
    if best is None:
        raise SingularDesign(f"no (p, d) candidate is estimable on {series.name!r}")
    logger.info("Selected ARI(p=%d, d=%d) for %s by %s", best[1].p, best[1].d, series.name, criterion.upper())
    return best[1]


def forecast_ar(model: ArModel, history: UniformSeries, horizon: int) -> np.ndarray:
    """Recursive point forecasts on the differenced scale, reintegrated to levels."""
    p, d = model.order.p, model.order.d
    values = np.asarray(history.values, dtype=np.float64)
    if len(values) < max(d, 1) or len(values) - d < p:
        raise InsufficientData(f"AR({p}) with d={d} needs {p + d} history values, got {len(values)}")
    phi = np.asarray(model.coefficients)
    lags = list(difference(values, d)[len(values) - d - p:]) if p else []

    diffs = np.empty(horizon)
    for step in range(horizon):
        nxt = model.intercept + (float(phi @ np.asarray(lags[::-1])) if p else 0.0)
        diffs[step] = nxt
        if p:
            lags = lags[1:] + [nxt]
    return integrate(diffs, values, d)


# ========================================================================
# VAR
# ========================================================================

def fit_var(series: Union[MultiSeries, np.ndarray], p: int, d: int = 1, first_target: Optional[int] = None) -> VarModel:
    """Per-equation least squares on a shared lag matrix of the d-differenced rows."""
    rows = series.rows if isinstance(series, MultiSeries) else np.asarray(series, dtype=np.float64)
    z = difference(rows, d)
    if len(z) < p + 2:
        raise InsufficientData(f"VAR({p}) with d={d} needs {p + 2 + d} rows, got {len(rows)}")
    start = _first_row(p, d, first_target)
    n = z.shape[1]

    design, targets = _lag_design(z, p, start)
    coef = _least_squares(design, targets, f"VAR({p}) d={d}")
    residuals = targets - design @ coef
    n_eff = targets.shape[0]
    covariance = residuals.T @ residuals / n_eff
    covariance = 0.5 * (covariance + covariance.T)

    sign, logdet = np.linalg.slogdet(covariance)
    logdet = logdet if sign > 0 else n * np.log(_TINY)
    n_params = n * (n * p + 1)
    matrices = np.stack([coef[1 + i * n: 1 + (i + 1) * n].T for i in range(p)]) if p else np.zeros((0, n, n))
    return VarModel(
        p=p,
        d=d,
        coefficient_matrices=matrices,
        intercept=coef[0],
        residual_covariance=covariance,
        aic=float(n_eff * logdet + 2 * n_params),
        bic=float(n_eff * logdet + n_params * np.log(n_eff)),
        n_eff=n_eff,
    )


def select_var_order(series: MultiSeries, p_max: int, d: int = 1, criterion: Criterion = "aic") -> int:
    """Lag order in ``1..p_max`` minimising the criterion on a common sample."""
    best: Optional[Tuple[float, int]] = None
    for p in range(1, p_max + 1):
        try:
            model = fit_var(series, p, d, first_target=p_max + d)
        except SingularDesign:
            logger.debug("Skipping VAR(p=%d, d=%d): singular design", p, d)
            continue
        score = model.aic if criterion == "aic" else model.bic
        if best is None or score < best[0]:
            best = (score, p)
    if best is None:
        raise SingularDesign(f"no VAR lag order in 1..{p_max} is estimable with d={d}")
    logger.info("Selected VAR(p=%d, d=%d) by %s", best[1], d, criterion.upper())
    return best[1]


def forecast_var(model: VarModel, history: Union[MultiSeries, np.ndarray], horizon: int) -> np.ndarray:
    """``horizon`` x n recursive forecasts, reintegrated to levels."""
    rows = history.rows if isinstance(history, MultiSeries) else np.asarray(history, dtype=np.float64)
    p, d = model.p, model.d
    if len(rows) < max(d, 1) or len(rows) - d < p:
        raise InsufficientData(f"VAR({p}) with d={d} needs {p + d} history rows, got {len(rows)}")
    z = difference(rows, d)
    lags = [z[len(z) - i] for i in range(1, p + 1)]  # most recent first

    diffs = np.empty((horizon, model.dimension))
    for step in range(horizon):
        nxt = np.array(model.intercept, dtype=np.float64)
        for i, matrix in enumerate(model.coefficient_matrices):
            nxt = nxt + matrix @ lags[i]
        diffs[step] = nxt
        if p:
            lags = [nxt] + lags[:-1]
    return integrate(diffs, rows, d)

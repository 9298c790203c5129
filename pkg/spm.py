"""Single Particle Method: sliding-window GBM estimation and log-normal forecasting."""

import logging
from typing import List, Literal

import numpy as np
from scipy.stats import norm

from errors import NonPositiveState, WindowTooSmall
from models import GbmParams, SpmForecast, UniformSeries, WindowView
from rng import SeededRng

logger = logging.getLogger(__name__)

BoundsMode = Literal["variance", "quantile"]


def relative_drifts(values: np.ndarray, dt: float) -> np.ndarray:
    """Per-interval relative growth rates; a zero level contributes a rate of 0."""
    current, following = values[:-1], values[1:]
    rates = np.zeros_like(current)
    nonzero = current != 0
    rates[nonzero] = (following[nonzero] - current[nonzero]) / (current[nonzero] * dt)
    return rates


def estimate_gbm(window: WindowView, dt: float) -> GbmParams:
    """Drift ``a`` is the mean relative rate over the window, ``b`` the dt-scaled spread of the rates."""
    values = np.asarray(window.data, dtype=np.float64)
    if values.ndim != 1:
        raise WindowTooSmall("GBM estimation needs a scalar window")
    n_increments = len(values) - 1
    if n_increments < 2:
        raise WindowTooSmall(f"GBM estimation needs at least 3 samples, got {len(values)}")

    rates = relative_drifts(values, dt)
    a = float(np.mean(rates))
    b = float(np.sqrt(np.sum((rates - a) ** 2) * dt / (n_increments - 1)))
    return GbmParams(a=a, b=b, window_size=n_increments)


def quantile_bounds(s_now: float, params: GbmParams, dt: float, confidence: float):
    """Exact equal-tailed log-normal interval for the next value."""
    z = norm.ppf(0.5 + confidence / 2.0)
    centre = (params.a - 0.5 * params.b ** 2) * dt
    spread = params.b * np.sqrt(dt) * z
    return s_now * np.exp(centre + spread), s_now * np.exp(centre - spread)


def forecast_spm(
    s_now: float,
    params: GbmParams,
    dt: float,
    rng: SeededRng,
    bounds: BoundsMode = "variance",
    confidence: float = 0.9,
) -> SpmForecast:
    """One exact GBM transition from ``s_now`` plus the log-normal summary statistics."""
    if not s_now > 0:
        raise NonPositiveState(f"GBM forecasts need a positive state, got {s_now}")
    a, b = params.a, params.b
    z = rng.standard_normal()

    sample = s_now * np.exp((a - 0.5 * b ** 2) * dt + b * np.sqrt(dt) * z)
    mean = s_now * np.exp(a * dt)
    median = s_now * np.exp((a - 0.5 * b ** 2) * dt)
    mode = s_now * np.exp((a - 1.5 * b ** 2) * dt)

    if bounds == "quantile":
        upper, lower = quantile_bounds(s_now, params, dt, confidence)
    else:
        # not a quantile: the variance term is added to and subtracted from the mean
        var_term = s_now * (np.exp(b ** 2 * dt) - 1.0) * np.exp(2.0 * a * dt)
        upper, lower = mean + var_term, mean - var_term

    return SpmForecast(
        sample=float(sample),
        mean=float(mean),
        median=float(median),
        mode=float(mode),
        upper=float(upper),
        lower=float(lower),
        from_value=float(s_now),
    )


def forecast_spm_multistep(
    series: UniformSeries,
    params: GbmParams,
    horizon: int,
    dt: float,
    rng: SeededRng,
    bounds: BoundsMode = "variance",
    confidence: float = 0.9,
) -> List[SpmForecast]:
    """Recursive forecasts: each step starts from the previous step's sample, parameters stay frozen."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    s_now = float(series.values[-1])
    if not s_now > 0:
        raise NonPositiveState(f"last observation of {series.name!r} is {s_now}; GBM needs a positive state")

    path: List[SpmForecast] = []
    for _ in range(horizon):
        step = forecast_spm(s_now, params, dt, rng, bounds=bounds, confidence=confidence)
        path.append(step)
        s_now = step.sample
    return path

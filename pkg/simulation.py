"""Multi Particle Method simulation: Euler-Maruyama ensembles and residual-kernel reweighting."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from errors import ConfigError, DimensionMismatch
from estimation import estimate_diffusion, estimate_drift, select_window
from models import (
    Ensemble,
    MpmForecast,
    MpmStep,
    MultiSeries,
    SdeParams,
    WeightedEnsemble,
    WindowDecision,
    WindowPolicy,
)
from rng import SeededRng, derive_substream, particle_normals
from series import window

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_MODE = "diffusion_trace"


def _chunks(total: int, parts: int) -> List[Tuple[int, int]]:
    parts = max(1, min(parts, total))
    bounds = np.linspace(0, total, parts + 1).astype(int)
    return [(int(lo), int(hi - lo)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _column_mean(matrix: np.ndarray) -> np.ndarray:
    # pairwise over particle index, independent of worker count
    return np.add.reduce(np.ascontiguousarray(matrix.T), axis=1) / matrix.shape[0]


def evolve_ensemble(
    base_state: np.ndarray,
    params: SdeParams,
    dt: float,
    m: int,
    rng: SeededRng,
    threads: int = 1,
) -> Ensemble:
    """``m`` Euler-Maruyama particles ``X + A dt + B dW``.

    Particle ``p`` consumes its own counter block of ``rng``; workers only
    generate normals, the linear map is applied once to the gathered matrix.
    """
    base_state = np.asarray(base_state, dtype=np.float64)
    n = params.dimension
    if base_state.shape != (n,):
        raise DimensionMismatch(f"state of shape {base_state.shape} for a {n}-dimensional model")
    if m < 1:
        raise ConfigError(f"particle count must be >= 1, got {m}")
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")

    spans = _chunks(m, threads)
    if len(spans) == 1:
        normals = particle_normals(rng, n, 0, m)
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            blocks = list(pool.map(lambda span: particle_normals(rng, n, *span), spans))
        normals = np.vstack(blocks)

    increments = np.sqrt(dt) * normals
    particles = base_state + params.A * dt + increments @ params.B.T
    return Ensemble(particles=particles, increments=increments, base_state=base_state, params=params, dt=dt)


def standard_estimator(ensemble: Ensemble) -> np.ndarray:
    return _column_mean(ensemble.particles)


def parse_sigma_mode(sigma_mode: str) -> Tuple[str, Optional[float]]:
    mode = sigma_mode.strip()
    if mode in ("diffusion_trace", "mean_distance"):
        return mode, None
    if mode.startswith("fixed:"):
        try:
            value = float(mode.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad fixed sigma in {sigma_mode!r}")
        if not value > 0:
            raise ConfigError(f"fixed sigma must be positive, got {value}")
        return "fixed", value
    raise ConfigError(f"unknown sigma mode {sigma_mode!r}; expected diffusion_trace, mean_distance or fixed:<value>")


def kernel_variance(ensemble: Ensemble, distances: np.ndarray, sigma_mode: str) -> float:
    """sigma^2 of the exponential residual kernel."""
    kind, value = parse_sigma_mode(sigma_mode)
    if kind == "fixed":
        return value ** 2
    if kind == "mean_distance":
        return float(np.mean(distances))
    B = ensemble.params.B
    return float(np.trace(B @ B.T) * ensemble.dt / ensemble.params.dimension)


def weight_and_correct(ensemble: Ensemble, sigma_mode: str = DEFAULT_SIGMA_MODE) -> WeightedEnsemble:
    """Weights ``exp(-d_p / 2 sigma^2)`` on squared residuals to the drift point, normalised in log space."""
    particles = ensemble.particles
    residuals = particles - ensemble.drift_point
    distances = np.einsum("ij,ij->i", residuals, residuals)
    variance = kernel_variance(ensemble, distances, sigma_mode)

    m = particles.shape[0]
    if variance > 0.0:
        log_weights = -distances / (2.0 * variance)
        weights = np.exp(log_weights - logsumexp(log_weights))
        weights = weights / np.sum(weights)
    else:
        weights = np.full(m, 1.0 / m)

    standard = standard_estimator(ensemble)
    corrected = weights @ particles
    # keep rounding from stepping outside the particle hull
    corrected = np.clip(corrected, particles.min(axis=0), particles.max(axis=0))

    return WeightedEnsemble(
        residuals=residuals,
        distances=distances,
        weights=weights,
        sigma=float(np.sqrt(variance)),
        standard=standard,
        corrected=corrected,
    )


def forecast_mpm_step(
    series: MultiSeries,
    end_index: int,
    policy: WindowPolicy,
    dt: float,
    m: int,
    rng: SeededRng,
    sigma_mode: str = DEFAULT_SIGMA_MODE,
    threads: int = 1,
    params: Optional[SdeParams] = None,
    decision: Optional[WindowDecision] = None,
) -> MpmStep:
    """Adaptive single-step forecast from rows ``[0, end_index)``.

    ``params``/``decision`` short-circuit estimation when the caller freezes them.
    """
    if decision is None:
        decision = select_window(series, end_index, policy, dt)
    if params is None:
        view = window(series, end_index, decision.chosen_width)
        params = estimate_diffusion(estimate_drift(view, dt), dt)

    ensemble = evolve_ensemble(series.rows[end_index - 1], params, dt, m, rng, threads=threads)
    weighted = weight_and_correct(ensemble, sigma_mode)
    return MpmStep(decision=decision, params=params, ensemble=ensemble, weighted=weighted)


def forecast_mpm_multistep(
    series: MultiSeries,
    policy: WindowPolicy,
    horizon: int,
    m: int,
    dt: float,
    rng: SeededRng,
    sigma_mode: str = DEFAULT_SIGMA_MODE,
    freeze_params: bool = False,
    threads: int = 1,
) -> MpmForecast:
    """``horizon`` recursive steps; each appends its corrected estimate as a pseudo-observation.

    Step ``j`` draws from ``derive_substream(rng, j, 0)``.
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")

    working = np.array(series.rows, dtype=np.float64)
    standard = np.empty((horizon, series.n_features))
    corrected = np.empty((horizon, series.n_features))
    decisions: List[WindowDecision] = []
    frozen: Optional[MpmStep] = None

    for j in range(horizon):
        current = MultiSeries(rows=working, dt=series.dt, feature_names=series.feature_names)
        step = forecast_mpm_step(
            current,
            len(current),
            policy,
            dt,
            m,
            derive_substream(rng, j, 0),
            sigma_mode=sigma_mode,
            threads=threads,
            params=frozen.params if frozen is not None else None,
            decision=frozen.decision if frozen is not None else None,
        )
        if freeze_params and frozen is None:
            frozen = step

        standard[j] = step.weighted.standard
        corrected[j] = step.weighted.corrected
        decisions.append(step.decision)
        working = np.vstack([working, step.weighted.corrected])

    return MpmForecast(standard=standard, corrected=corrected, decisions=decisions)

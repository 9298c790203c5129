"""Multi Particle Method parameter learning.

Drift from a fourth-order central stencil, diffusion as the symmetric square
root of the residual covariance, and the adaptive choice of window width.
"""

import logging
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np

from config import CLAMP_REPORT_RATIO, EIGEN_TOLERANCE, MIN_MPM_WINDOW
from errors import ConfigError, DimensionMismatch, InsufficientData, NumericFailure, OutOfBounds, WindowTooSmall
from models import DriftSamples, MultiSeries, SdeParams, WindowDecision, WindowPolicy, WindowView

logger = logging.getLogger(__name__)

MAX_JACOBI_SWEEPS = 100
THRESHOLD_FLOOR = np.finfo(np.float64).eps


# ========================================================================
# Drift
# ========================================================================

def estimate_drift(window: WindowView, dt: float) -> DriftSamples:
    """Per-row drift samples over ``window`` and their mean.

    Rows 2..W-3 use the fourth-order stencil
    ``[2/3 (X[i+1] - X[i-1]) + 1/12 (X[i-2] - X[i+2])] / dt``; rows 0, 1 and
    W-2 use a forward difference and the last row a backward difference.
    """
    data = np.asarray(window.data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    width = data.shape[0]
    if width < MIN_MPM_WINDOW:
        raise WindowTooSmall(f"drift stencil needs at least {MIN_MPM_WINDOW} rows, got {width}")

    samples = np.empty_like(data)
    samples[2:-2] = ((2.0 / 3.0) * (data[3:-1] - data[1:-3]) + (1.0 / 12.0) * (data[:-4] - data[4:])) / dt
    for i in (0, 1, width - 2):
        samples[i] = (data[i + 1] - data[i]) / dt
    samples[-1] = (data[-1] - data[-2]) / dt

    # contiguous rows per feature so numpy reduces pairwise
    mean = np.add.reduce(np.ascontiguousarray(samples.T), axis=1) / width
    return DriftSamples(samples=samples, mean=mean)


# ========================================================================
# Diffusion
# ========================================================================

def _off_diagonal_norm(a: np.ndarray) -> float:
    return float(np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2)))


@lru_cache(maxsize=None)
def _round_robin(n: int) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    """Rounds of disjoint ``(p, q)`` pairs, ``p < q``; one sweep visits every pair once."""
    m = n + n % 2
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = sorted(tuple(sorted((players[i], players[m - 1 - i]))) for i in range(m // 2))
        pairs = [pair for pair in pairs if pair[1] < n]
        if pairs:
            p, q = (np.array(side, dtype=np.intp) for side in zip(*pairs))
            rounds.append((p, q))
        players = [players[0], players[-1], *players[1:-1]]
    return tuple(rounds)


def jacobi_eigh(matrix: np.ndarray, tolerance: float = EIGEN_TOLERANCE) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and column eigenvectors of a symmetric matrix.

    Cyclic Jacobi in round-robin order: each round zeroes a set of disjoint
    ``(p, q)`` entries with one orthogonal similarity, and sweeps repeat until
    the off-diagonal Frobenius norm is at most ``tolerance * ||matrix||_F``.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"eigendecomposition needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    v = np.eye(n)
    scale = float(np.linalg.norm(a))
    if scale == 0.0:
        return np.zeros(n), v
    target = tolerance * scale
    rounds = _round_robin(n)

    for _ in range(MAX_JACOBI_SWEEPS):
        if _off_diagonal_norm(a) <= target:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * np.where(active, apq, 1.0))
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.hypot(t, 1.0)
            s = t * c

            rotation = np.eye(n)
            rotation[p, p] = c
            rotation[q, q] = c
            rotation[p, q] = s
            rotation[q, p] = -s
            a = rotation.T @ a @ rotation
            a[p, q] = 0.0
            a[q, p] = 0.0
            v = v @ rotation
    else:
        if _off_diagonal_norm(a) > target:
            raise NumericFailure(f"Jacobi eigensolver did not converge in {MAX_JACOBI_SWEEPS} sweeps (n={n})")

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return values[order], v[:, order]


def symmetric_sqrt(matrix: np.ndarray) -> np.ndarray:
    """``U diag(sqrt(max(lambda, 0))) U^T`` for a symmetric PSD matrix."""
    c = np.asarray(matrix, dtype=np.float64)
    c = 0.5 * (c + c.T)
    values, vectors = jacobi_eigh(c)

    largest = float(np.max(np.abs(values))) if values.size else 0.0
    most_negative = float(values.min()) if values.size else 0.0
    if most_negative < -CLAMP_REPORT_RATIO * largest:
        logger.warning(
            "Clamping negative covariance eigenvalue %.3e (largest magnitude %.3e) to zero",
            most_negative,
            largest,
        )
    roots = np.sqrt(np.clip(values, 0.0, None))
    root = (vectors * roots) @ vectors.T
    return 0.5 * (root + root.T)


def estimate_diffusion(drift: DriftSamples, dt: float) -> SdeParams:
    """Residual covariance ``C = sum(r r^T) dt / (W - 1)`` and diffusion ``B = C^(1/2)``."""
    samples = np.asarray(drift.samples)
    width = samples.shape[0]
    residuals = samples - drift.mean
    covariance = residuals.T @ residuals * dt / (width - 1)
    covariance = 0.5 * (covariance + covariance.T)
    diffusion = symmetric_sqrt(covariance)
    return SdeParams(A=drift.mean, C=covariance, B=diffusion, window_used=width)


# ========================================================================
# Adaptive window
# ========================================================================

def _rows(series: Union[MultiSeries, np.ndarray]) -> np.ndarray:
    rows = series.rows if isinstance(series, MultiSeries) else np.asarray(series, dtype=np.float64)
    return rows[:, None] if rows.ndim == 1 else rows


def drift_magnitude(series: Union[MultiSeries, np.ndarray], index: int, lookback: int, dt: float) -> float:
    """Euclidean ``||X[index] - X[index - lookback]|| / (lookback * dt)`` in raw units."""
    rows = _rows(series)
    if lookback < 1:
        raise ConfigError(f"lookback must be >= 1, got {lookback}")
    if index - lookback < 0 or index >= rows.shape[0]:
        raise OutOfBounds(f"drift magnitude at {index} with lookback {lookback} leaves the series")
    return float(np.linalg.norm(rows[index] - rows[index - lookback]) / (lookback * dt))


def default_threshold(series: Union[MultiSeries, np.ndarray], w_max: int, lookback: int, dt: float) -> float:
    """Twice the median drift magnitude over the first ``w_max + lookback`` samples."""
    rows = _rows(series)
    span = min(w_max + lookback, rows.shape[0])
    if span <= lookback:
        raise InsufficientData(
            f"default threshold needs more than {lookback} samples, series has {rows.shape[0]}"
        )
    moves = np.linalg.norm(rows[lookback:span] - rows[: span - lookback], axis=1) / (lookback * dt)
    threshold = 2.0 * float(np.median(moves))
    if threshold <= 0.0:
        logger.warning(
            "Warmup segment is flat (median drift magnitude 0); falling back to threshold %.3g",
            THRESHOLD_FLOOR,
        )
        threshold = THRESHOLD_FLOOR
    return threshold


def resolve_policy(
    series: Union[MultiSeries, np.ndarray],
    dt: float,
    w_base: int = 200,
    w_min: int = 50,
    w_max: int = 300,
    threshold: Optional[float] = None,
    lookback: Optional[int] = None,
) -> WindowPolicy:
    """Fill in the data-relative defaults (lookback = w_min, threshold from the warmup segment)."""
    if w_min < MIN_MPM_WINDOW:
        raise ConfigError(f"window.min must be >= {MIN_MPM_WINDOW}, got {w_min}")
    lookback = w_min if lookback is None else lookback
    if threshold is None:
        threshold = default_threshold(series, w_max, lookback, dt)
        logger.info("Window threshold defaulted to %.6g (lookback %d)", threshold, lookback)
    return WindowPolicy(w_base=w_base, w_min=w_min, w_max=w_max, threshold=threshold, lookback_L=lookback)


def classify(magnitude: float, policy: WindowPolicy) -> WindowDecision:
    if magnitude > policy.threshold:
        return WindowDecision(drift_magnitude=magnitude, chosen_width=policy.w_min, regime="transient")
    if magnitude < policy.threshold / 5.0:
        return WindowDecision(drift_magnitude=magnitude, chosen_width=policy.w_max, regime="steady")
    return WindowDecision(drift_magnitude=magnitude, chosen_width=policy.w_base, regime="nominal")


def select_window(series: MultiSeries, end_index: int, policy: WindowPolicy, dt: float) -> WindowDecision:
    """Pick the window width for a forecast made with rows ``[0, end_index)`` observed."""
    if end_index < policy.warmup or end_index > len(series):
        raise OutOfBounds(
            f"window selection at {end_index} needs {policy.warmup} <= end_index <= {len(series)}"
        )
    magnitude = drift_magnitude(series, end_index - 1, policy.lookback_L, dt)
    decision = classify(magnitude, policy)
    logger.debug("end_index=%d D=%.6g -> %s (W=%d)", end_index, magnitude, decision.regime, decision.chosen_width)
    return decision

"""Synthetic ground truth: exact GBM paths and Euler-Maruyama linear SDE paths."""

import logging
import os
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from errors import ConfigError, InputNotFound
from models import GbmSpec, LinearSdeSpec, MultiSeries, RegimeOverride, UniformSeries
from rng import SeededRng

logger = logging.getLogger(__name__)

STREAM_SYNTH = 0


# ---------- Generators ----------

def simulate_gbm(spec: GbmSpec, rng: SeededRng) -> UniformSeries:
    """Exact log-normal stepping; returns ``n_steps + 1`` values starting at ``s0``."""
    z = rng.standard_normal(spec.n_steps)
    log_steps = (spec.a - 0.5 * spec.b ** 2) * spec.dt + spec.b * np.sqrt(spec.dt) * z
    values = spec.s0 * np.exp(np.concatenate(([0.0], np.cumsum(log_steps))))
    logger.info("Simulated GBM: %d steps, a=%g, b=%g, dt=%g", spec.n_steps, spec.a, spec.b, spec.dt)
    return UniformSeries(values=values, dt=spec.dt, name="value")


def _segments(spec: LinearSdeSpec) -> List[Tuple[int, int, np.ndarray, np.ndarray]]:
    """``(first_step, last_step_exclusive, A, B)`` for each regime in force."""
    starts = [(0, spec.A, spec.B)] + [(o.start_index, o.A, o.B) for o in spec.regime_schedule]
    segments = []
    for k, (start, A, B) in enumerate(starts):
        stop = starts[k + 1][0] if k + 1 < len(starts) else spec.n_steps
        start, stop = min(start, spec.n_steps), min(stop, spec.n_steps)
        if stop > start:
            segments.append((start, stop, A, B))
    return segments


def simulate_linear_sde(spec: LinearSdeSpec, rng: SeededRng) -> MultiSeries:
    """Euler-Maruyama ``X[i+1] = X[i] + A dt + B dW``; a regime starting at ``k`` governs steps from ``X[k]``."""
    n = spec.x0.shape[0]
    normals = rng.standard_normal(spec.n_steps * n).reshape(spec.n_steps, n)
    increments = np.empty((spec.n_steps, n))
    for start, stop, A, B in _segments(spec):
        dW = np.sqrt(spec.dt) * normals[start:stop]
        increments[start:stop] = A * spec.dt + dW @ B.T

    rows = np.empty((spec.n_steps + 1, n))
    rows[0] = spec.x0
    rows[1:] = spec.x0 + np.cumsum(increments, axis=0)
    names = spec.feature_names or tuple(f"x{j + 1}" for j in range(n))
    logger.info(
        "Simulated linear SDE: %d steps x %d channels, %d regime switch(es)",
        spec.n_steps, n, len(spec.regime_schedule),
    )
    return MultiSeries(rows=rows, dt=spec.dt, feature_names=names)


# ---------- Engine preset ----------

ENGINE_CHANNELS = ("LOT", "FW TEMP", "EXT TEMP A", "EXT TEMP B", "LOP", "FOP", "SW PRES", "RPM")
ENGINE_PRESET_LABEL = "engine preset (invented values, not measured data)"


def engine_preset(n_steps: int = 2000, dt: float = 10.0, switch_index: Optional[int] = None) -> LinearSdeSpec:
    """Eight engine-like channels: slow thermal, volatile exhaust, small pressures and a regime-switching RPM.

    The load step at ``switch_index`` (default 60% through) raises RPM and the
    exhaust temperatures for a tenth of the run, then the engine settles.
    """
    x0 = np.array([55.0, 80.0, 350.0, 345.0, 4.0, 8.0, 2.0, 100.0])
    drift = np.array([2e-3, 1e-3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    diffusion = np.diag([0.02, 0.015, 0.3, 0.3, 0.005, 0.008, 0.003, 0.2])
    diffusion[2, 3] = diffusion[3, 2] = 0.1  # exhaust banks move together
    diffusion[4, 5] = diffusion[5, 4] = 0.002

    start = int(0.6 * n_steps) if switch_index is None else switch_index
    settle = start + max(1, n_steps // 10)
    load_drift = np.array([5e-3, 3e-3, 0.05, 0.05, 1e-4, 1e-4, 0.0, 0.05])
    schedule = (
        RegimeOverride(start_index=start, A=load_drift, B=diffusion * 1.5),
        RegimeOverride(start_index=settle, A=drift, B=diffusion),
    ) if start < n_steps else ()
    return LinearSdeSpec(
        x0=x0,
        A=drift,
        B=diffusion,
        n_steps=n_steps,
        dt=dt,
        regime_schedule=schedule,
        feature_names=ENGINE_CHANNELS,
    )


# ---------- Spec files ----------

GBM_KEYS = {"s0", "a", "b", "n_steps", "dt"}
LINEAR_KEYS = {"preset", "x0", "A", "B", "n_steps", "dt", "names", "switch_index"}


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}")


def _matrix(text: str) -> np.ndarray:
    """Rows separated by ``;``, entries by ``,``."""
    rows = [_vector(row) for row in text.split(";") if row.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"ragged matrix {text!r}")
    return np.vstack(rows)


def _number(values: Dict[str, str], key: str, cast=float):
    try:
        return cast(values[key])
    except KeyError:
        raise ConfigError(f"spec file is missing {key!r}")
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {values[key]!r}")


def read_spec_file(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise InputNotFound(path)
    return {k.strip(): (v or "").strip() for k, v in dotenv_values(path).items()}


def parse_gbm_spec(values: Dict[str, str]) -> GbmSpec:
    """Keys: ``s0``, ``a``, ``b``, ``n_steps``, ``dt``."""
    unknown = set(values) - GBM_KEYS
    if unknown:
        raise ConfigError(f"unknown GBM spec keys: {', '.join(sorted(unknown))}")
    return GbmSpec(
        s0=_number(values, "s0"),
        a=_number(values, "a"),
        b=_number(values, "b"),
        n_steps=_number(values, "n_steps", int),
        dt=_number(values, "dt"),
    )


def parse_linear_spec(values: Dict[str, str]) -> LinearSdeSpec:
    """Keys: ``x0``, ``A`` (comma lists), ``B`` (``;``-separated rows), ``n_steps``, ``dt``,
    optional ``names`` and ``regime.<k>.start`` / ``regime.<k>.A`` / ``regime.<k>.B``.
    ``preset=engine`` takes the engine channels and accepts ``n_steps``, ``dt`` and ``switch_index``.
    """
    regimes: Dict[str, Dict[str, str]] = {}
    for key, value in values.items():
        if key.startswith("regime."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in ("start", "A", "B"):
                raise ConfigError(f"bad regime key {key!r}; expected regime.<k>.start|A|B")
            regimes.setdefault(parts[1], {})[parts[2]] = value
        elif key not in LINEAR_KEYS:
            raise ConfigError(f"unknown linear spec key {key!r}")

    if values.get("preset"):
        if values["preset"] != "engine":
            raise ConfigError(f"unknown preset {values['preset']!r}")
        return engine_preset(
            n_steps=_number(values, "n_steps", int) if values.get("n_steps") else 2000,
            dt=_number(values, "dt") if values.get("dt") else 10.0,
            switch_index=_number(values, "switch_index", int) if values.get("switch_index") else None,
        )

    for label, entry in regimes.items():
        missing = {"start", "A", "B"} - set(entry)
        if missing:
            raise ConfigError(f"regime {label} is missing {', '.join(sorted(missing))}")

    schedule = []
    for label in sorted(regimes, key=lambda r: _number(regimes[r], "start", int)):
        entry = regimes[label]
        schedule.append(RegimeOverride(start_index=_number(entry, "start", int), A=_vector(entry["A"]), B=_matrix(entry["B"])))

    names = tuple(n.strip() for n in values["names"].split(",")) if values.get("names") else None
    if "x0" not in values or "A" not in values or "B" not in values:
        raise ConfigError("linear spec needs x0, A and B (or preset=engine)")
    return LinearSdeSpec(
        x0=_vector(values["x0"]),
        A=_vector(values["A"]),
        B=_matrix(values["B"]),
        n_steps=_number(values, "n_steps", int),
        dt=_number(values, "dt"),
        regime_schedule=tuple(schedule),
        feature_names=names,
    )


def load_spec(path: Optional[str], model: str, preset: Optional[str] = None) -> Union[GbmSpec, LinearSdeSpec]:
    values = read_spec_file(path) if path else {}
    if preset:
        values["preset"] = preset
    if model == "gbm":
        return parse_gbm_spec(values)
    return parse_linear_spec(values)

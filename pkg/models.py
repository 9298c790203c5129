"""Pydantic domain models: series, estimated parameters, ensembles, baselines, reports."""

from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import (
    ConfigError,
    DegenerateWindow,
    DimensionMismatch,
    EmptyInput,
    NonFiniteValue,
    NumericFailure,
    OutOfBounds,
)


def _frozen_array(value: Any, ndim: int) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _first_non_finite(arr: np.ndarray) -> Optional[Tuple[int, ...]]:
    bad = np.argwhere(~np.isfinite(arr))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


class _Model(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


# ========================================================================
# Series
# ========================================================================

class UniformSeries(_Model):
    values: np.ndarray
    dt: float
    name: str = "value"

    @field_validator("values", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @model_validator(mode="after")
    def check(self):
        if len(self.values) == 0:
            raise EmptyInput(f"series {self.name!r} has no observations")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        bad = _first_non_finite(self.values)
        if bad is not None:
            raise NonFiniteValue(row=bad[0] + 1, col=1)
        return self

    def __len__(self) -> int:
        return len(self.values)


class MultiSeries(_Model):
    rows: np.ndarray
    dt: float
    feature_names: Tuple[str, ...]

    @field_validator("rows", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @model_validator(mode="after")
    def check(self):
        length, width = self.rows.shape
        if length == 0:
            raise EmptyInput("series has no rows")
        if width == 0:
            raise DimensionMismatch("series has no feature columns")
        if len(self.feature_names) != width:
            raise DimensionMismatch(
                f"{len(self.feature_names)} feature names for {width} columns"
            )
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        bad = _first_non_finite(self.rows)
        if bad is not None:
            raise NonFiniteValue(row=bad[0] + 1, col=bad[1] + 1)
        return self

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def head(self, end_index: int) -> "MultiSeries":
        """Rows ``[0, end_index)``: everything observable at that origin."""
        return MultiSeries(rows=self.rows[:end_index], dt=self.dt, feature_names=self.feature_names)

    def column(self, index: int) -> UniformSeries:
        return UniformSeries(values=self.rows[:, index], dt=self.dt, name=self.feature_names[index])


class WindowView(_Model):
    parent: Union[MultiSeries, UniformSeries]
    start_index: int
    end_index: int

    @model_validator(mode="after")
    def check(self):
        if not 0 <= self.start_index < self.end_index <= len(self.parent):
            raise OutOfBounds(
                f"window [{self.start_index}, {self.end_index}) outside series of length {len(self.parent)}"
            )
        return self

    @property
    def data(self) -> np.ndarray:
        source = self.parent.rows if isinstance(self.parent, MultiSeries) else self.parent.values
        return source[self.start_index:self.end_index]

    @property
    def width(self) -> int:
        return self.end_index - self.start_index


# ========================================================================
# Single Particle Method
# ========================================================================

class GbmParams(_Model):
    a: float
    b: float = Field(ge=0.0)
    window_size: int

    @model_validator(mode="after")
    def check(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise NumericFailure(f"non-finite GBM parameters a={self.a}, b={self.b}")
        return self


class SpmForecast(_Model):
    sample: float
    mean: float
    median: float
    mode: float
    upper: float
    lower: float
    from_value: float


# ========================================================================
# Multi Particle Method
# ========================================================================

class DriftSamples(_Model):
    samples: np.ndarray
    mean: np.ndarray

    @field_validator("samples", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @field_validator("mean", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @model_validator(mode="after")
    def check(self):
        if self.samples.shape[0] < 2:
            raise DegenerateWindow(f"need at least 2 drift samples, got {self.samples.shape[0]}")
        if self.samples.shape[1] != self.mean.shape[0]:
            raise DimensionMismatch("drift mean and samples disagree on dimension")
        return self


class SdeParams(_Model):
    A: np.ndarray
    C: np.ndarray
    B: np.ndarray
    window_used: int

    @field_validator("A", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @field_validator("C", "B", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @model_validator(mode="after")
    def check(self):
        n = self.A.shape[0]
        if self.C.shape != (n, n) or self.B.shape != (n, n):
            raise DimensionMismatch(
                f"drift of dimension {n} with C {self.C.shape} and B {self.B.shape}"
            )
        return self

    @property
    def dimension(self) -> int:
        return self.A.shape[0]


class WindowPolicy(_Model):
    w_base: int
    w_min: int
    w_max: int
    threshold: float
    lookback_L: int

    @model_validator(mode="after")
    def check(self):
        if not 2 <= self.w_min <= self.w_base <= self.w_max:
            raise ConfigError(
                f"window widths must satisfy 2 <= min <= base <= max, got "
                f"{self.w_min}/{self.w_base}/{self.w_max}"
            )
        if self.lookback_L < 1:
            raise ConfigError("lookback must be >= 1")
        if not self.threshold > 0:
            raise ConfigError("threshold must be positive")
        return self

    @property
    def warmup(self) -> int:
        return self.w_max + self.lookback_L


Regime = Literal["transient", "steady", "nominal"]


class WindowDecision(_Model):
    drift_magnitude: float = Field(ge=0.0)
    chosen_width: int
    regime: Regime


class Ensemble(_Model):
    particles: np.ndarray
    increments: np.ndarray
    base_state: np.ndarray
    params: SdeParams
    dt: float

    @field_validator("particles", "increments", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @field_validator("base_state", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def drift_point(self) -> np.ndarray:
        return self.base_state + self.params.A * self.dt


class WeightedEnsemble(_Model):
    residuals: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    sigma: float
    standard: np.ndarray
    corrected: np.ndarray

    @field_validator("residuals", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @field_validator("distances", "weights", "standard", "corrected", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @property
    def effective_sample_size(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))


class MpmStep(_Model):
    """One adaptive single-step forecast and everything that produced it."""

    decision: WindowDecision
    params: SdeParams
    ensemble: Ensemble
    weighted: WeightedEnsemble


class MpmForecast(_Model):
    standard: np.ndarray
    corrected: np.ndarray
    decisions: List[WindowDecision]

    @field_validator("standard", "corrected", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)


# ========================================================================
# Baselines
# ========================================================================

class ArOrder(_Model):
    p: int = Field(ge=0)
    d: int = Field(ge=0, le=2)


class ArModel(_Model):
    order: ArOrder
    coefficients: Tuple[float, ...]
    intercept: float
    residual_variance: float = Field(ge=0.0)
    aic: float
    bic: float
    n_eff: int


class VarModel(_Model):
    p: int = Field(ge=0)
    d: int = Field(ge=0, le=2)
    coefficient_matrices: np.ndarray
    intercept: np.ndarray
    residual_covariance: np.ndarray
    aic: float
    bic: float
    n_eff: int

    @field_validator("coefficient_matrices", mode="before")
    @classmethod
    def as_stack(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 3)

    @field_validator("intercept", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @field_validator("residual_covariance", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @property
    def dimension(self) -> int:
        return self.intercept.shape[0]


# ========================================================================
# Metrics and reports
# ========================================================================

class ErrorPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    mae: float = Field(ge=0.0)
    rmse: float = Field(ge=0.0)
    count: int = Field(ge=1)

    @model_validator(mode="after")
    def check(self):
        if self.rmse < self.mae:
            raise ValueError(f"rmse {self.rmse} below mae {self.mae}")
        return self


class BacktestProtocol(BaseModel):
    model_config = ConfigDict(frozen=True)

    series_digest: str
    n_rows: int
    dt: float
    horizon: int
    stride: int
    first_origin: int
    last_origin: int
    n_origins: int


MethodLabel = Literal["SPM", "MPM-standard", "MPM-corrected", "ARI", "VAR"]


class BacktestReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: MethodLabel
    feature_names: List[str]
    protocol: BacktestProtocol
    per_feature: Dict[str, List[ErrorPair]]
    feature_average: List[ErrorPair]
    aggregate_norm: List[ErrorPair]
    bound_coverage: Optional[Dict[str, List[float]]] = None
    config_echo: Dict[str, Any]
    seed: int
    notes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check(self):
        k = self.protocol.horizon
        for name in self.feature_names:
            if len(self.per_feature.get(name, [])) != k:
                raise ValueError(f"feature {name!r} must carry exactly {k} error pairs")
        return self


class BacktestRun(_Model):
    """Reports of one method plus its per-origin forecast records (one frame per report label)."""

    reports: List[BacktestReport]
    forecasts: Dict[str, Any]


# ========================================================================
# Synthetic generators
# ========================================================================

class GbmSpec(_Model):
    s0: float = Field(gt=0.0)
    a: float
    b: float = Field(ge=0.0)
    n_steps: int = Field(ge=1)
    dt: float = Field(gt=0.0)


class RegimeOverride(_Model):
    start_index: int = Field(ge=0)
    A: np.ndarray
    B: np.ndarray

    @field_validator("A", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @field_validator("B", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)


def _check_diffusion(B: np.ndarray, n: int, label: str) -> None:
    if B.shape != (n, n):
        raise DimensionMismatch(f"{label}: diffusion must be {n}x{n}, got {B.shape}")
    if not np.allclose(B, B.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(B).max()))):
        raise ConfigError(f"{label}: diffusion matrix must be symmetric")
    if np.linalg.eigvalsh(B).min() < -1e-10 * max(1.0, float(np.abs(B).max())):
        raise ConfigError(f"{label}: diffusion matrix must be positive semidefinite")


class LinearSdeSpec(_Model):
    x0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    n_steps: int = Field(ge=1)
    dt: float = Field(gt=0.0)
    regime_schedule: Tuple[RegimeOverride, ...] = ()
    feature_names: Optional[Tuple[str, ...]] = None

    @field_validator("x0", "A", mode="before")
    @classmethod
    def as_vector(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 1)

    @field_validator("B", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, 2)

    @model_validator(mode="after")
    def check(self):
        n = self.x0.shape[0]
        if self.A.shape != (n,):
            raise DimensionMismatch(f"drift must have dimension {n}, got {self.A.shape}")
        _check_diffusion(self.B, n, "base regime")
        previous = -1
        for override in self.regime_schedule:
            if override.start_index <= previous:
                raise ConfigError("regime schedule indices must be strictly increasing")
            previous = override.start_index
            if override.A.shape != (n,):
                raise DimensionMismatch(f"regime at {override.start_index}: drift dimension mismatch")
            _check_diffusion(override.B, n, f"regime at {override.start_index}")
        if self.feature_names is not None and len(self.feature_names) != n:
            raise DimensionMismatch(f"{len(self.feature_names)} names for {n} channels")
        return self

"""Run configuration: environment-backed defaults plus the validated RunConfig model."""

import os
import re
from typing import Any, Dict, Literal, Mapping, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import ConfigError, InputNotFound

load_dotenv()

# --- Reproducibility ---
DEFAULT_SEED: int = int(os.getenv("FORECAST_SEED", "42"))

# --- Sampling ---
DEFAULT_DT: float = float(os.getenv("FORECAST_DT", "10"))

# --- Output ---
DEFAULT_OUTPUT_DIR: str = os.getenv("FORECAST_OUTPUT_DIR", "runs/latest")

# --- Workers ---
DEFAULT_THREADS: int = int(os.getenv("FORECAST_THREADS", str(os.cpu_count() or 1)))

# --- Logging ---
LOG_LEVEL: str = os.getenv("FORECAST_LOG_LEVEL", "INFO")

# --- Numerics ---
MIN_MPM_WINDOW = 5
EIGEN_TOLERANCE = 1e-12
CLAMP_REPORT_RATIO = 1e-10
CSV_FLOAT_FORMAT = "%.17g"

BASELINE_DISCLAIMER = "baseline: ARI/VAR-OLS, MA terms omitted"

_SIGMA_MODE = re.compile(r"^(diffusion_trace|mean_distance|fixed:[0-9eE.+\-]+)$")
_AUTO = {"", "auto", "none"}


def _auto_to_none(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() in _AUTO:
        return None
    return value


# ========================================================================
# Sections
# ========================================================================

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SpmSettings(_Section):
    window: int = Field(200, ge=3)
    horizon: int = Field(10, ge=1)
    bounds: Literal["variance", "quantile"] = "variance"
    confidence: float = Field(0.9, gt=0.0, lt=1.0)
    point: Literal["sample", "mean"] = "sample"


class WindowSettings(_Section):
    base: int = 200
    min: int = 50
    max: int = 300
    threshold: Optional[float] = None
    lookback: Optional[int] = None

    @field_validator("threshold", "lookback", mode="before")
    @classmethod
    def auto_means_default(cls, value: Any) -> Any:
        return _auto_to_none(value)

    @model_validator(mode="after")
    def check_order(self):
        if self.min < MIN_MPM_WINDOW:
            raise ConfigError(f"window.min must be >= {MIN_MPM_WINDOW}, got {self.min}")
        if not self.min <= self.base <= self.max:
            raise ConfigError(
                f"window widths must satisfy min <= base <= max, got {self.min}/{self.base}/{self.max}"
            )
        if self.threshold is not None and self.threshold <= 0:
            raise ConfigError("window.threshold must be positive")
        if self.lookback is not None and self.lookback < 1:
            raise ConfigError("window.lookback must be >= 1")
        return self


class MpmSettings(_Section):
    particles: int = Field(1000, ge=1)
    sigma_mode: str = "diffusion_trace"
    horizon: int = Field(20, ge=1)
    freeze_params: bool = False

    @field_validator("sigma_mode")
    @classmethod
    def check_sigma_mode(cls, value: str) -> str:
        value = value.strip()
        if not _SIGMA_MODE.match(value):
            raise ValueError("expected diffusion_trace, mean_distance or fixed:<value>")
        if value.startswith("fixed:") and float(value.split(":", 1)[1]) <= 0:
            raise ValueError("fixed sigma must be positive")
        return value


class BaselineSettings(_Section):
    p_max: int = Field(5, ge=0)
    d_max: int = Field(2, ge=0, le=2)
    var_d: int = Field(1, ge=0, le=2)
    var_p_max: int = Field(2, ge=1)
    train_fraction: float = Field(0.85, gt=0.0, lt=1.0)
    criterion: Literal["aic", "bic"] = "aic"


class BacktestSettings(_Section):
    horizon: Optional[int] = None
    stride: int = Field(1, ge=1)

    @field_validator("horizon", mode="before")
    @classmethod
    def auto_means_default(cls, value: Any) -> Any:
        return _auto_to_none(value)


# ========================================================================
# RunConfig
# ========================================================================

class RunConfig(_Section):
    input: Optional[str] = None
    dt: float = Field(DEFAULT_DT, gt=0.0)
    method: Literal["spm", "mpm", "ari", "var", "all"] = "all"
    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)
    output: str = DEFAULT_OUTPUT_DIR
    threads: int = Field(DEFAULT_THREADS, ge=1)
    column: Optional[str] = None
    timestamp_column: bool = False

    spm: SpmSettings = Field(default_factory=SpmSettings)
    window: WindowSettings = Field(default_factory=WindowSettings)
    mpm: MpmSettings = Field(default_factory=MpmSettings)
    baseline: BaselineSettings = Field(default_factory=BaselineSettings)
    backtest: BacktestSettings = Field(default_factory=BacktestSettings)

    def echo(self) -> Dict[str, Any]:
        """Flat, key-sorted view of the effective configuration (dotted keys)."""
        flat: Dict[str, Any] = {}

        def _walk(prefix: str, data: Mapping[str, Any]) -> None:
            for key, value in data.items():
                name = f"{prefix}{key}"
                if isinstance(value, Mapping):
                    _walk(f"{name}.", value)
                else:
                    flat[name] = value

        _walk("", self.model_dump())
        return dict(sorted(flat.items()))

    def horizon_for(self, method: str) -> int:
        if self.backtest.horizon is not None:
            return self.backtest.horizon
        return self.spm.horizon if method == "spm" else self.mpm.horizon


# Every key accepted in config files, with its --help text.
CONFIG_KEYS: Dict[str, str] = {
    "input": "input CSV path",
    "dt": f"sampling interval in seconds (default {DEFAULT_DT:g})",
    "method": "spm | mpm | ari | var | all (default all)",
    "seed": f"u64 seed for every stochastic operation (default {DEFAULT_SEED})",
    "output": f"output directory (default {DEFAULT_OUTPUT_DIR})",
    "threads": "worker threads (default: machine parallelism)",
    "column": "feature name or 0-based index for single-series commands (default: all)",
    "timestamp_column": "skip a leading timestamp column in the input CSV (default false)",
    "spm.window": "SPM sliding window length (default 200)",
    "spm.horizon": "SPM forecast horizon (default 10)",
    "spm.bounds": "variance | quantile (default variance: mean +/- variance term)",
    "spm.confidence": "confidence for quantile bounds (default 0.9)",
    "spm.point": "sample | mean, the SPM value scored in backtests (default sample)",
    "window.base": "MPM nominal window W_base (default 200)",
    "window.min": "MPM transient window W_min, >= 5 (default 50)",
    "window.max": "MPM steady-state window W_max (default 300)",
    "window.threshold": "drift-magnitude threshold (default auto: 2 x median D over warmup)",
    "window.lookback": "drift-magnitude lookback L (default auto: window.min)",
    "mpm.particles": "ensemble size M (default 1000)",
    "mpm.sigma_mode": "diffusion_trace | mean_distance | fixed:<value> (default diffusion_trace)",
    "mpm.horizon": "MPM forecast horizon (default 20)",
    "mpm.freeze_params": "reuse origin parameters for every pseudo-step (default false)",
    "baseline.p_max": "largest AR order in the grid search (default 5)",
    "baseline.d_max": "largest differencing order in the grid search (default 2)",
    "baseline.var_d": "differencing order for VAR (default 1)",
    "baseline.var_p_max": "largest VAR lag order considered (default 2)",
    "baseline.train_fraction": "training share for baselines (default 0.85)",
    "baseline.criterion": "aic | bic order selection criterion (default aic)",
    "backtest.horizon": "backtest horizon (default auto: 10 for spm, 20 otherwise)",
    "backtest.stride": "origin stride (default 1)",
}


def _nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"Unknown config key: {key}")
        if "." in key:
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
        else:
            nested[key] = value
    return nested


def read_config_file(path: str) -> Dict[str, Optional[str]]:
    """Parse a ``key=value`` config file (dotenv syntax, dotted keys)."""
    if not os.path.exists(path):
        raise InputNotFound(path)
    return {key.strip(): value for key, value in dotenv_values(path).items()}


def load_run_config(
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge built-in defaults < config file < CLI overrides (``None`` overrides are skipped)."""
    merged: Dict[str, Any] = {}
    if config_path:
        merged.update({k: v for k, v in read_config_file(config_path).items() if v is not None})
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(_nest(merged))
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(part) for part in first.get("loc", ()))
        raise ConfigError(f"Invalid config value for {where}: {first.get('msg')}") from exc

"""CSV ingestion/emission and windowing for uniformly sampled series."""

import logging
import os
from typing import Union

import numpy as np
import pandas as pd

from config import CSV_FLOAT_FORMAT
from errors import (
    ConfigError,
    EmptyInput,
    InputNotFound,
    MalformedCsv,
    NonFiniteValue,
    OutOfBounds,
    WindowTooSmall,
)
from models import MultiSeries, UniformSeries, WindowView

logger = logging.getLogger(__name__)

_NON_FINITE_TOKENS = {
    "nan", "+nan", "-nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity",
}


def load_csv(path: str, dt: float, has_timestamp_column: bool = False) -> MultiSeries:
    """Read a header-first, comma-separated file of reals into a MultiSeries.

    Missing values are rejected, never imputed.  Reported positions are the
    1-based data row (header excluded) and the 1-based file column.
    """
    if not os.path.exists(path):
        raise InputNotFound(path)

    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise EmptyInput(f"{path}: file is empty (header row required)")
    except pd.errors.ParserError as exc:
        raise MalformedCsv(f"{path}: ragged row ({str(exc).strip()})")

    header = [str(h).strip() for h in raw.iloc[0].tolist()]
    body = raw.iloc[1:]
    if body.empty:
        raise EmptyInput(f"{path}: no data rows")

    ragged = body.isna().to_numpy()
    if ragged.any():
        row = int(np.argwhere(ragged)[0][0]) + 1
        raise MalformedCsv(f"{path}: row {row} has too few fields", row=row)

    first_value_col = 1 if has_timestamp_column else 0
    names = header[first_value_col:]
    if not names:
        raise MalformedCsv(f"{path}: no value columns")

    cells = body.iloc[:, first_value_col:].apply(lambda col: col.str.strip())
    lowered = cells.apply(lambda col: col.str.lower())
    non_finite = lowered.isin(_NON_FINITE_TOKENS).to_numpy()
    parsed = cells.apply(lambda col: pd.to_numeric(col, errors="coerce")).to_numpy(dtype=np.float64)
    malformed = np.isnan(parsed) & ~non_finite

    if malformed.any():
        r, c = np.argwhere(malformed)[0]
        col = int(c) + first_value_col + 1
        raise MalformedCsv(
            f"{path}: non-numeric cell {cells.iat[r, c]!r} at row {r + 1}, column {col}",
            row=int(r) + 1,
            col=col,
        )

    # numpy parses with correct rounding, so 17-digit files round-trip bit-exactly
    values = cells.to_numpy(dtype=str).astype(np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        r, c = bad[0]
        raise NonFiniteValue(row=int(r) + 1, col=int(c) + first_value_col + 1)

    series = MultiSeries(rows=values, dt=dt, feature_names=tuple(names))
    logger.info("Loaded %s: %d rows x %d features (dt=%g)", path, len(series), series.n_features, dt)
    return series


def write_csv(series: MultiSeries, path: str, include_timestamp: bool = False) -> str:
    """Write ``series`` with 17 significant digits so ``load_csv`` reads back identical doubles."""
    frame = pd.DataFrame(np.asarray(series.rows), columns=list(series.feature_names))
    if include_timestamp:
        frame.insert(0, "time", np.arange(len(series)) * series.dt)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("Wrote %d rows to %s", len(series), path)
    return path


def window(series: Union[MultiSeries, UniformSeries], end_index: int, width: int) -> WindowView:
    """The ``width`` observations ending just before ``end_index``."""
    if width < 2:
        raise WindowTooSmall(f"window width must be >= 2, got {width}")
    if end_index < width or end_index > len(series):
        raise OutOfBounds(
            f"window of width {width} ending at {end_index} needs indices [{end_index - width}, {end_index}) "
            f"within a series of length {len(series)}"
        )
    return WindowView(parent=series, start_index=end_index - width, end_index=end_index)


def resolve_column(series: MultiSeries, key: Union[str, int]) -> int:
    """Map a feature name or 0-based index to a column index."""
    if isinstance(key, int) or (isinstance(key, str) and key.isdigit() and key not in series.feature_names):
        index = int(key)
        if not 0 <= index < series.n_features:
            raise ConfigError(f"column index {index} out of range (n={series.n_features})")
        return index
    try:
        return series.feature_names.index(key)
    except ValueError:
        raise ConfigError(f"unknown column {key!r}; available: {', '.join(series.feature_names)}")


def column(series: MultiSeries, key: Union[str, int]) -> UniformSeries:
    return series.column(resolve_column(series, key))

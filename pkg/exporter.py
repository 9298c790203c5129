"""Run artifacts: JSON reports, comparison tables, horizon curves and forecast records.

Every writer returns the path it wrote.  Output is a pure function of its
inputs (sorted keys, fixed float format, no timestamps) so identical runs
produce byte-identical files.
"""

import json
import logging
import os
from typing import Dict, List, Sequence

import pandas as pd

from backtest import compare_methods, horizon_curves
from config import CSV_FLOAT_FORMAT
from errors import DataError, InputNotFound
from models import BacktestReport, BacktestRun, SpmForecast

logger = logging.getLogger(__name__)


def _slug(label: str) -> str:
    return label.lower().replace("-", "_")


def _prepare(output_dir: str, filename: str) -> str:
    os.makedirs(output_dir, exist_ok=True)
    return os.path.join(output_dir, filename)


def write_report(report: BacktestReport, output_dir: str) -> str:
    filepath = _prepare(output_dir, f"report_{_slug(report.method)}.json")
    payload = report.model_dump(mode="json")
    with open(filepath, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("Wrote %s", filepath)
    return filepath


def read_report(path: str) -> BacktestReport:
    if not os.path.exists(path):
        raise InputNotFound(path)
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not a JSON report ({exc.msg})")
    return BacktestReport.model_validate(payload)


def write_forecasts(label: str, frame: pd.DataFrame, output_dir: str) -> str:
    filepath = _prepare(output_dir, f"forecast_{_slug(label)}.csv")
    frame.to_csv(filepath, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("Wrote %d forecast records to %s", len(frame), filepath)
    return filepath


def write_comparison(reports: Sequence[BacktestReport], output_dir: str) -> List[str]:
    """``comparison.csv`` and ``comparison.json`` (same table, row-keyed)."""
    table = compare_methods(reports)
    csv_path = _prepare(output_dir, "comparison.csv")
    table.to_csv(csv_path, float_format=CSV_FLOAT_FORMAT)

    json_path = _prepare(output_dir, "comparison.json")
    payload = {
        "methods": [r.method for r in reports],
        "protocol": reports[0].protocol.model_dump(mode="json"),
        "rows": {feature: row.to_dict() for feature, row in table.iterrows()},
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("Wrote comparison of %s to %s", ", ".join(payload["methods"]), output_dir)
    return [csv_path, json_path]


def write_horizon_curves(reports: Sequence[BacktestReport], output_dir: str) -> str:
    filepath = _prepare(output_dir, "horizon_curves.csv")
    horizon_curves(reports).to_csv(filepath, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("Wrote %s", filepath)
    return filepath


def write_runs(runs: Sequence[BacktestRun], output_dir: str) -> Dict[str, str]:
    """All artifacts of a backtest: per-method reports and forecasts, curves, and the comparison."""
    written: Dict[str, str] = {}
    reports: List[BacktestReport] = []
    for run in runs:
        for report in run.reports:
            reports.append(report)
            written[f"report:{report.method}"] = write_report(report, output_dir)
            written[f"forecast:{report.method}"] = write_forecasts(report.method, run.forecasts[report.method], output_dir)
    written["horizon_curves"] = write_horizon_curves(reports, output_dir)
    csv_path, json_path = write_comparison(reports, output_dir)
    written["comparison_csv"] = csv_path
    written["comparison_json"] = json_path
    return written


def spm_forecast_frame(feature: str, steps: Sequence[SpmForecast]) -> pd.DataFrame:
    return pd.DataFrame({
        "feature": feature,
        "step": range(1, len(steps) + 1),
        "from_value": [s.from_value for s in steps],
        "sample": [s.sample for s in steps],
        "mean": [s.mean for s in steps],
        "median": [s.median for s in steps],
        "mode": [s.mode for s in steps],
        "lower": [s.lower for s in steps],
        "upper": [s.upper for s in steps],
    })

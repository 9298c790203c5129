import logging

import numpy as np
import pytest

from backtest import (
    AGGREGATE_ROW,
    AVERAGE_ROW,
    compare_methods,
    horizon_curves,
    mae_rmse,
    origin_indices,
    prepare_forecaster,
    run_backtest,
    run_backtests,
    series_digest,
)
from config import load_run_config
from errors import DimensionMismatch, InsufficientData, LengthMismatch, ProtocolMismatch, SingularDesign
from generator import simulate_gbm, simulate_linear_sde
from models import GbmSpec, LinearSdeSpec, MultiSeries
from rng import SeededRng

SMALL = {
    "threads": 1,
    "seed": 7,
    "spm.window": 20,
    "window.base": 10,
    "window.min": 5,
    "window.max": 20,
    "mpm.particles": 20,
    "baseline.p_max": 2,
    "baseline.d_max": 1,
    "baseline.var_p_max": 2,
    "baseline.train_fraction": 0.5,
    "backtest.horizon": 3,
    "backtest.stride": 3,
}


def _config(**extra):
    overrides = dict(SMALL)
    overrides.update({key.replace("__", "."): value for key, value in extra.items()})
    return load_run_config(overrides=overrides)


def _walk(n_rows=240, seed=0):
    rows = 100.0 + np.cumsum(np.random.default_rng(seed).normal(scale=0.5, size=(n_rows, 3)), axis=0)
    return MultiSeries(rows=rows, dt=1.0, feature_names=("x1", "x2", "x3"))


def _ramp(n_rows=80):
    t = np.arange(n_rows, dtype=float)[:, None]
    rows = np.array([10.0, 20.0, -5.0]) + t * np.array([0.5, -1.25, 2.0])
    return MultiSeries(rows=rows, dt=1.0, feature_names=("a", "b", "c"))


# ---------- metrics ----------

def test_mae_rmse_by_hand():
    per_feature, aggregate = mae_rmse([1.0, 2.0, 3.0], [2.0, 2.0, 5.0])
    assert per_feature[0].mae == pytest.approx(1.0)
    assert per_feature[0].rmse == pytest.approx(np.sqrt(5.0 / 3.0))
    assert per_feature[0].count == 3
    assert aggregate.mae == pytest.approx(1.0)


@pytest.mark.parametrize(
    "errors, mae, rmse",
    [([0.0, 0.0], 0.0, 0.0), ([1.0, -1.0], 1.0, 1.0), ([0.0, 2.0], 1.0, np.sqrt(2.0))],
)
def test_metric_identities(errors, mae, rmse):
    actual = np.array([10.0, 20.0])
    (pair,), _ = mae_rmse(actual, actual + np.asarray(errors))
    assert pair.mae == mae
    assert pair.rmse == rmse


def test_aggregate_uses_the_euclidean_norm():
    per_feature, aggregate = mae_rmse([[0.0, 0.0], [1.0, 1.0]], [[3.0, 4.0], [1.0, 1.0]])
    assert [p.mae for p in per_feature] == pytest.approx([1.5, 2.0])
    assert aggregate.mae == pytest.approx(2.5)
    assert aggregate.rmse == pytest.approx(np.sqrt(12.5))


def test_constant_errors_keep_rmse_at_least_mae():
    per_feature, _ = mae_rmse(np.zeros(7), np.full(7, 0.1))
    assert per_feature[0].rmse >= per_feature[0].mae


def test_metric_shape_errors():
    with pytest.raises(LengthMismatch):
        mae_rmse([1.0, 2.0], [1.0])
    with pytest.raises(LengthMismatch):
        mae_rmse(np.empty((0, 2)), np.empty((0, 2)))
    with pytest.raises(DimensionMismatch):
        mae_rmse(np.zeros((3, 2)), np.zeros((3, 3)))


# ---------- protocol ----------

def test_origins_leave_room_for_the_horizon():
    assert origin_indices(10, warmup=4, horizon=3, stride=2) == [4, 6]
    assert origin_indices(10, warmup=4, horizon=1, stride=1) == list(range(4, 10))
    with pytest.raises(InsufficientData):
        origin_indices(10, warmup=8, horizon=3, stride=1)


def test_digest_tracks_content():
    series = _walk(50)
    assert series_digest(series) == series_digest(_walk(50))
    assert series_digest(series) != series_digest(_walk(50, seed=1))


# ---------- harness ----------

def test_noiseless_ramp_scores_zero_error():
    run = run_backtest(_ramp(), _config(window__threshold=5.0), "mpm")
    assert [r.method for r in run.reports] == ["MPM-standard", "MPM-corrected"]
    for report in run.reports:
        assert report.protocol.first_origin == 25
        for pairs in report.per_feature.values():
            assert all(p.mae <= 1e-8 for p in pairs)
        assert all(p.mae <= 1e-8 for p in report.aggregate_norm)


def test_report_and_frame_layout():
    series = _walk()
    run = run_backtest(series, _config(), "spm")
    (report,) = run.reports
    protocol = report.protocol
    assert protocol.horizon == 3
    assert protocol.first_origin == 20
    assert protocol.n_origins == len(range(20, 240 - 3 + 1, 3))
    assert protocol.series_digest == series_digest(series)
    assert report.feature_names == ["x1", "x2", "x3"]
    assert len(report.feature_average) == len(report.aggregate_norm) == 3
    assert report.config_echo["spm.window"] == 20
    assert report.seed == 7

    assert set(report.bound_coverage) == {"x1", "x2", "x3"}
    assert all(0.0 <= c <= 1.0 for cover in report.bound_coverage.values() for c in cover)

    frame = run.forecasts["SPM"]
    assert list(frame.columns) == ["origin", "step", "feature", "actual", "predicted", "lower", "upper"]
    assert len(frame) == protocol.n_origins * 3 * 3
    first = frame[(frame.origin == 20) & (frame.step == 2) & (frame.feature == "x2")]
    assert first.actual.item() == series.rows[21, 1]


@pytest.mark.parametrize("method", ["spm", "mpm"])
def test_worker_count_does_not_change_results(method):
    series = _walk()
    serial = run_backtest(series, _config(threads=1), method)
    pooled = run_backtest(series, _config(threads=3), method)
    for a, b in zip(serial.reports, pooled.reports):
        assert a.per_feature == b.per_feature
        assert a.aggregate_norm == b.aggregate_norm
    for label, frame in serial.forecasts.items():
        assert frame.equals(pooled.forecasts[label])


def test_reruns_are_identical():
    series = _walk()
    first = run_backtests(series, _config(), ["spm", "mpm", "ari", "var"])
    second = run_backtests(series, _config(), ["spm", "mpm", "ari", "var"])
    for a, b in zip(first, second):
        assert [r.model_dump() for r in a.reports] == [r.model_dump() for r in b.reports]


def test_seed_changes_stochastic_methods_only():
    series = _walk()
    base = run_backtest(series, _config(), "spm").reports[0]
    other = run_backtest(series, _config(seed=8), "spm").reports[0]
    assert base.per_feature != other.per_feature

    ari = run_backtest(series, _config(), "ari").reports[0]
    ari_other = run_backtest(series, _config(seed=8), "ari").reports[0]
    assert ari.per_feature == ari_other.per_feature


def test_shared_protocol_across_methods():
    runs = run_backtests(_walk(), _config(), ["spm", "mpm", "ari", "var"])
    reports = [r for run in runs for r in run.reports]
    assert [r.method for r in reports] == ["SPM", "MPM-standard", "MPM-corrected", "ARI", "VAR"]
    assert len({r.protocol for r in reports}) == 1
    assert reports[0].protocol.first_origin == 120
    assert any("MA terms omitted" in note for note in reports[3].notes)


def test_too_short_series_has_no_origin():
    with pytest.raises(InsufficientData):
        run_backtest(_walk(22), _config(), "spm")


@pytest.mark.parametrize("method", ["spm", "mpm", "ari", "var"])
def test_forecasts_never_read_the_future(method):
    series = _walk()
    origin = 150
    tampered_rows = np.array(series.rows)
    tampered_rows[origin:] *= 3.0
    tampered = MultiSeries(rows=tampered_rows, dt=1.0, feature_names=series.feature_names)

    config = _config()
    labels, predict, _ = prepare_forecaster(method, series, config, horizon=3)
    _, predict_tampered, _ = prepare_forecaster(method, tampered, config, horizon=3)
    clean, _ = predict(origin)
    dirty, _ = predict_tampered(origin)
    for label in labels:
        assert np.array_equal(clean[label], dirty[label])


@pytest.mark.parametrize("method", ["ari", "var"])
def test_early_origins_never_see_later_rows(method):
    series = _walk()
    shifted_rows = np.array(series.rows)
    shifted_rows[200:] += 1000.0
    shifted = MultiSeries(rows=shifted_rows, dt=1.0, feature_names=series.feature_names)

    clean = run_backtest(series, _config(), method, horizon=1, warmup=50)
    dirty = run_backtest(shifted, _config(), method, horizon=1, warmup=50)
    label = clean.reports[0].method
    assert "trained on rows [0, 50)" in clean.reports[0].notes

    def early(run):
        frame = run.forecasts[label]
        return frame.loc[frame.origin <= 200, "predicted"].to_numpy()

    np.testing.assert_array_equal(early(clean), early(dirty))


def test_baseline_refuses_origins_inside_its_training_rows():
    _, predict, _ = prepare_forecaster("ari", _walk(), _config(), horizon=3)
    with pytest.raises(InsufficientData):
        predict(100)


def test_singular_method_is_skipped_in_a_joint_run(caplog):
    rows = np.array(_walk().rows)
    rows[:, 2] = 100.0
    series = MultiSeries(rows=rows, dt=1.0, feature_names=("x1", "x2", "x3"))
    with caplog.at_level(logging.ERROR):
        runs = run_backtests(series, _config(), ["ari", "var"])
    assert [r.method for run in runs for r in run.reports] == ["ARI"]
    assert "Skipping var" in caplog.text

    with pytest.raises(SingularDesign):
        run_backtests(series, _config(), ["var"])


def _within_band(curve, band=0.05):
    return all(later >= (1 - band) * earlier for earlier, later in zip(curve, curve[1:]))


def test_spm_error_grows_with_horizon():
    path = simulate_gbm(GbmSpec(s0=50.0, a=0.0, b=0.02, n_steps=1500, dt=1.0), SeededRng(3))
    series = MultiSeries(rows=path.values[:, None], dt=1.0, feature_names=("price",))
    config = _config(**{"spm.window": 100, "backtest.horizon": 10, "backtest.stride": 5})
    report = run_backtest(series, config, "spm").reports[0]
    assert report.protocol.n_origins >= 200
    curve = [p.mae for p in report.per_feature["price"]]
    assert curve[-1] > curve[0]
    assert _within_band(curve)


def test_mpm_error_grows_with_horizon():
    spec = LinearSdeSpec(
        x0=[1.0, 2.0], A=[0.01, -0.02], B=[[0.1, 0.0], [0.0, 0.2]], n_steps=550, dt=1.0
    )
    series = simulate_linear_sde(spec, SeededRng(5))
    report = run_backtest(
        series, _config(**{"backtest.horizon": 20, "backtest.stride": 5}), "mpm"
    ).reports[1]
    assert report.protocol.n_origins >= 100
    curve = [p.mae for p in report.feature_average]
    assert curve[0] < curve[9] < curve[19]
    assert _within_band(curve)
    for name in series.feature_names:
        assert report.per_feature[name][-1].mae > report.per_feature[name][0].mae


# ---------- comparison ----------

def test_comparison_table():
    runs = run_backtests(_walk(), _config(), ["spm", "ari"])
    spm, ari = runs[0].reports[0], runs[1].reports[0]
    table = compare_methods([spm, ari])

    assert table.index.name == "feature"
    assert list(table.index) == ["x1", "x2", "x3", AVERAGE_ROW, AGGREGATE_ROW]
    assert table.loc["x2", "SPM_mae_h1"] == spm.per_feature["x2"][0].mae
    assert table.loc[AGGREGATE_ROW, "ARI_rmse_h3"] == ari.aggregate_norm[2].rmse
    for step in (1, 2, 3):
        for row in table.index:
            s, a = table.loc[row, f"SPM_mae_h{step}"], table.loc[row, f"ARI_mae_h{step}"]
            expected = "SPM" if s < a else "ARI" if a < s else "SPM=ARI"
            assert table.loc[row, f"best_mae_h{step}"] == expected


def test_single_report_table_is_the_report():
    report = run_backtest(_walk(), _config(), "var").reports[0]
    table = compare_methods([report])
    for step in range(3):
        assert list(table[f"VAR_rmse_h{step + 1}"].iloc[:3]) == [report.per_feature[n][step].rmse for n in report.feature_names]
        assert set(table[f"best_mae_h{step + 1}"]) == {"VAR"}


def test_ties_name_every_winner():
    spm = run_backtest(_walk(), _config(), "spm").reports[0]
    twin = spm.model_copy(update={"method": "ARI"})
    table = compare_methods([spm, twin])
    assert set(table["best_rmse_h2"]) == {"SPM=ARI"}


def test_comparison_rejects_mismatched_protocols():
    series = _walk()
    spm = run_backtest(series, _config(), "spm").reports[0]
    strided = run_backtest(series, _config(**{"backtest.stride": 2}), "ari").reports[0]
    with pytest.raises(ProtocolMismatch):
        compare_methods([spm, strided])
    with pytest.raises(ProtocolMismatch):
        compare_methods([spm, spm])
    with pytest.raises(ProtocolMismatch):
        compare_methods([])


def test_horizon_curves_long_format():
    run = run_backtest(_walk(), _config(), "mpm")
    curves = horizon_curves(run.reports)
    assert list(curves.columns) == ["method", "feature", "horizon", "mae", "rmse"]
    assert len(curves) == 2 * (3 + 2) * 3
    row = curves[(curves.method == "MPM-corrected") & (curves.feature == AVERAGE_ROW) & (curves.horizon == 3)]
    assert row.mae.item() == run.reports[1].feature_average[2].mae

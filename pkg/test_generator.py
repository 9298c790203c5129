import numpy as np
import pytest

from errors import ConfigError, DimensionMismatch, InputNotFound
from generator import (
    ENGINE_CHANNELS,
    engine_preset,
    load_spec,
    parse_gbm_spec,
    simulate_gbm,
    simulate_linear_sde,
)
from models import GbmSpec, LinearSdeSpec, RegimeOverride
from rng import SeededRng


# ---------- GBM ----------

def test_gbm_path_starts_at_s0():
    path = simulate_gbm(GbmSpec(s0=3.0, a=0.1, b=0.2, n_steps=50, dt=0.5), SeededRng(1))
    assert len(path) == 51
    assert path.values[0] == 3.0
    assert np.all(path.values > 0)
    assert path.dt == 0.5


def test_gbm_without_noise_is_exponential():
    path = simulate_gbm(GbmSpec(s0=2.0, a=0.05, b=0.0, n_steps=10, dt=1.0), SeededRng(0))
    np.testing.assert_allclose(path.values, 2.0 * np.exp(0.05 * np.arange(11)))


def test_gbm_log_increment_moments():
    a, b, dt, n = 0.02, 0.2, 1.0, 100_000
    path = simulate_gbm(GbmSpec(s0=1.0, a=a, b=b, n_steps=n, dt=dt), SeededRng(2024))
    log_steps = np.diff(np.log(path.values))
    assert abs(log_steps.mean() - (a - b ** 2 / 2) * dt) < 4 * b * np.sqrt(dt / n)
    assert log_steps.var() == pytest.approx(b ** 2 * dt, rel=0.02)


def test_gbm_is_reproducible():
    spec = GbmSpec(s0=1.0, a=0.0, b=0.3, n_steps=100, dt=1.0)
    assert np.array_equal(simulate_gbm(spec, SeededRng(5)).values, simulate_gbm(spec, SeededRng(5)).values)
    assert not np.array_equal(simulate_gbm(spec, SeededRng(5)).values, simulate_gbm(spec, SeededRng(6)).values)


# ---------- linear SDE ----------

def test_linear_sde_without_noise_follows_drift():
    spec = LinearSdeSpec(x0=[1.0, -1.0], A=[0.5, 0.25], B=np.zeros((2, 2)), n_steps=20, dt=2.0)
    series = simulate_linear_sde(spec, SeededRng(0))
    assert series.feature_names == ("x1", "x2")
    assert len(series) == 21
    np.testing.assert_allclose(series.rows, [1.0, -1.0] + np.arange(21)[:, None] * [1.0, 0.5])


def test_linear_sde_increment_covariance():
    B = np.array([[0.2, 0.05], [0.05, 0.1]])
    spec = LinearSdeSpec(x0=[0.0, 0.0], A=[0.0, 0.0], B=B, n_steps=100_000, dt=0.5)
    series = simulate_linear_sde(spec, SeededRng(11))
    covariance = np.cov(np.diff(series.rows, axis=0).T)
    np.testing.assert_allclose(covariance, B @ B.T * 0.5, rtol=0.05)


def test_regime_switch_changes_the_drift():
    spec = LinearSdeSpec(
        x0=[0.0],
        A=[1.0],
        B=[[0.0]],
        n_steps=10,
        dt=1.0,
        regime_schedule=(RegimeOverride(start_index=4, A=[-2.0], B=[[0.0]]),),
    )
    steps = np.diff(simulate_linear_sde(spec, SeededRng(0)).rows[:, 0])
    np.testing.assert_allclose(steps, [1.0] * 4 + [-2.0] * 6)


def test_linear_spec_validation():
    with pytest.raises(ConfigError):
        LinearSdeSpec(x0=[0.0, 0.0], A=[0.0, 0.0], B=[[1.0, 0.5], [0.0, 1.0]], n_steps=5, dt=1.0)
    with pytest.raises(ConfigError):
        LinearSdeSpec(x0=[0.0], A=[0.0], B=[[-1.0]], n_steps=5, dt=1.0)
    with pytest.raises(DimensionMismatch):
        LinearSdeSpec(x0=[0.0, 0.0], A=[0.0], B=np.eye(2), n_steps=5, dt=1.0)
    with pytest.raises(DimensionMismatch):
        LinearSdeSpec(x0=[0.0], A=[0.0], B=[[1.0]], n_steps=5, dt=1.0, feature_names=("a", "b"))
    regime = RegimeOverride(start_index=3, A=[0.0], B=[[1.0]])
    with pytest.raises(ConfigError):
        LinearSdeSpec(x0=[0.0], A=[0.0], B=[[1.0]], n_steps=5, dt=1.0, regime_schedule=(regime, regime))


def test_engine_preset():
    spec = engine_preset(n_steps=2000)
    assert spec.feature_names == ENGINE_CHANNELS
    assert [r.start_index for r in spec.regime_schedule] == [1200, 1400]
    assert np.linalg.eigvalsh(spec.B).min() >= 0.0

    series = simulate_linear_sde(engine_preset(n_steps=300, switch_index=100), SeededRng(3))
    assert series.rows.shape == (301, 8)
    assert series.dt == 10.0
    assert np.all(np.isfinite(series.rows))


# ---------- spec files ----------

def test_gbm_spec_file(tmp_path):
    path = tmp_path / "gbm.env"
    path.write_text("s0=5\na=0.01\nb=0.2\nn_steps=300\ndt=1\n")
    spec = load_spec(str(path), "gbm")
    assert spec == GbmSpec(s0=5.0, a=0.01, b=0.2, n_steps=300, dt=1.0)


def test_linear_spec_file_with_regimes(tmp_path):
    path = tmp_path / "linear.env"
    path.write_text(
        "x0=1,2\n"
        "A=0.1,0.2\n"
        "B=0.2,0.05;0.05,0.1\n"
        "n_steps=100\n"
        "dt=0.5\n"
        "names=left,right\n"
        "regime.1.start=40\n"
        "regime.1.A=-0.1,0\n"
        "regime.1.B=0.3,0;0,0.3\n"
    )
    spec = load_spec(str(path), "linear")
    assert spec.feature_names == ("left", "right")
    np.testing.assert_array_equal(spec.B, [[0.2, 0.05], [0.05, 0.1]])
    (regime,) = spec.regime_schedule
    assert regime.start_index == 40
    np.testing.assert_array_equal(regime.A, [-0.1, 0.0])


def test_preset_without_spec_file():
    spec = load_spec(None, "linear", preset="engine")
    assert spec.feature_names == ENGINE_CHANNELS
    assert spec.n_steps == 2000


def test_spec_file_errors(tmp_path):
    with pytest.raises(InputNotFound):
        load_spec(str(tmp_path / "nope.env"), "gbm")
    with pytest.raises(ConfigError):
        parse_gbm_spec({"s0": "1", "a": "0", "b": "0.1", "n_steps": "10", "dt": "1", "mu": "3"})
    with pytest.raises(ConfigError):
        parse_gbm_spec({"s0": "1", "a": "0", "b": "0.1", "dt": "1"})

    bad = tmp_path / "ragged.env"
    bad.write_text("x0=1,2\nA=0,0\nB=1,0;0\nn_steps=10\ndt=1\n")
    with pytest.raises(ConfigError):
        load_spec(str(bad), "linear")
    with pytest.raises(ConfigError):
        load_spec(None, "linear", preset="turbine")

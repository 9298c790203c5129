import numpy as np
import pytest

from errors import ConfigError, EmptyInput, InputNotFound, MalformedCsv, NonFiniteValue, OutOfBounds, WindowTooSmall
from models import MultiSeries
from series import column, load_csv, window, write_csv


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_load_csv_reads_header_and_rows(tmp_path):
    path = _write(tmp_path, "LOT,RPM\n1.5,100\n2.5,101\n3.5,102\n")
    series = load_csv(path, dt=10.0)

    assert series.feature_names == ("LOT", "RPM")
    assert len(series) == 3
    assert series.dt == 10.0
    np.testing.assert_array_equal(series.rows[:, 1], [100.0, 101.0, 102.0])


def test_load_csv_drops_timestamp_column(tmp_path):
    path = _write(tmp_path, "time,a\n0,1\n10,2\n")
    series = load_csv(path, dt=10.0, has_timestamp_column=True)
    assert series.feature_names == ("a",)
    np.testing.assert_array_equal(series.rows[:, 0], [1.0, 2.0])


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(InputNotFound) as info:
        load_csv(str(tmp_path / "missing.csv"), dt=1.0)
    assert "missing.csv" in str(info.value)


def test_load_csv_empty_inputs(tmp_path):
    with pytest.raises(EmptyInput):
        load_csv(_write(tmp_path, "", "empty.csv"), dt=1.0)
    with pytest.raises(EmptyInput):
        load_csv(_write(tmp_path, "a,b\n", "header.csv"), dt=1.0)


def test_load_csv_rejects_ragged_rows(tmp_path):
    with pytest.raises(MalformedCsv):
        load_csv(_write(tmp_path, "a,b\n1,2\n3,4,5\n"), dt=1.0)


def test_load_csv_rejects_empty_and_text_cells(tmp_path):
    with pytest.raises(MalformedCsv):
        load_csv(_write(tmp_path, "a,b,c\n1,,3\n", "blank.csv"), dt=1.0)
    with pytest.raises(MalformedCsv) as info:
        load_csv(_write(tmp_path, "a,b\n1,2\n3,abc\n", "text.csv"), dt=1.0)
    assert info.value.row == 2
    assert info.value.col == 2


@pytest.mark.parametrize("token", ["nan", "inf", "-Infinity"])
def test_load_csv_reports_non_finite_position(tmp_path, token):
    path = _write(tmp_path, f"a,b\n1,2\n3,{token}\n")
    with pytest.raises(NonFiniteValue) as info:
        load_csv(path, dt=1.0)
    assert (info.value.row, info.value.col) == (2, 2)


def test_write_csv_keeps_every_bit(tmp_path):
    rows = np.random.default_rng(3).normal(size=(50, 3)) * 1e3
    series = MultiSeries(rows=rows, dt=0.5, feature_names=("a", "b", "c"))
    path = write_csv(series, str(tmp_path / "out" / "series.csv"))

    loaded = load_csv(path, dt=0.5)
    assert loaded.feature_names == series.feature_names
    assert np.array_equal(loaded.rows, series.rows)


def test_window_bounds():
    series = MultiSeries(rows=np.arange(20.0).reshape(10, 2), dt=1.0, feature_names=("a", "b"))
    view = window(series, end_index=6, width=4)
    assert view.width == 4
    np.testing.assert_array_equal(view.data[:, 0], [4.0, 6.0, 8.0, 10.0])

    with pytest.raises(OutOfBounds):
        window(series, end_index=3, width=4)
    with pytest.raises(OutOfBounds):
        window(series, end_index=11, width=4)
    with pytest.raises(WindowTooSmall):
        window(series, end_index=5, width=1)


def test_column_by_name_or_index():
    series = MultiSeries(rows=np.arange(6.0).reshape(3, 2), dt=1.0, feature_names=("a", "b"))
    assert column(series, "b").name == "b"
    np.testing.assert_array_equal(column(series, 0).values, [0.0, 2.0, 4.0])
    with pytest.raises(ConfigError):
        column(series, "zzz")
    with pytest.raises(ConfigError):
        column(series, 5)


def test_head_is_a_prefix():
    series = MultiSeries(rows=np.arange(12.0).reshape(6, 2), dt=1.0, feature_names=("a", "b"))
    head = series.head(4)
    assert len(head) == 4
    np.testing.assert_array_equal(head.rows, series.rows[:4])

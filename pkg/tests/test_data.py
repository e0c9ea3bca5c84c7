import itertools
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mtefree import ColumnMap, DataError, Sample, load_csv, split_cells
from mtefree.errors import ConfigError

COLS = ColumnMap(outcome="y", treatment="d", continuous=("x",), discrete=("z",))


def _write(tmp_path, lines, name="data.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def _rows(n):
    return ["y,d,x,z"] + [f"{0.1 * i},{i % 2},{i / 7:.4f},{i % 3}" for i in range(n)]


def test_load_ten_rows(tmp_path):
    s = load_csv(_write(tmp_path, _rows(10)), COLS)
    assert s.n == 10
    assert s.names == ("x", "z")
    assert s.x_disc[:, 0].tolist() == [i % 3 for i in range(10)]


def test_missing_outcome_dropped(tmp_path, caplog):
    lines = _rows(10)
    lines[4] = "," + lines[4].split(",", 1)[1]
    with caplog.at_level(logging.WARNING):
        s = load_csv(_write(tmp_path, lines), COLS)
    assert s.n == 9
    assert s.info["rows_dropped"] == 1
    assert "1 row dropped" in caplog.text


def test_non_binary_treatment(tmp_path):
    lines = _rows(10)
    lines[3] = "0.2,2,0.1,1"
    with pytest.raises(DataError, match="non-binary treatment"):
        load_csv(_write(tmp_path, lines), COLS)


def test_custom_treatment_labels(tmp_path):
    lines = ["y,d,x", "1,no,0.1", "2,yes,0.2", "3,yes,0.3"]
    cols = ColumnMap("y", "d", ("x",), (), ("no", "yes"))
    s = load_csv(_write(tmp_path, lines), cols)
    assert s.d.tolist() == [0, 1, 1]


@pytest.mark.parametrize(
    "lines, message",
    [
        (["y,d,x,z"], "no rows"),
        (["y,d,x", "1,0,0.1"], "column not found: z"),
        (["y,d,x,z", "a,0,0.1,1"], "non-numeric"),
    ],
)
def test_load_errors(tmp_path, lines, message):
    with pytest.raises(DataError, match=message):
        load_csv(_write(tmp_path, lines), COLS)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing file"):
        load_csv(tmp_path / "absent.csv", COLS)


def test_load_is_deterministic(tmp_path):
    path = _write(tmp_path, _rows(25))
    a, b = load_csv(path, COLS), load_csv(path, COLS)
    for attr in ("y", "d", "x_cont", "x_disc"):
        np.testing.assert_array_equal(getattr(a, attr), getattr(b, attr))


def test_string_discrete_codes(tmp_path):
    lines = ["y,d,x,z", "1,0,0.1,b", "2,1,0.2,a", "3,1,0.3,b"]
    s = load_csv(_write(tmp_path, lines), COLS)
    assert s.x_disc[:, 0].tolist() == [1, 0, 1]


def test_column_map_round_trip():
    assert ColumnMap.from_dict(COLS.to_dict()) == ColumnMap(**{**COLS.to_dict(), "continuous": ("x",),
                                                              "discrete": ("z",), "treatment_labels": (0, 1)})
    with pytest.raises(ConfigError, match="unknown"):
        ColumnMap.from_dict({"outcome": "y", "treatment": "d", "colour": 1})
    with pytest.raises(ConfigError, match="missing key"):
        ColumnMap.from_dict({"outcome": "y"})


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(y=[], d=[], x_cont=[], x_disc=[]), "empty"),
        (dict(y=[1.0, 2.0], d=[0], x_cont=[1.0, 2.0], x_disc=[]), "row counts"),
        (dict(y=[1.0, np.nan], d=[0, 1], x_cont=[1.0, 2.0], x_disc=[]), "non-finite"),
        (dict(y=[1.0, 2.0], d=[0, 1], x_cont=[1.0, 2.0], x_disc=[0.5, 1.0]), "integer"),
        (dict(y=[1.0, 2.0], d=[0, 1], x_cont=[1.0, 2.0], x_disc=[], names=("a", "b")), "names"),
    ],
)
def test_sample_validation(kwargs, message):
    with pytest.raises(DataError, match=message):
        Sample(**kwargs)


def test_sample_is_read_only():
    s = Sample([1.0, 2.0], [0, 1], [0.1, 0.2], [])
    with pytest.raises(ValueError):
        s.y[0] = 5.0


def test_no_discrete_single_cell():
    s = Sample(np.arange(5.0), [0, 1, 0, 1, 1], np.arange(5.0), [])
    cells = split_cells(s)
    assert len(cells) == 1
    assert cells[0].key == ()
    assert cells[0].rows.tolist() == list(range(5))


def test_two_cells_of_two():
    s = Sample(np.arange(4.0), [0, 1, 0, 1], np.arange(4.0), [0, 0, 1, 1])
    cells = split_cells(s)
    assert [c.size for c in cells] == [2, 2]
    assert [c.key for c in cells] == [(0,), (1,)]


def test_sixteen_cells_from_four_binaries():
    combos = np.array(list(itertools.product((0, 1), repeat=4)))
    x_disc = np.vstack([combos, combos[::-1]])
    n = x_disc.shape[0]
    s = Sample(np.zeros(n), np.arange(n) % 2, np.zeros((n, 0)), x_disc)
    cells = split_cells(s)
    assert len(cells) == 16
    assert sorted(c.key for c in cells) == [tuple(int(v) for v in r) for r in combos]
    assert all(c.size == 2 for c in cells)


@given(
    st.lists(st.tuples(st.integers(0, 3), st.integers(-2, 2)), min_size=1, max_size=60)
)
def test_cells_partition_rows(keys):
    x_disc = np.array(keys)
    n = len(keys)
    s = Sample(np.arange(n, dtype=float), np.arange(n) % 2, np.zeros((n, 0)), x_disc)
    cells = split_cells(s)
    rows = np.concatenate([c.rows for c in cells])
    assert sorted(rows.tolist()) == list(range(n))
    for c in cells:
        assert np.all(s.x_disc[c.rows] == np.array(c.key))
    rebuilt = s.take(np.sort(rows))
    np.testing.assert_array_equal(rebuilt.y, s.y)

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pegm.io import read_data_csv, read_theta_csv, to_jsonable, write_data_csv, write_theta_csv


@given(arrays(float, (4, 3), elements=st.integers(0, 50).map(float)))
def test_data_roundtrip(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("io") / "x.csv"
    write_data_csv(path, x)
    assert np.array_equal(read_data_csv(path), x)


@given(arrays(float, (3, 3), elements=st.floats(-1e6, 1e6)))
def test_theta_roundtrip_is_exact(tmp_path_factory, t):
    path = tmp_path_factory.mktemp("io") / "t.csv"
    write_theta_csv(path, t)
    assert np.array_equal(read_theta_csv(path), t)


def test_headerless_data_and_bad_theta(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,0\n0,1\n")
    assert read_data_csv(p).tolist() == [[1, 0], [0, 1]]
    p.write_text("1,0,2\n0,1,2\n")
    with pytest.raises(ValueError):
        read_theta_csv(p)
    p.write_text("")
    with pytest.raises(ValueError):
        read_data_csv(p)


def test_to_jsonable():
    out = to_jsonable({"a": np.arange(2), "b": np.float64(np.inf), "c": (np.int64(3), np.bool_(1))})
    assert out == {"a": [0, 1], "b": "inf", "c": [3, True]}

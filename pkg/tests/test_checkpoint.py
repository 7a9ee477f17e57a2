import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ordergan import checkpoint


@given(
    mats=st.lists(
        arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(allow_nan=False, width=64)),
        min_size=1,
        max_size=4,
    )
)
@settings(max_examples=50, deadline=None)
def test_round_trip_bit_exact(mats):
    params = {f"layer{i}.W": m for i, m in enumerate(mats)}
    back = checkpoint.loads(checkpoint.dumps(params))
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_layout():
    blob = checkpoint.dumps({"ab": np.array([[1.0, 2.0]])})
    assert blob[:4] == b"OGAN"
    assert struct.unpack_from("<H", blob, 4)[0] == checkpoint.VERSION
    assert struct.unpack_from("<H", blob, 6)[0] == 2
    assert blob[8:10] == b"ab"
    assert struct.unpack_from("<II", blob, 10) == (1, 2)
    assert struct.unpack_from("<2d", blob, 18) == (1.0, 2.0)
    assert len(blob) == 34


def test_bad_magic_and_truncation():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOPE\x01\x00")
    blob = checkpoint.dumps({"w": np.ones((3, 3))})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-5])


def test_file_round_trip(tmp_path):
    p = tmp_path / "m.ogan"
    params = {"x": np.arange(6.0).reshape(2, 3)}
    checkpoint.save(p, params)
    assert np.array_equal(checkpoint.load(p)["x"], params["x"])

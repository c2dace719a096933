import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdelab.rng import AUX_TAG, CounterStream, normal_block, philox4x32


def test_philox_known_answers():
    # Random123 known-answer vectors for Philox4x32-10
    zero = philox4x32([0, 0, 0, 0], [0, 0])[0]
    assert [f"{v:08x}" for v in zero] == ["6627e8d5", "e169c58d", "bc57ac4c", "9b00dbd8"]
    ones = philox4x32([0xFFFFFFFF] * 4, [0xFFFFFFFF] * 2)[0]
    assert [f"{v:08x}" for v in ones] == ["408f276d", "41c83b0e", "a20bc7c6", "6d5451fd"]
    pi = philox4x32([0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344], [0xA4093822, 0x299F31D0])[0]
    assert [f"{v:08x}" for v in pi] == ["d16cfe09", "94fdcceb", "5001e420", "24126ea1"]


@given(st.integers(0, 2**64 - 1), st.lists(st.integers(0, 10_000), min_size=1, max_size=6),
       st.integers(0, 1000), st.integers(0, 5), st.integers(1, 33))
def test_rows_do_not_depend_on_batch(seed, paths, step, channel, n):
    block = normal_block(seed, paths, step, channel, n)
    for i, p in enumerate(paths):
        np.testing.assert_array_equal(block[i], normal_block(seed, [p], step, channel, n)[0])


def test_stream_addresses_are_distinct():
    s = CounterStream(1, 0)
    a = s.normals(0, 0, 64)
    assert not np.array_equal(a, s.normals(1, 0, 64))
    assert not np.array_equal(a, s.normals(0, 1, 64))
    assert not np.array_equal(a, CounterStream(1, 1).normals(0, 0, 64))
    assert not np.array_equal(a, s.normals(0, 0, 64, tag=AUX_TAG))
    np.testing.assert_array_equal(a, CounterStream(1, 0).normals(0, 0, 64))


def test_normals_are_standard():
    z = normal_block(123, np.arange(200), 0, 0, 1000).ravel()
    n = z.size
    assert abs(z.mean()) < 4 / np.sqrt(n)
    assert abs(z.var() - 1) < 4 * np.sqrt(2 / n)
    assert abs(np.mean(z**4) - 3) < 4 * np.sqrt(96 / n)


def test_bad_addresses_are_rejected():
    with pytest.raises(ValueError):
        normal_block(-1, [0], 0, 0, 4)
    with pytest.raises(ValueError):
        normal_block(0, [0], 0, 70000, 4)

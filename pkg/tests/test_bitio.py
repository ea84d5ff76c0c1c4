import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import elias_gamma_bits
from stdcodec.bitio import BitReader, BitstreamTruncated, BitWriter, gamma_length


def test_uint_is_lsb_first():
    w = BitWriter()
    w.write_uint(0b110, 3)
    assert w.bits().tolist() == [0, 1, 1]
    assert w.to_bytes() == bytes([0b110])


def test_uint_overflow_rejected():
    with pytest.raises(ValueError):
        BitWriter().write_uint(8, 3)
    with pytest.raises(ValueError):
        BitWriter().write_uint(-1, 3)


@pytest.mark.parametrize("x", [1, 2, 3, 4, 5, 17, 1000, 2**20 + 3])
def test_gamma_matches_textbook_code(x):
    w = BitWriter()
    w.write_gamma(x)
    assert "".join(map(str, w.bits().tolist())) == elias_gamma_bits(x)
    assert gamma_length(x) == len(elias_gamma_bits(x))


def test_gamma_rejects_zero():
    with pytest.raises(ValueError):
        BitWriter().write_gamma(0)


@settings(max_examples=100, deadline=None)
@given(items=st.lists(st.one_of(
    st.tuples(st.just("u"), st.integers(1, 64).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 2**n - 1)))),
    st.tuples(st.just("g"), st.integers(1, 2**40)),
), max_size=30))
def test_mixed_stream_roundtrip(items):
    w = BitWriter()
    for kind, val in items:
        if kind == "u":
            w.write_uint(val[1], val[0])
        else:
            w.write_gamma(val)
    r = BitReader(w.to_bytes(), len(w))
    for kind, val in items:
        if kind == "u":
            assert r.read_uint(val[0]) == val[1]
        else:
            assert r.read_gamma() == val
    assert r.remaining == 0


def test_array_roundtrip(rng):
    vals = rng.integers(0, 2**13, 500).astype(np.uint64)
    w = BitWriter()
    w.write_uint_array(vals, 13)
    assert len(w) == 13 * 500
    np.testing.assert_array_equal(BitReader(w.to_bytes()).read_uint_array(500, 13), vals)


def test_reads_past_end_raise():
    w = BitWriter()
    w.write_uint(5, 4)
    r = BitReader(w.to_bytes(), 4)
    r.read_uint(3)
    with pytest.raises(BitstreamTruncated):
        r.read_uint(2)
    with pytest.raises(BitstreamTruncated):
        BitReader(b"\x00", 9)
    with pytest.raises(BitstreamTruncated):
        BitReader(b"\x00").read_gamma()

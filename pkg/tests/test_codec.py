import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fsmclab as f
from fsmclab.errors import DimensionMismatch, IndexOutOfRange, Overflow


@pytest.fixture(scope="module")
def ref_book(ref_problem):
    cap = f.capacity_finite(ref_problem)
    return f.build_codebook(cap.log2_rate_share, cap.powers, 24, 0.2)


def small_book(counts=(5, 3), powers=(4.0, 1.0)):
    # pick shares so floor(2^(K+1)(1-eps)share) hits the wanted counts exactly
    horizon, eps = 9, 0.0
    share = np.log2(np.asarray(counts) + 0.5) / (horizon + 1)
    cb = f.build_codebook(share, np.asarray(powers, float), horizon, eps)
    assert cb.counts == tuple(counts)
    return cb


def test_reference_book_frozen(ref_book):
    assert ref_book.counts == (957000, 2048)
    assert ref_book.total_count == 957000 * 2048
    assert ref_book.width_bits == 31
    assert ref_book.rate_bits_per_use() * 25 == pytest.approx(30.86815939914811, rel=1e-14)
    assert ref_book.log2_targets == pytest.approx([19.86815986, 11.00069022], abs=1e-7)
    # tighter backoff carries more codewords
    cap_share = ref_book.log2_targets / (25 * 0.8)
    bigger = f.build_codebook(cap_share, ref_book.amplitude ** 2, 24, 0.001)
    assert bigger.counts == (29421441, 13654)
    assert bigger.width_bits == 39


def test_codeword_geometry():
    cb = small_book()
    lo = f.encode(cb, (0, 0))
    hi = f.encode(cb, (4, 2))
    assert lo == pytest.approx(-cb.amplitude)
    assert hi == pytest.approx(cb.amplitude)
    step = f.encode(cb, (1, 1)) - lo
    assert step == pytest.approx(2.0 * cb.decision_radius)


def test_single_codeword_collapse():
    cb = f.build_codebook(np.array([0.0, 0.9]), np.array([2.0, 2.0]), 4, 0.0)
    assert cb.counts[0] == 1
    assert cb.decision_radius[0] == 0.0
    assert f.encode(cb, (0, cb.counts[1] - 1))[0] == 0.0
    assert f.decode(cb, np.array([123.0, 0.0]))[0] == 0


def test_decode_within_radius_and_ties():
    cb = small_book()
    word = f.encode(cb, (2, 1))
    d = cb.decision_radius
    assert f.decode(cb, word + 0.999 * d) == (2, 1)
    assert f.decode(cb, word - 0.999 * d) == (2, 1)
    # an estimate exactly on the midpoint belongs to the lower index
    assert f.decode(cb, word + d) == (2, 1)
    assert f.decode(cb, word - d) == (1, 0)
    # saturation outside the lattice
    assert f.decode(cb, np.array([99.0, -99.0])) == (4, 0)


def test_biased_decode():
    cb = small_book()
    bias = np.array([0.25, 0.5])
    word = f.encode(cb, (3, 2))
    assert f.decode(cb, word * bias, bias=bias) == (3, 2)
    with pytest.raises(ValueError):
        f.decode(cb, word, bias=np.array([0.0, 1.0]))


def test_batch_decode_matches_scalar():
    cb = small_book()
    rng = np.random.default_rng(7)
    est = rng.normal(scale=2.0, size=(64, 2))
    got = f.batch_decode(cb, est)
    for row, e in zip(got, est):
        assert tuple(row) == f.decode(cb, e)
    bias = np.array([0.7, 0.9])
    got_b = f.batch_decode(cb, est, bias=bias)
    for row, e in zip(got_b, est):
        assert tuple(row) == f.decode(cb, e, bias=bias)


def test_flat_indexing_little_endian_first_coordinate():
    cb = small_book(counts=(5, 3))
    assert f.message_to_flat(cb, (1, 0)) == 1
    assert f.message_to_flat(cb, (0, 1)) == 5
    assert f.message_to_flat(cb, (4, 2)) == cb.total_count - 1
    for flat in range(cb.total_count):
        assert f.message_to_flat(cb, f.flat_to_message(cb, flat)) == flat
    with pytest.raises(IndexOutOfRange):
        f.flat_to_message(cb, cb.total_count)
    with pytest.raises(IndexOutOfRange):
        f.message_to_flat(cb, (5, 0))


def test_matched_bits():
    cb = small_book(counts=(5, 3))  # total 15, width 4
    assert cb.width_bits == 4
    assert f.matched_bits(cb, (3, 1), (3, 1)) == 4
    # flats 0 and 1 differ in exactly one bit
    assert f.matched_bits(cb, (0, 0), (1, 0)) == 3
    sent = np.array([[0, 0], [3, 1], [4, 2]])
    dec = np.array([[1, 0], [3, 1], [0, 0]])
    want = [f.matched_bits(cb, tuple(a), tuple(b)) for a, b in zip(sent, dec)]
    assert f.batch_matched_bits(cb, sent, dec).tolist() == want


def test_overflow_guard():
    share = np.array([1.2])
    with pytest.raises(Overflow):
        f.build_codebook(share, np.array([1.0]), 59, 0.0)  # 60 * 1.2 = 72 bits
    cb = f.build_codebook(share, np.array([1.0]), 59, 0.0, log_only=True)
    assert cb.counts == (None,)
    assert cb.total_count is None
    assert cb.rate_bits_per_use() == pytest.approx(1.2)
    with pytest.raises(Overflow):
        f.encode(cb, (0,))
    with pytest.raises(Overflow):
        _ = cb.width_bits


def test_build_validation():
    with pytest.raises(DimensionMismatch):
        f.build_codebook(np.array([0.5, 0.5]), np.array([1.0]), 4, 0.1)
    with pytest.raises(IndexOutOfRange):
        f.build_codebook(np.array([0.5]), np.array([1.0]), 4, 1.0)
    with pytest.raises(IndexOutOfRange):
        f.build_codebook(np.array([0.5]), np.array([1.0]), -1, 0.1)


def test_random_message_deterministic():
    cb = small_book(counts=(957, 31))
    a = f.random_message(cb, np.random.default_rng(42))
    b = f.random_message(cb, np.random.default_rng(42))
    assert a == b
    assert all(0 <= i < M for i, M in zip(a, cb.counts))


@settings(max_examples=60, deadline=None)
@given(
    counts=st.lists(st.integers(1, 40), min_size=1, max_size=4),
    data=st.data(),
)
def test_roundtrip_property(counts, data):
    horizon = 7
    share = np.log2(np.asarray(counts) + 0.5) / (horizon + 1)
    powers = np.asarray(data.draw(st.lists(
        st.floats(0.1, 9.0), min_size=len(counts), max_size=len(counts))))
    cb = f.build_codebook(share, powers, horizon, 0.0)
    assert cb.counts == tuple(counts)
    msg = tuple(data.draw(st.integers(0, M - 1)) for M in counts)
    assert f.decode(cb, f.encode(cb, msg)) == msg
    assert f.flat_to_message(cb, f.message_to_flat(cb, msg)) == msg

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fsmclab as f
from fsmclab.errors import DuplicateGain, Periodic, Reducible, RowNotStochastic


def chain(gains, rows):
    return f.MarkovChain(gains=np.asarray(gains, dtype=float),
                         transition=np.asarray(rows, dtype=float))


def test_reference_chain_is_valid(two_state_chain):
    report = f.validate_chain(two_state_chain)
    assert report.ok and report.problems == []
    report.raise_if_invalid()  # no-op when ok


def test_row_sum_violation_detected():
    report = f.validate_chain(chain([1.0, 2.0], [[0.6, 0.5], [0.5, 0.5]]))
    assert not report.ok
    assert any(cls is RowNotStochastic for cls, _ in report.problems)
    with pytest.raises(RowNotStochastic):
        report.raise_if_invalid()


def test_negative_entry_detected():
    report = f.validate_chain(chain([1.0, 2.0], [[1.1, -0.1], [0.5, 0.5]]))
    assert any(cls is RowNotStochastic for cls, _ in report.problems)


def test_reducible_detected():
    report = f.validate_chain(chain([1.0, 2.0], [[1.0, 0.0], [0.0, 1.0]]))
    assert any(cls is Reducible for cls, _ in report.problems)


def test_one_way_reachability_is_reducible():
    # state 1 reaches 0 but not back
    report = f.validate_chain(chain([1.0, 2.0], [[1.0, 0.0], [0.5, 0.5]]))
    assert any(cls is Reducible for cls, _ in report.problems)


def test_periodic_detected():
    report = f.validate_chain(chain([1.0, 2.0], [[0.0, 1.0], [1.0, 0.0]]))
    assert any(cls is Periodic for cls, _ in report.problems)


def test_duplicate_gains_detected():
    report = f.validate_chain(chain([1.5, 1.5], [[0.5, 0.5], [0.5, 0.5]]))
    assert any(cls is DuplicateGain for cls, _ in report.problems)


def test_stationary_reference_value(two_state_chain):
    pi = f.stationary_distribution(two_state_chain)
    # by hand from the balance equation: .35*pi0 = .62*pi1 and pi0+pi1 = 1
    assert pi == pytest.approx([62 / 97, 35 / 97], abs=1e-14)
    assert pi @ two_state_chain.transition == pytest.approx(pi, abs=1e-14)


def test_sample_path_reproducible_and_exact_draw_budget(two_state_chain):
    rng1 = np.random.default_rng(42)
    rng2 = np.random.default_rng(42)
    path = f.sample_path(two_state_chain, 50, rng1)
    assert path.shape == (50,) and path.dtype == np.int64
    rng2.random(50)  # the path consumed exactly this many uniforms
    assert rng1.standard_normal() == rng2.standard_normal()


def test_sample_path_init_variants(two_state_chain):
    rng = np.random.default_rng(0)
    assert f.sample_path(two_state_chain, 5, rng, init=1)[0] == 1
    path = f.sample_path(two_state_chain, 5, rng, init=np.array([0.0, 1.0]))
    assert path[0] == 1
    assert f.sample_path(two_state_chain, 0, rng).size == 0


def test_sample_path_hits_stationary_frequencies(two_state_chain):
    rng = np.random.default_rng(7)
    path = f.sample_path(two_state_chain, 200_000, rng)
    freq = np.bincount(path, minlength=2) / path.size
    assert freq == pytest.approx([62 / 97, 35 / 97], abs=5e-3)


def test_count_statistics_small_path():
    stats = f.count_statistics(np.array([0, 1, 1, 0]), 2)
    assert stats.visits.tolist() == [2, 2]
    # previous state at k=0 is the pinned negative-time state 0
    assert stats.transitions.tolist() == [[1, 1], [1, 1]]
    assert stats.transitions.sum() == 4


def test_count_statistics_rejects_out_of_range():
    with pytest.raises(f.IndexOutOfRange):
        f.count_statistics(np.array([0, 2]), 2)


@st.composite
def ergodic_chains(draw):
    m = draw(st.integers(2, 4))
    rows = []
    for _ in range(m):
        vals = draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m))
        rows.append(np.array(vals) / np.sum(vals))
    gains = np.arange(1.0, m + 1.0) + draw(st.floats(0.0, 0.5))
    return f.MarkovChain(gains=gains, transition=np.array(rows))


@given(ergodic_chains())
@settings(max_examples=40, deadline=None)
def test_stationary_properties_random(chain_):
    report = f.validate_chain(chain_)
    assert report.ok
    pi = f.stationary_distribution(chain_)
    assert np.all(pi > 0)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert pi @ chain_.transition == pytest.approx(pi, abs=1e-10)


def test_checked_constructor():
    good = f.MarkovChain.checked([2.0, 1.0], [[0.65, 0.35], [0.62, 0.38]])
    assert good.m == 2
    with pytest.raises(DuplicateGain):
        f.MarkovChain.checked([1.0, 1.0], [[0.5, 0.5], [0.5, 0.5]])

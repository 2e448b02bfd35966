import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import fsmclab as f
from fsmclab.errors import Infeasible, TooManyStates, WrongDelay


def test_from_process_reach_shapes(two_state):
    P = two_state.chain.transition
    assert np.array_equal(f.AllocProblem.from_process(two_state, 3.0, 0).reach, np.eye(2))
    assert np.allclose(f.AllocProblem.from_process(two_state, 3.0, 1).reach, P)
    assert np.allclose(f.AllocProblem.from_process(two_state, 3.0, 3).reach,
                       np.linalg.matrix_power(P, 3))
    iid = f.FiniteIid(gains=np.array([1.0, 2.0]), pmf=np.array([0.3, 0.7]))
    assert np.allclose(f.AllocProblem.from_process(iid, 3.0, 2).reach,
                       np.tile([0.3, 0.7], (2, 1)))
    one = f.ConstantGain(gain=2.0)
    assert np.array_equal(f.AllocProblem.from_process(one, 3.0, 5).reach, np.eye(1))
    with pytest.raises(WrongDelay):
        f.AllocProblem.from_process(two_state, 3.0, -1)


def test_reference_solution_frozen_values(ref_problem):
    alloc = f.solve_allocation(ref_problem)
    # frozen from an independent dense-grid solve of the same concave program
    assert alloc.powers == pytest.approx([3.00752998, 2.98666118], abs=1e-7)
    assert alloc.dual == pytest.approx(0.2868732791896501, abs=1e-10)
    assert alloc.kkt_residual < 1e-10
    assert alloc.spent == pytest.approx(3.0, abs=1e-12)
    assert alloc.method == "kkt"


def test_solver_matches_grid_oracle(ref_problem):
    alloc = f.solve_allocation(ref_problem)
    # the oracle's best point sits within about one grid step of the optimum,
    # so the step must be well under the agreement tolerance
    grid = f.grid_oracle(ref_problem, resolution=1e-8)
    assert np.max(np.abs(alloc.powers - grid.powers)) < 1e-6 * max(1.0, ref_problem.budget)
    # the KKT point can only beat a finite grid
    assert alloc.objective_bits >= grid.objective_bits - 1e-12


def test_dead_state_gets_nothing(two_state_chain):
    proc = f.FiniteMarkov(chain=f.MarkovChain(
        gains=np.array([2.0, 0.0]), transition=two_state_chain.transition))
    prob = f.AllocProblem.from_process(proc, 3.0, 0)
    alloc = f.solve_allocation(prob)
    assert alloc.powers[1] == 0.0
    assert alloc.powers[0] == pytest.approx(3.0 / (62 / 97), rel=1e-12)
    assert alloc.spent == pytest.approx(3.0, abs=1e-12)


def test_all_dead_and_zero_budget(two_state_chain):
    dead = f.FiniteMarkov(chain=f.MarkovChain(
        gains=np.array([0.0, -0.0]) + np.array([0.0, 1e-300]),
        transition=two_state_chain.transition))
    alloc = f.solve_allocation(f.AllocProblem.from_process(dead, 3.0, 1))
    assert np.all(alloc.powers == 0.0) and alloc.objective_bits == 0.0
    prob = f.AllocProblem.from_process(f.FiniteMarkov(chain=two_state_chain), 0.0, 1)
    assert np.all(f.solve_allocation(prob).powers == 0.0)


def test_negative_budget_rejected(two_state):
    with pytest.raises(Infeasible):
        f.solve_allocation(f.AllocProblem.from_process(two_state, -1.0, 1))


def test_iid_delayed_allocation_is_uniform():
    iid = f.FiniteIid(gains=np.array([0.5, 1.0, 2.0]), pmf=np.array([0.2, 0.3, 0.5]))
    alloc = f.solve_allocation(f.AllocProblem.from_process(iid, 2.0, 1))
    # delayed knowledge of an iid draw says nothing: every state sees the same
    # marginal, so the water level equalizes all powers at the budget
    assert alloc.powers == pytest.approx([2.0, 2.0, 2.0], abs=1e-9)


def test_grid_oracle_guards():
    gains = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    prob = f.AllocProblem(gains=gains, weights=np.full(5, 0.2), reach=np.eye(5),
                          budget=1.0, delay=0)
    with pytest.raises(TooManyStates):
        f.grid_oracle(prob)


@st.composite
def alloc_problems(draw):
    m = draw(st.integers(1, 3))
    gains = np.array(sorted(draw(st.lists(
        st.floats(0.1, 4.0), min_size=m, max_size=m, unique=True))))
    w = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m)))
    w = w / w.sum()
    budget = draw(st.floats(0.1, 10.0))
    delay = draw(st.integers(0, 2))
    rows = []
    for _ in range(m):
        r = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=m, max_size=m)))
        rows.append(r / r.sum())
    reach = np.eye(m) if delay == 0 else np.array(rows)
    return f.AllocProblem(gains=gains, weights=w, reach=reach, budget=budget, delay=delay)


@given(alloc_problems())
@settings(max_examples=40, deadline=None)
def test_solver_kkt_properties_random(prob):
    alloc = f.solve_allocation(prob)
    assert np.all(alloc.powers >= 0.0)
    assert alloc.kkt_residual < 1e-10
    assert alloc.spent == pytest.approx(prob.budget, rel=1e-9)
    # objective equals the capacity evaluated at those powers
    cap = f.capacity_finite(prob, alloc)
    assert cap.bits_per_use == pytest.approx(alloc.objective_bits, abs=1e-12)


@given(alloc_problems())
@settings(max_examples=15, deadline=None)
def test_solver_beats_grid_random(prob):
    alloc = f.solve_allocation(prob)
    grid = f.grid_oracle(prob, resolution=1e-3)
    assert alloc.objective_bits >= grid.objective_bits - 1e-12
    assert np.max(np.abs(alloc.powers - grid.powers)) < 2e-3 * max(1.0, prob.budget)

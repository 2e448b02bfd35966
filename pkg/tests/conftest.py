import numpy as np
import pytest

import fsmclab as f

BUDGET = 3.0


@pytest.fixture(scope="session")
def two_state_chain():
    return f.MarkovChain(gains=np.array([2.0, 1.0]),
                         transition=np.array([[0.65, 0.35], [0.62, 0.38]]))


@pytest.fixture(scope="session")
def two_state(two_state_chain):
    return f.FiniteMarkov(chain=two_state_chain)


@pytest.fixture(scope="session")
def ref_cfg():
    return f.reference_example_config()


@pytest.fixture(scope="session")
def ref_problem(two_state):
    return f.AllocProblem.from_process(two_state, BUDGET, 1)

import numpy as np
import pytest

from mfslq.corpus import corpus_initial, corpus_problem
from mfslq.problem_model import InitialPair, build_problem


@pytest.fixture
def scalar_plain():
    return corpus_problem("scalar_plain", 1000)


@pytest.fixture
def mf2():
    return corpus_problem("meanfield_2d", 200)


@pytest.fixture
def mf1():
    return corpus_problem("scalar_meanfield", 200)


def dx_equals_x_dw(N=100):
    """dX = X dW on [0, 1]."""
    return build_problem(1, 1, 1.0, N, dict(C=1.0, R=1.0), {})


def start(name, gaussian=False, t=0):
    return InitialPair(t, corpus_initial(name, gaussian))


def random_spd(rng, n, lo=0.5):
    M = rng.standard_normal((n, n))
    return M @ M.T / n + lo * np.eye(n)

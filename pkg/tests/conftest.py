import numpy as np
import pytest

from mcbridge.discrete import make_joint
from mcbridge.predictors import OraclePredictor


@pytest.fixture(scope="session")
def copy3x2():
    return make_joint("copy", 3, 2)


@pytest.fixture(scope="session")
def uniform3x2():
    return make_joint("uniform", 3, 2)


@pytest.fixture(scope="session")
def product3x2():
    marg = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
    return make_joint("product", 3, 2, marginals=marg)


@pytest.fixture(scope="session")
def dirichlet3x2():
    return make_joint("dirichlet", 3, 2, seed=7, alpha=0.8)


@pytest.fixture(scope="session")
def copy_oracle(copy3x2):
    return OraclePredictor(copy3x2)


@pytest.fixture(scope="session")
def uniform_oracle(uniform3x2):
    return OraclePredictor(uniform3x2)

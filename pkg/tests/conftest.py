import numpy as np
import pytest

from ergolab.inducing import build_partition
from ergolab.maps import builtin_map
from ergolab.transfer import conjugated_operator, invariant_density, ulam_matrix


@pytest.fixture(scope="session")
def ulam_map():
    return builtin_map("ulam")


@pytest.fixture(scope="session")
def doubling_map():
    return builtin_map("doubling")


@pytest.fixture(scope="session")
def small_scheme(ulam_map):
    """Fast quadratic-map scheme for unit tests."""
    return build_partition(ulam_map, delta=0.05, q0=5, tau_max=20)


@pytest.fixture(scope="session")
def full_scheme(ulam_map):
    """Production-scale quadratic-map scheme (delta=0.05, q0=10, tau_max=60)."""
    return build_partition(ulam_map, delta=0.05, q0=10, tau_max=60)


@pytest.fixture(scope="session")
def full_scheme_operator(full_scheme):
    """Induced-map grid operator, its invariant density and the
    invariant-measure operator P for the production-scale scheme."""
    op = ulam_matrix(full_scheme, 256)
    rep = invariant_density(op)
    P = conjugated_operator(op, rep.density)
    return op, rep, P


@pytest.fixture(scope="session")
def doubling_scheme(doubling_map):
    return build_partition(doubling_map, delta=0.05, q0=6, tau_max=30)


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    """L1 distance between two grid densities on [0,1]."""
    a = np.asarray(a, dtype=float)
    return float(np.abs(a - b).sum() / a.size)

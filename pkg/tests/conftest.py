import os
import sys

import numpy as np
import pytest

# Flat layout: modules live at the repository root
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from info_matrix import problem_from_matrices  # noqa: E402
from models import ScenarioConfig  # noqa: E402
from scenario import generate_scenario  # noqa: E402


def random_spd(rng, n, floor=0.5):
    X = rng.normal(size=(n, n))
    return X @ X.T / n + floor * np.eye(n)


def random_problem(rng, n=12, N=6, rank=2, scale=1.0):
    """Random PD base plus N PSD increments of the given rank."""
    omega0 = random_spd(rng, n)
    deltas = []
    for _ in range(N):
        G = scale * rng.normal(size=(rank, n))
        deltas.append(G.T @ G)
    return problem_from_matrices(omega0, deltas)


def diagonal_problem():
    """Omega_0 = I3 with increments on distinct axes; ids 1, 2, 3 carry traces 1, 2, 3."""
    deltas = [np.diag([1.0, 0.0, 0.0]), np.diag([0.0, 2.0, 0.0]), np.diag([0.0, 0.0, 3.0])]
    return problem_from_matrices(np.eye(3), deltas, ids=[1, 2, 3])


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_scenario():
    return generate_scenario(7, ScenarioConfig(num_landmarks=12, T=5))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runtime-ordering and large statistical checks")

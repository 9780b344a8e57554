import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from src.core.radial_core import RadialFunction, build_grid  # noqa: E402
from src.core.tf_solver import ModelConstants, tf_atomic_solve  # noqa: E402


@pytest.fixture(scope="session")
def tf_z1():
    return tf_atomic_solve(ModelConstants(Z=1.0))


@pytest.fixture(scope="session")
def tf_z5():
    return tf_atomic_solve(ModelConstants(Z=5.0))


@pytest.fixture(scope="session")
def ball_grid():
    """Grid with knots at 0.5 and at the unit sphere."""
    return build_grid(1e-6, 2.0, 2000, knots=[0.5, 1.0])


@pytest.fixture(scope="session")
def unit_ball(ball_grid):
    """Uniform density of total mass 1 on the unit ball."""
    vals = np.where(ball_grid.nodes <= 1.0, 3.0 / (4.0 * np.pi), 0.0)
    return RadialFunction(ball_grid, vals, is_density=True)


@pytest.fixture(scope="session")
def exp_grid():
    return build_grid(1e-6, 60.0, 4000)


@pytest.fixture(scope="session")
def exp_density(exp_grid):
    """ρ(r) = e^{-r}/(8π), total mass 1."""
    return RadialFunction(exp_grid, np.exp(-exp_grid.nodes) / (8.0 * np.pi), is_density=True)

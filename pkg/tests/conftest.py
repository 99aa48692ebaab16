import numpy as np
import pytest

from mgtlab.energy import energy_series
from mgtlab.kernel import MgtParams, make_exponential, make_none, make_polynomial
from mgtlab.simulator import ModalOperator, run

STANDARD = MgtParams(tau=1.0, alpha=2.0, b=1.0, c2=1.0)
SPECTRUM = np.array([1.0, 4.0, 9.0])


def standard_run(dt, workers=1, T=50.0):
    kernel, _ = make_exponential(0.1, 1.0)
    return run(STANDARD, kernel, ModalOperator(SPECTRUM), [(1.0, 0.0, 0.0)], T, dt,
               workers=workers)


@pytest.fixture(scope="session")
def standard_traj():
    return standard_run(1e-3)


@pytest.fixture(scope="session")
def standard_series(standard_traj):
    return energy_series(standard_traj)


@pytest.fixture(scope="session")
def standard_series_half():
    return energy_series(standard_run(5e-4))


@pytest.fixture(scope="session")
def polynomial_case():
    kernel, dom = make_polynomial(0.1, 2.0)
    traj = run(STANDARD, kernel, ModalOperator(SPECTRUM), [(1.0, 0.0, 0.0)], 100.0, 0.01)
    return traj, energy_series(traj), kernel, dom


@pytest.fixture(scope="session")
def conservation_traj():
    params = MgtParams(1.0, 1.0, 1.0, 1.0)
    return run(params, make_none(), ModalOperator(np.array([1.0])), [(1.0, 0.0, 0.0)], 50.0, 1e-3)


@pytest.fixture
def short_memory_traj():
    """A few seconds of the standard scenario at a coarse step, for cheap checks."""
    kernel, _ = make_exponential(0.1, 1.0)
    ic = [(1.0, 0.0, 0.0), (0.2, -0.1, 0.3), (0.0, 0.05, 0.0)]
    return run(STANDARD, kernel, ModalOperator(SPECTRUM), ic, 3.0, 0.01)


import time

import numpy as np
import pytest

from nettrack.harness import genie_run
from nettrack.motion import model_for
from nettrack.scenario import table1


@pytest.fixture(scope="session")
def scenario():
    return table1()


@pytest.fixture(scope="session")
def model(scenario):
    return model_for(scenario)


@pytest.fixture(scope="session")
def genie(scenario):
    """Optimized beams and PCRB along the noise-free Table I trajectory."""
    t0 = time.perf_counter()
    run = genie_run(scenario, "optimized")
    run.elapsed = time.perf_counter() - t0
    return run


def random_psd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    R = A @ A.conj().T
    return scale * R / np.trace(R).real


def random_spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)

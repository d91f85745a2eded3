import math

import pytest

from cyclic_thermo import FormFactor, ModelSpec, PeriodicEnvelope, RadialProfile, ReservoirSpec
from cyclic_thermo.discretization import discretize


def two_bath_model(g=0.7, tau=2.0, betas=(0.5, 2.0), envelope=None, power=2, scale=4.0,
                   amplitude=1.0, omega0=2.0, pop=0.5, mus=(0.0, 0.0)):
    env = envelope or PeriodicEnvelope.cosine(tau, amplitude=0.5, offset=1.0)
    prof = RadialProfile("power_gaussian", power, scale, amplitude)
    res = tuple(ReservoirSpec(b, mu, FormFactor(env, prof)) for b, mu in zip(betas, mus))
    return ModelSpec(omega0, g, res, pop)


@pytest.fixture
def small_model():
    return two_bath_model()


@pytest.fixture
def tiny_dm():
    # 1 + 2 x 4 modes: small enough for the many-body oracle
    return discretize(two_bath_model(tau=2.0), M=4, u_max=8.0)


@pytest.fixture
def single_static_model():
    env = PeriodicEnvelope.constant(2 * math.pi / 3.0)
    prof = RadialProfile("power_gaussian", 2, 3.0, 1.0)
    return ModelSpec(1.0, 0.1, (ReservoirSpec(1.3, 0.0, FormFactor(env, prof)),))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

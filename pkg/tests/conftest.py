"""Shared fixtures: one reference system built once per session.

Everything downstream of `reference_params` is deterministic, so the
session scope is safe and saves each test file a few hundred ms of
Riccati solves.
"""

import numpy as np
import pytest

from levikal import lqg, params, statespace

TWO_PI = 2.0 * np.pi
F_S = 31.25e6


@pytest.fixture(scope="session")
def pars():
    return params.reference_params()


@pytest.fixture(scope="session")
def budget(pars):
    return params.decoherence_rates(pars)


@pytest.fixture(scope="session")
def cont(pars, budget):
    return statespace.build_continuous(budget, pars.omega_z, budget.gamma_th)


@pytest.fixture(scope="session")
def disc(cont):
    return statespace.discretize(cont, 1.0 / F_S)


@pytest.fixture(scope="session")
def gains_rated(disc):
    """The paper's rated operating point, g_fb = 2pi * 110 kHz."""
    return lqg.synthesize_gains(disc, TWO_PI * 110e3)


@pytest.fixture(scope="session")
def gains_soft(disc):
    """A gentle loop (2pi * 10 kHz) where innovation structure is visible."""
    return lqg.synthesize_gains(disc, TWO_PI * 10e3)


@pytest.fixture(scope="session")
def disc_mistuned(budget, pars):
    """Plant whose trap frequency sits 5% above the filter's model."""
    cont_m = statespace.build_continuous(budget, 1.05 * pars.omega_z, budget.gamma_th)
    return statespace.discretize(cont_m, 1.0 / F_S)

"""Quantum-limited feedback cooling toolkit for levitated nanoparticles.

Modules
-------
params      noise budget, decoherence rates, gas damping
optics      collection efficiencies and fiber-coupling overlap
statespace  continuous and discretized stochastic oscillator models
lqg         Riccati solvers, Kalman and LQR gains, closed-loop covariance
filtering   streaming state estimation, control, fixed-point emulation
sim         exact-discretization Monte-Carlo trajectories and protocols
analysis    spectra, whiteness tests, sideband thermometry, calibrations
cli         scenario runner (``levikal <scenario> --config ...``)
"""

__version__ = "0.1.0"

from . import analysis, filtering, lqg, optics, params, sim, statespace
from .errors import (
    ConfigError,
    FitError,
    InvalidParameter,
    LevikalError,
    ProtocolError,
    SolverError,
    StabilityError,
)

__all__ = [
    "__version__",
    "analysis",
    "filtering",
    "lqg",
    "optics",
    "params",
    "sim",
    "statespace",
    "ConfigError",
    "FitError",
    "InvalidParameter",
    "LevikalError",
    "ProtocolError",
    "SolverError",
    "StabilityError",
]

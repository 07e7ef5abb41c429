"""Dipole-scattering collection efficiencies and detection-mode overlap.

A particle trapped at a tweezer focus radiates a dipole pattern whose angular
distribution carries position information weighted by the interference with
the diverging trapping field. Two efficiencies summarize a finite collection
cone: the fraction of scattered photons collected (``eta_photon``) and the
fraction of position information collected (``eta_info``). The latter weights
the dipole pattern by ``(a - cos(theta))**2`` where ``a`` is the phase
asymmetry parameter set by the Gouy phase of the focused beam; its full-sphere
integral is ``a**2 + 2/5``, the same factor that scales the measurement
backaction of the scattered light.

All integrals are evaluated with an adaptive Gauss-Legendre rule on the polar
angle; the azimuthal integral of the dipole pattern is analytic and folded in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import j1

from .constants import HBAR, SPEED_OF_LIGHT
from .errors import InvalidParameter, SolverError

__all__ = [
    "CollectionResult",
    "collection_efficiencies",
    "info_factor",
    "imprecision_psd",
    "paraxial_overlap",
    "radial_mode_overlap",
]


@dataclass(frozen=True)
class CollectionResult:
    """Collection efficiencies for a backward cone of numerical aperture NA.

    Attributes
    ----------
    eta_info : float
        Fraction of the radiated position information inside the cone.
    eta_photon : float
        Fraction of the radiated power inside the cone.
    info_factor : float
        Full-sphere information weight ``a**2 + 2/5``; multiplies the photon
        recoil backaction and sets the ideal imprecision-backaction product.
    """

    eta_info: float
    eta_photon: float
    info_factor: float


# ---------------------------------------------------------------------------
# quadrature


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gl_panel(f: Callable[[np.ndarray], np.ndarray], a: float, b: float) -> float:
    h = 0.5 * (b - a)
    x = a + h * (_GL_NODES + 1.0)
    return h * float(np.dot(_GL_WEIGHTS, f(x)))


def adaptive_gauss_legendre(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-10,
    max_depth: int = 40,
) -> float:
    """Integrate ``f`` over ``[a, b]`` by bisecting 20-point Gauss panels.

    A panel is accepted when its value agrees with the sum of its halves to
    ``tol`` (relative to the running total scale). Refinement past
    ``max_depth`` raises :class:`SolverError`.
    """

    scale = max(abs(_gl_panel(f, a, b)), 1.0)
    total = 0.0
    stack = [(a, b, _gl_panel(f, a, b), 0)]
    while stack:
        lo, hi, whole, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _gl_panel(f, lo, mid)
        right = _gl_panel(f, mid, hi)
        if abs(left + right - whole) <= tol * scale or hi - lo < 1e-14 * (b - a):
            total += left + right
            continue
        if depth >= max_depth:
            raise SolverError(
                f"quadrature failed to converge on [{lo}, {hi}] at depth {depth}"
            )
        stack.append((lo, mid, left, depth + 1))
        stack.append((mid, hi, right, depth + 1))
    return total


# ---------------------------------------------------------------------------
# angular weights (u = cos(theta), azimuthal integral already applied)


def _photon_weight(u: np.ndarray) -> np.ndarray:
    """Azimuthally integrated dipole power density in u; integrates to 1."""
    return 0.375 * (1.0 + u * u)


def _info_weight(u: np.ndarray, gouy_a: float) -> np.ndarray:
    """Position-information density in u; integrates to ``gouy_a**2 + 2/5``."""
    d = gouy_a - u
    return 0.375 * (1.0 + u * u) * d * d


def info_factor(gouy_a: float) -> float:
    """Full-sphere information weight ``a**2 + 2/5``."""
    return gouy_a * gouy_a + 0.4


def collection_efficiencies(na: float, gouy_a: float) -> CollectionResult:
    """Photon and information collection of a backward cone.

    Parameters
    ----------
    na : float
        Numerical aperture of the collection optic, in (0, 1]. The cone spans
        polar angles ``[pi - arcsin(na), pi]`` about the optical axis.
    gouy_a : float
        Phase-asymmetry parameter of the focused illumination.
    """

    if not 0.0 <= na <= 1.0:
        raise InvalidParameter(f"na must lie in [0, 1], got {na}")
    if gouy_a < 0.0:
        raise InvalidParameter(f"gouy_a must be non-negative, got {gouy_a}")
    fac = info_factor(gouy_a)
    if na == 0.0:
        return CollectionResult(eta_info=0.0, eta_photon=0.0, info_factor=fac)
    u_hi = -math.sqrt(max(0.0, 1.0 - na * na))
    photon = adaptive_gauss_legendre(_photon_weight, -1.0, u_hi)
    info = adaptive_gauss_legendre(lambda u: _info_weight(u, gouy_a), -1.0, u_hi)
    return CollectionResult(
        eta_info=info / fac, eta_photon=photon, info_factor=fac
    )


def imprecision_psd(
    p_scatt: float,
    gouy_a: float,
    wavelength: float,
    eta_detection: float = 1.0,
) -> float:
    """One-sided position imprecision density of the scattered-light readout.

    For a perfect measurement the product with the recoil force density is
    pinned at ``hbar**2``; finite detection efficiency scales the imprecision
    up as ``1/eta_detection``. Units: m^2/Hz.
    """

    if p_scatt <= 0.0:
        raise InvalidParameter(f"p_scatt must be positive, got {p_scatt}")
    if wavelength <= 0.0:
        raise InvalidParameter(f"wavelength must be positive, got {wavelength}")
    if not 0.0 < eta_detection <= 1.0:
        raise InvalidParameter(
            f"eta_detection must lie in (0, 1], got {eta_detection}"
        )
    k = 2.0 * math.pi / wavelength
    ideal = HBAR * SPEED_OF_LIGHT / (2.0 * info_factor(gouy_a) * k * p_scatt)
    return ideal / eta_detection


# ---------------------------------------------------------------------------
# fiber-coupling overlap


def radial_mode_overlap(
    f1: Callable[[np.ndarray], np.ndarray],
    f2: Callable[[np.ndarray], np.ndarray],
    r_max: float,
    tol: float = 1e-10,
) -> float:
    """Power overlap of two real radial field profiles on ``[0, r_max]``.

    ``|<f1|f2>|^2 / (<f1|f1><f2|f2>)`` with the radial measure ``r dr``. Both
    profiles must be negligible beyond ``r_max``.
    """

    num = adaptive_gauss_legendre(lambda r: f1(r) * f2(r) * r, 0.0, r_max, tol)
    n1 = adaptive_gauss_legendre(lambda r: f1(r) ** 2 * r, 0.0, r_max, tol)
    n2 = adaptive_gauss_legendre(lambda r: f2(r) ** 2 * r, 0.0, r_max, tol)
    if n1 <= 0.0 or n2 <= 0.0:
        raise InvalidParameter("mode profiles must carry non-zero power")
    return num * num / (n1 * n2)


def paraxial_overlap(
    magnification: float,
    fiber_mode_waist: float,
    na: float,
    wavelength: float,
) -> float:
    """Coupling of the imaged scatter mode into a Gaussian fiber mode.

    The collection objective turns the cone of half-angle ``arcsin(na)`` into
    an Airy-like image field ``2 J1(x)/x`` at the fiber facet, with radial
    scale set by the magnification; the fiber mode is a Gaussian of waist
    ``fiber_mode_waist``. Apodization of the pupil is neglected (paraxial
    image space), which reduces the overlap to a single dimensionless shape
    parameter ``s = k * arcsin(na) * fiber_mode_waist / magnification``.
    """

    if magnification <= 0.0:
        raise InvalidParameter(f"magnification must be positive, got {magnification}")
    if fiber_mode_waist <= 0.0:
        raise InvalidParameter(
            f"fiber_mode_waist must be positive, got {fiber_mode_waist}"
        )
    if not 0.0 < na <= 1.0:
        raise InvalidParameter(f"na must lie in (0, 1], got {na}")
    if wavelength <= 0.0:
        raise InvalidParameter(f"wavelength must be positive, got {wavelength}")

    k = 2.0 * math.pi / wavelength
    s = k * math.asin(na) * fiber_mode_waist / magnification
    # eta(s) = 8 * (int_0^inf J1(x) exp(-x^2/s^2) dx)^2 / s^2, the closed
    # reduction of the facet overlap integral. The Gaussian factor truncates
    # the oscillatory Bessel tail, so a finite upper limit suffices.
    x_max = 8.0 * s
    integral = adaptive_gauss_legendre(
        lambda x: j1(x) * np.exp(-((x / s) ** 2)), 0.0, x_max
    )
    return 8.0 * integral * integral / (s * s)

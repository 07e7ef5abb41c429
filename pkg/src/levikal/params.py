"""Experiment parameters and the quantum-measurement noise budget.

The budget splits the force noise acting on the trapped particle into photon
recoil (backaction) and residual-gas collisions, and converts one-sided
densities into the decoherence rates that fix every achievable cooling limit:

- ``gamma_meas = z_zpf**2 / (2 S_z_imp)``, the rate at which the detector
  resolves the zero-point motion,
- ``gamma_ba = S_F_ba / (8 p_zpf**2)`` and ``gamma_th = S_F_th / (8 p_zpf**2)``,
  the backaction and thermal decoherence rates,
- ``eta = gamma_meas / (gamma_ba + gamma_th)``, the total measurement
  efficiency, which bounds the conditional occupation from below by
  ``1 / (2 sqrt(eta)) - 1/2``.

Gas damping follows the Beresnev interpolation between the Stokes and
free-molecular regimes. The mean free path convention is chosen so that the
interpolation tends exactly to the free-molecular expression
``gamma = (64/3) r**2 P / (m vbar)`` at large Knudsen number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

from . import optics
from .constants import BOLTZMANN, GAS_CONSTANT, HBAR, SPEED_OF_LIGHT
from .errors import InvalidParameter

__all__ = [
    "EfficiencyEntry",
    "ExperimentParams",
    "NoiseBudget",
    "reference_params",
    "backaction_force_psd",
    "thermal_force_psd",
    "gas_damping_rate",
    "knudsen_number",
    "decoherence_rates",
    "occupation_bounds",
    "bath_occupancy",
    "radiation_damping_rate",
]

# Beresnev slip coefficient for diffuse reflection and the rational correction
# of the transition regime.
_SLIP = 0.619
_CK = (0.31, 1.152, 0.785)
# Mean-free-path prefactor 3*pi*slip/8, fixed by requiring the interpolation
# to reproduce the free-molecular drag exactly in the ballistic limit.
_MFP_COEF = 3.0 * math.pi * _SLIP / 8.0


@dataclass(frozen=True)
class EfficiencyEntry:
    """One row of the detection-efficiency table.

    ``eta_photon`` is None for stages that lose information but no photons
    (dark noise, digitization). ``stage`` separates detection losses, which
    multiply into ``eta_d``, from the environmental share of the force noise.
    """

    name: str
    eta_photon: float | None
    eta_info: float
    stage: Literal["detection", "environment"] = "detection"

    def __post_init__(self) -> None:
        if not 0.0 < self.eta_info <= 1.0:
            raise InvalidParameter(
                f"detection_efficiencies[{self.name}].eta_info must lie in (0, 1], "
                f"got {self.eta_info}"
            )
        if self.eta_photon is not None and not 0.0 < self.eta_photon <= 1.0:
            raise InvalidParameter(
                f"detection_efficiencies[{self.name}].eta_photon must lie in (0, 1], "
                f"got {self.eta_photon}"
            )


_POSITIVE_FIELDS = (
    "radius",
    "mass",
    "omega_z",
    "wavelength",
    "p_scatt",
    "temperature",
    "gas_molar_mass",
    "gas_viscosity",
    "s_z_imp",
)


@dataclass(frozen=True)
class ExperimentParams:
    """Static description of one levitated-particle measurement setup.

    Pressure is in pascal, all other quantities in SI base units. The
    imprecision density ``s_z_imp`` is the as-detected (efficiency-degraded)
    one-sided density in m^2/Hz.
    """

    radius: float
    mass: float
    omega_z: float
    wavelength: float
    p_scatt: float
    pressure: float
    temperature: float
    gas_molar_mass: float
    gas_viscosity: float
    na: float
    gouy_a: float
    s_z_imp: float
    detection_efficiencies: tuple[EfficiencyEntry, ...] = field(default=())

    def __post_init__(self) -> None:
        for name in _POSITIVE_FIELDS:
            value = getattr(self, name)
            if not value > 0.0:
                raise InvalidParameter(f"params.{name} must be positive, got {value}")
        if self.pressure < 0.0:
            raise InvalidParameter(
                f"params.pressure must be non-negative, got {self.pressure}"
            )
        if not 0.0 < self.na <= 1.0:
            raise InvalidParameter(f"params.na must lie in (0, 1], got {self.na}")
        if self.gouy_a < 0.0:
            raise InvalidParameter(
                f"params.gouy_a must be non-negative, got {self.gouy_a}"
            )

    @property
    def z_zpf(self) -> float:
        """Zero-point position spread sqrt(hbar / (2 m omega_z)) in meters."""
        return math.sqrt(HBAR / (2.0 * self.mass * self.omega_z))

    @property
    def p_zpf(self) -> float:
        """Zero-point momentum spread sqrt(hbar m omega_z / 2) in kg m/s."""
        return math.sqrt(HBAR * self.mass * self.omega_z / 2.0)

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    def with_pressure(self, pressure: float) -> "ExperimentParams":
        return replace(self, pressure=pressure)

    def eta_detection(self) -> float:
        """Product of the information efficiencies of all detection stages."""
        out = 1.0
        for entry in self.detection_efficiencies:
            if entry.stage == "detection":
                out *= entry.eta_info
        return out

    def eta_photon_chain(self) -> float:
        """Product of the photon efficiencies of stages that lose photons."""
        out = 1.0
        for entry in self.detection_efficiencies:
            if entry.stage == "detection" and entry.eta_photon is not None:
                out *= entry.eta_photon
        return out

    def force_to_rate(self, force: float) -> float:
        """Convert a force in newtons to a momentum-quadrature rate in 1/s."""
        return force / (math.sqrt(2.0) * self.p_zpf)


@dataclass(frozen=True)
class NoiseBudget:
    """Force-noise decomposition and derived decoherence rates.

    Densities are one-sided (N^2/Hz); rates are angular (rad/s). The
    occupation bounds ``n_imp``, ``n_tot`` and ``n_min`` are evaluated at the
    intrinsic gas damping ``gamma_th``; use :func:`occupation_bounds` for
    other effective linewidths. ``n_min`` is damping-independent.
    """

    s_f_ba: float
    s_f_th: float
    s_f_tot: float
    gamma_th: float
    gamma_meas: float
    gamma_ba_rate: float
    gamma_th_rate: float
    eta_d: float
    eta_e: float
    eta: float
    c_q: float
    z_zpf: float
    p_zpf: float
    n_imp: float
    n_tot: float
    n_min: float
    warnings: tuple[str, ...] = ()

    @property
    def s_z_imp(self) -> float:
        """Implied imprecision density z_zpf^2 / (2 gamma_meas), m^2/Hz."""
        return self.z_zpf**2 / (2.0 * self.gamma_meas)

    @property
    def gamma_tot_rate(self) -> float:
        return self.gamma_ba_rate + self.gamma_th_rate


def reference_params(pressure: float = 9.2e-7) -> ExperimentParams:
    """Default silica-nanoparticle setup used throughout the docs and tests.

    A 71.5 nm-radius sphere in a 1064 nm tweezer, oscillating at
    2*pi*104 kHz, read out in backward scatter through an NA 0.95 objective.
    The imprecision density follows from the scattered power degraded by the
    measured efficiency chain; the trailing table row is the environmental
    share of the total force noise at the default pressure of 9.2e-7 Pa.
    """

    table = (
        EfficiencyEntry("collection", 0.375, 0.84),
        EfficiencyEntry("fiber_transmission", 0.84, 0.84),
        EfficiencyEntry("mode_matching", 0.71, 0.71),
        EfficiencyEntry("heterodyne_splitting", 0.95, 0.95),
        EfficiencyEntry("interference_visibility", 0.99, 0.99),
        EfficiencyEntry("detector_quantum_efficiency", 0.85, 0.85),
        EfficiencyEntry("detector_dark_noise", None, 0.92),
        EfficiencyEntry("digital_processing", None, 0.98),
        EfficiencyEntry("force_noise_share", None, 0.96, stage="environment"),
    )
    eta_d = 1.0
    for entry in table:
        if entry.stage == "detection":
            eta_d *= entry.eta_info
    gouy_a = 0.71
    wavelength = 1064e-9
    p_scatt = 22.4e-6
    s_z_imp = optics.imprecision_psd(p_scatt, gouy_a, wavelength, eta_detection=eta_d)
    return ExperimentParams(
        radius=71.5e-9,
        mass=2.8e-18,
        omega_z=2.0 * math.pi * 104e3,
        wavelength=wavelength,
        p_scatt=p_scatt,
        pressure=pressure,
        temperature=292.0,
        gas_molar_mass=28.0134e-3,
        gas_viscosity=1.76e-5,
        na=0.95,
        gouy_a=gouy_a,
        s_z_imp=s_z_imp,
        detection_efficiencies=table,
    )


# ---------------------------------------------------------------------------
# gas damping


def mean_thermal_speed(temperature: float, molar_mass: float) -> float:
    """Mean molecular speed sqrt(8 R T / (pi M)) in m/s."""
    return math.sqrt(8.0 * GAS_CONSTANT * temperature / (math.pi * molar_mass))


def gas_mean_free_path(params: ExperimentParams) -> float:
    """Mean free path of the residual gas in meters (infinite in vacuum)."""
    if params.pressure == 0.0:
        return math.inf
    vbar = mean_thermal_speed(params.temperature, params.gas_molar_mass)
    return _MFP_COEF * params.gas_viscosity * vbar / params.pressure


def knudsen_number(params: ExperimentParams) -> float:
    """Knudsen number with the momentum length scale L = 4 r / 3."""
    return gas_mean_free_path(params) / (4.0 * params.radius / 3.0)


def gas_damping_rate(
    params: ExperimentParams,
    branch: Literal["auto", "interp", "free"] = "auto",
) -> float:
    """Translational gas damping rate gamma_th in rad/s.

    ``interp`` evaluates the full slip-corrected interpolation, ``free`` the
    free-molecular expression; ``auto`` switches to the latter above
    Kn = 10 where the two agree to better than a percent.
    """

    if params.pressure == 0.0:
        return 0.0
    kn = knudsen_number(params)
    if branch == "auto":
        branch = "free" if kn > 10.0 else "interp"
    if branch == "free":
        vbar = mean_thermal_speed(params.temperature, params.gas_molar_mass)
        return (64.0 / 3.0) * params.radius**2 * params.pressure / (
            params.mass * vbar
        )
    if branch != "interp":
        raise InvalidParameter(f"unknown damping branch {branch!r}")
    stokes = 6.0 * math.pi * params.gas_viscosity * params.radius / params.mass
    c0, c1, c2 = _CK
    correction = 1.0 + c0 * kn / (kn * kn + c1 * kn + c2)
    return stokes * (_SLIP / (_SLIP + kn)) * correction


# ---------------------------------------------------------------------------
# force noise and rates


def backaction_force_psd(params: ExperimentParams) -> float:
    """One-sided recoil force density 2 (a^2 + 2/5) hbar k P / c in N^2/Hz."""
    return (
        2.0
        * optics.info_factor(params.gouy_a)
        * HBAR
        * params.wavenumber
        * params.p_scatt
        / SPEED_OF_LIGHT
    )


def thermal_force_psd(params: ExperimentParams) -> tuple[float, float]:
    """One-sided thermal force density 4 k_B T m gamma_th and gamma_th."""
    gamma_th = gas_damping_rate(params)
    s_f_th = 4.0 * BOLTZMANN * params.temperature * params.mass * gamma_th
    return s_f_th, gamma_th


def radiation_damping_rate(params: ExperimentParams) -> float:
    """Recoil damping 2 (a^2 + 2/5) P_scatt / (m c^2); pairs with s_f_ba."""
    return (
        2.0
        * optics.info_factor(params.gouy_a)
        * params.p_scatt
        / (params.mass * SPEED_OF_LIGHT**2)
    )


def bath_occupancy(s_f: float, p_zpf: float, gamma: float) -> float:
    """Occupation of an effective bath with force density s_f and damping gamma."""
    if gamma <= 0.0:
        return math.inf
    return s_f / (8.0 * p_zpf**2 * gamma)


def decoherence_rates(params: ExperimentParams) -> NoiseBudget:
    """Assemble the full noise budget for one parameter set.

    Raises :class:`InvalidParameter` when ``s_z_imp`` is zero or negative
    (the measurement rate would diverge). A detection chain that implies
    ``eta_d > 1`` is physically inconsistent but numerically harmless, so it
    is reported through the ``warnings`` field instead of an exception.
    """

    if params.s_z_imp <= 0.0:
        raise InvalidParameter(
            f"params.s_z_imp must be positive to divide by it, got {params.s_z_imp}"
        )
    z_zpf = params.z_zpf
    p_zpf = params.p_zpf
    s_f_ba = backaction_force_psd(params)
    s_f_th, gamma_th = thermal_force_psd(params)
    s_f_tot = s_f_ba + s_f_th

    gamma_meas = z_zpf**2 / (2.0 * params.s_z_imp)
    gamma_ba_rate = s_f_ba / (8.0 * p_zpf**2)
    gamma_th_rate = s_f_th / (8.0 * p_zpf**2)

    eta_d = gamma_meas / gamma_ba_rate
    eta_e = s_f_ba / s_f_tot
    eta = eta_d * eta_e

    warnings: tuple[str, ...] = ()
    if eta_d > 1.0:
        warnings += (
            f"eta_d = {eta_d:.4f} exceeds 1: imprecision below the cone's "
            "information content",
        )
    if eta > 1.0:
        warnings += (f"eta = {eta:.4f} exceeds 1",)

    n_imp, n_tot, n_min = _occupation_bounds(
        gamma_meas, s_f_tot, z_zpf, p_zpf, gamma_th
    )
    c_q = gamma_ba_rate / gamma_th_rate if gamma_th_rate > 0.0 else math.inf

    return NoiseBudget(
        s_f_ba=s_f_ba,
        s_f_th=s_f_th,
        s_f_tot=s_f_tot,
        gamma_th=gamma_th,
        gamma_meas=gamma_meas,
        gamma_ba_rate=gamma_ba_rate,
        gamma_th_rate=gamma_th_rate,
        eta_d=eta_d,
        eta_e=eta_e,
        eta=eta,
        c_q=c_q,
        z_zpf=z_zpf,
        p_zpf=p_zpf,
        n_imp=n_imp,
        n_tot=n_tot,
        n_min=n_min,
        warnings=warnings,
    )


def _occupation_bounds(
    gamma_meas: float,
    s_f_tot: float,
    z_zpf: float,
    p_zpf: float,
    gamma: float,
) -> tuple[float, float, float]:
    s_z_imp = z_zpf**2 / (2.0 * gamma_meas)
    n_imp = s_z_imp * gamma / (8.0 * z_zpf**2)
    n_tot = bath_occupancy(s_f_tot, p_zpf, gamma)
    # The product n_imp * n_tot is damping-independent, so n_min is too.
    n_min = 2.0 * math.sqrt(
        (s_z_imp / (8.0 * z_zpf**2)) * (s_f_tot / (8.0 * p_zpf**2))
    ) - 0.5
    return n_imp, n_tot, n_min


def occupation_bounds(
    budget: NoiseBudget, gamma: float
) -> tuple[float, float, float]:
    """Imprecision and heating occupations at an effective linewidth gamma.

    Returns ``(n_imp, n_tot, n_min)`` where ``n_min = 2 sqrt(n_imp n_tot) - 1/2``
    is the cold-damping limit, independent of ``gamma``.
    """

    if gamma <= 0.0:
        raise InvalidParameter(f"gamma must be positive, got {gamma}")
    return _occupation_bounds(
        budget.gamma_meas, budget.s_f_tot, budget.z_zpf, budget.p_zpf, gamma
    )

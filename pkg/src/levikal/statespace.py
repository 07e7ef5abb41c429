"""Stochastic oscillator models in dimensionless quadrature units.

States are ``x = (z / (sqrt(2) z_zpf), p / (sqrt(2) p_zpf))`` so that the
ground state has covariance ``I/2`` and the mean occupation of the mechanical
mode is ``n = (tr Sigma - 1) / 2``. The continuous dynamics are

    dx = (A x + b u) dt + G dW,    zeta dt = (c x) dt + dV

with two-sided white-noise intensities ``q`` (process, entering through G)
and ``r`` (measurement). For the plain oscillator ``q = S_F_tot / (4 p_zpf^2)
= 2 (Gamma_ba + Gamma_th)`` and ``r = S_z_imp / (4 z_zpf^2) =
1 / (8 Gamma_meas)``; these follow from converting one-sided physical
densities to two-sided dimensionless ones.

Discretization is exact for linear Gaussian dynamics: the transition matrix
is a matrix exponential, the input vectors are integrated exponentials, and
the process covariance ``q_hat`` comes from the Van Loan augmented
exponential. The sampled measurement noise variance follows the convention
``r_hat = r * f_s`` (all measurement noise aliased into the Nyquist band),
i.e. ``var(nu_k) = r / t_s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import InvalidParameter, StabilityError
from .params import NoiseBudget

__all__ = [
    "ContinuousModel",
    "DiscreteModel",
    "build_continuous",
    "discretize",
    "augment_colored_noise",
    "damped_rotation",
    "measurement_psd",
]


@dataclass(frozen=True, eq=False)
class ContinuousModel:
    """Continuous-time linear Gaussian model.

    ``a`` is (n, n); ``b`` and ``c`` are length-n vectors; ``g`` is (n, k)
    mapping k independent white-noise channels with diagonal intensity matrix
    ``q`` (k, k) into the state. ``cross`` is the process-measurement noise
    correlation (unsupported downstream, zero by default). ``omega_z`` tags
    the mechanical resonance for controller weighting.
    """

    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    c: np.ndarray
    q: np.ndarray
    r: float
    omega_z: float
    cross: float = 0.0
    labels: tuple[str, ...] = ("z", "p")

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", np.atleast_2d(np.asarray(self.a, float)))
        object.__setattr__(self, "b", np.asarray(self.b, float).reshape(-1))
        object.__setattr__(self, "c", np.asarray(self.c, float).reshape(-1))
        g = np.asarray(self.g, float)
        if g.ndim == 1:
            g = g.reshape(-1, 1)
        object.__setattr__(self, "g", g)
        q = np.atleast_2d(np.asarray(self.q, float))
        object.__setattr__(self, "q", q)
        n = self.a.shape[0]
        if self.a.shape != (n, n):
            raise InvalidParameter(f"a must be square, got {self.a.shape}")
        for name in ("b", "c"):
            if getattr(self, name).shape != (n,):
                raise InvalidParameter(f"{name} must have length {n}")
        if self.g.shape[0] != n:
            raise InvalidParameter(f"g must have {n} rows, got {self.g.shape}")
        if self.q.shape != (self.g.shape[1],) * 2:
            raise InvalidParameter(
                f"q must be ({self.g.shape[1]}, {self.g.shape[1]}), got {self.q.shape}"
            )
        if self.r < 0.0:
            raise InvalidParameter(f"r must be non-negative, got {self.r}")

    @property
    def n_states(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Zero-order-hold discretization of a :class:`ContinuousModel`."""

    a_d: np.ndarray
    b_d: np.ndarray
    g_d: np.ndarray
    c: np.ndarray
    q_hat: np.ndarray
    r_hat: float
    t_s: float
    omega_z: float
    labels: tuple[str, ...] = ("z", "p")

    @property
    def f_s(self) -> float:
        return 1.0 / self.t_s

    @property
    def n_states(self) -> int:
        return self.a_d.shape[0]


def build_continuous(
    budget: NoiseBudget, omega_z: float, gamma: float
) -> ContinuousModel:
    """Oscillator model from a noise budget at a chosen damping rate.

    The process intensity is taken from the budget's total force noise; the
    caller is responsible for passing a ``gamma`` consistent with the budget
    pressure when that matters (the damping term and the thermal force noise
    are physically linked, but treated as independent knobs here so that
    effective and intrinsic linewidths can be explored).
    """

    if omega_z <= 0.0:
        raise InvalidParameter(f"omega_z must be positive, got {omega_z}")
    if gamma < 0.0:
        raise InvalidParameter(f"gamma must be non-negative, got {gamma}")
    q_c = budget.s_f_tot / (4.0 * budget.p_zpf**2)
    r_c = 1.0 / (8.0 * budget.gamma_meas)
    a = np.array([[0.0, omega_z], [-omega_z, -gamma]])
    return ContinuousModel(
        a=a,
        b=np.array([0.0, 1.0]),
        g=np.array([[0.0], [1.0]]),
        c=np.array([1.0, 0.0]),
        q=np.array([[q_c]]),
        r=r_c,
        omega_z=omega_z,
    )


def damped_rotation(omega: float, gamma: float, t: float) -> np.ndarray:
    """Closed-form ``expm(t [[0, w], [-w, -g]])`` for the damped oscillator.

    Covers the under-, over- and critically damped branches; used as a fast
    path and as an independent cross-check of the general exponential.
    """

    half = 0.5 * gamma
    disc = omega * omega - half * half
    decay = math.exp(-half * t)
    if abs(disc) < 1e-12 * omega * omega + 1e-300:
        # critically damped: sin(nu t)/nu -> t
        s_over = t
        cos_term = 1.0
    elif disc > 0.0:
        nu = math.sqrt(disc)
        s_over = math.sin(nu * t) / nu
        cos_term = math.cos(nu * t)
    else:
        nu = math.sqrt(-disc)
        s_over = math.sinh(nu * t) / nu
        cos_term = math.cosh(nu * t)
    a = np.array([[0.0, omega], [-omega, -gamma]])
    out = cos_term * np.eye(2) + s_over * (a + half * np.eye(2))
    return decay * out


def _is_damped_oscillator(a: np.ndarray) -> bool:
    return (
        a.shape == (2, 2)
        and a[0, 0] == 0.0
        and a[0, 1] == -a[1, 0]
        and a[0, 1] > 0.0
        and a[1, 1] <= 0.0
    )


def _transition(a: np.ndarray, t_s: float) -> np.ndarray:
    if _is_damped_oscillator(a):
        return damped_rotation(a[0, 1], -a[1, 1], t_s)
    return expm(a * t_s)


def _input_integral(a: np.ndarray, vec: np.ndarray, t_s: float) -> np.ndarray:
    """Exact ZOH input vector ``int_0^ts expm(a tau) dtau @ vec``."""
    n = a.shape[0]
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = a
    m[:n, n] = vec
    return expm(m * t_s)[:n, n]


def _van_loan_qhat(a: np.ndarray, gqg: np.ndarray, t_s: float) -> np.ndarray:
    n = a.shape[0]
    m = np.zeros((2 * n, 2 * n))
    m[:n, :n] = -a
    m[:n, n:] = gqg
    m[n:, n:] = a.T
    f = expm(m * t_s)
    q_hat = f[n:, n:].T @ f[:n, n:]
    return 0.5 * (q_hat + q_hat.T)


def discretize(model: ContinuousModel, t_s: float) -> DiscreteModel:
    """Exact zero-order-hold discretization at sample time ``t_s``.

    ``q_hat`` is the integrated process covariance over one sample (Van Loan
    construction); ``r_hat = r / t_s`` per the module convention. A spectral
    radius beyond 1 + 1e-9 (impossible for the passive models built here)
    raises :class:`StabilityError`.
    """

    if t_s <= 0.0:
        raise InvalidParameter(f"t_s must be positive, got {t_s}")
    if model.cross != 0.0:
        raise InvalidParameter(
            "correlated process/measurement noise is not supported in "
            "discretize (model.cross must be zero)"
        )
    a_d = _transition(model.a, t_s)
    b_d = _input_integral(model.a, model.b, t_s)
    g_col = model.g @ np.ones(model.g.shape[1])
    g_d = _input_integral(model.a, g_col, t_s)
    gqg = model.g @ model.q @ model.g.T
    q_hat = _van_loan_qhat(model.a, gqg, t_s)
    radius = max(abs(np.linalg.eigvals(a_d)))
    if radius > 1.0 + 1e-9:
        raise StabilityError(
            f"discretized transition has spectral radius {radius:.3e} > 1"
        )
    return DiscreteModel(
        a_d=a_d,
        b_d=b_d,
        g_d=g_d,
        c=model.c.copy(),
        q_hat=q_hat,
        r_hat=model.r / t_s,
        t_s=t_s,
        omega_z=model.omega_z,
        labels=model.labels,
    )


def augment_colored_noise(
    model: ContinuousModel, cutoff: float, noise_gain: float
) -> ContinuousModel:
    """Append a low-pass noise state that leaks into the measurement.

    The extra state obeys ``dx_n = -cutoff * x_n dt + dW_n`` with unit white
    intensity and appears in the measurement as ``noise_gain * x_n``. A zero
    cutoff gives Brownian measurement noise (1/f^2 shoulder); a zero
    noise_gain leaves the input-output behaviour untouched.
    """

    if cutoff < 0.0:
        raise InvalidParameter(f"cutoff must be non-negative, got {cutoff}")
    n = model.n_states
    k = model.g.shape[1]
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = model.a
    a[n, n] = -cutoff
    g = np.zeros((n + 1, k + 1))
    g[:n, :k] = model.g
    g[n, k] = 1.0
    q = np.zeros((k + 1, k + 1))
    q[:k, :k] = model.q
    q[k, k] = 1.0
    return ContinuousModel(
        a=a,
        b=np.append(model.b, 0.0),
        g=g,
        c=np.append(model.c, noise_gain),
        q=q,
        r=model.r,
        omega_z=model.omega_z,
        cross=model.cross,
        labels=model.labels + ("noise",),
    )


def measurement_psd(model: ContinuousModel, omega: np.ndarray) -> np.ndarray:
    """Analytic one-sided PSD of the continuous measurement, per Hz.

    ``S(omega) = 2 (c (i w I - A)^-1 G Q G^T (-i w I - A^T)^-1 c^T + r)`` in
    the model's dimensionless units. Used to validate simulated spectra and
    the colored-noise augmentation.
    """

    omega = np.asarray(omega, float)
    gqg = model.g @ model.q @ model.g.T
    eye = np.eye(model.n_states)
    out = np.empty(omega.shape, float)
    for i, w in np.ndenumerate(omega):
        tf = np.linalg.solve(1j * w * eye - model.a, gqg)
        tf = np.linalg.solve(1j * w * eye - model.a, tf.conj().T).conj().T
        out[i] = (model.c @ tf @ model.c).real + model.r
    return 2.0 * out

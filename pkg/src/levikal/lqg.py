"""Discrete-time Riccati solvers and Kalman-LQG synthesis.

The regulator weights follow the convention that makes the gain parameter an
effective damping rate: state cost ``Q = (omega_z / 2) I`` on the mechanical
quadratures and control cost ``r_u = omega_z / g_fb**2``, so in the
weak-coupling limit the closed loop behaves like a viscous drag ``g_fb`` on
the momentum quadrature. The cost ratio is invariant under joint scaling of
``Q`` and ``r_u``, and so is the gain.

Both Riccati equations are solved with the structure-preserving doubling
iteration (quadratically convergent); a plain fixed-point recursion is kept
alongside as an independent oracle for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov
from scipy.signal import ss2tf

from .errors import InvalidParameter, SolverError, StabilityError
from .params import NoiseBudget
from .statespace import DiscreteModel

__all__ = [
    "GainSet",
    "LqgFilter",
    "solve_dare",
    "riccati_recursion",
    "lqr_gain",
    "kalman_gain",
    "synthesize_gains",
    "closed_loop_covariance",
    "lqg_transfer_function",
    "occupation_vs_gain",
    "derivative_feedback_baseline",
]


def _as_input_matrix(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, float)
    return b.reshape(-1, 1) if b.ndim == 1 else b


def _as_cost(r, m: int) -> np.ndarray:
    r_mat = np.atleast_2d(np.asarray(r, float))
    if r_mat.shape != (m, m):
        raise InvalidParameter(f"r must be scalar or ({m}, {m}), got {r_mat.shape}")
    return r_mat


def _dare_residual(
    a: np.ndarray, b: np.ndarray, q: np.ndarray, r: np.ndarray, p: np.ndarray
) -> float:
    btpb = r + b.T @ p @ b
    gain = np.linalg.solve(btpb, b.T @ p @ a)
    res = a.T @ p @ a - p + q - a.T @ p @ b @ gain
    return float(np.linalg.norm(res))


def solve_dare(a, b, q, r, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """Stabilizing solution of ``a' P a - P + q - a' P b (r + b' P b)^-1 b' P a = 0``.

    Structure-preserving doubling: with ``A_0 = a``, ``G_0 = b r^-1 b'``,
    ``H_0 = q``, iterate

        A_{k+1} = A_k (I + G_k H_k)^-1 A_k
        G_{k+1} = G_k + A_k (I + G_k H_k)^-1 G_k A_k'
        H_{k+1} = H_k + A_k' H_k (I + G_k H_k)^-1 A_k

    and ``H_k -> P`` quadratically. The returned solution is checked against
    the Riccati residual at 1e-9 * (1 + ||P||_F); failure raises
    :class:`SolverError`.
    """

    a = np.atleast_2d(np.asarray(a, float))
    n = a.shape[0]
    b = _as_input_matrix(b)
    if b.shape[0] != n:
        raise InvalidParameter(f"b must have {n} rows, got {b.shape}")
    q = np.atleast_2d(np.asarray(q, float))
    if q.shape != (n, n):
        raise InvalidParameter(f"q must be ({n}, {n}), got {q.shape}")
    r = _as_cost(r, b.shape[1])

    a_k = a.copy()
    g_k = b @ np.linalg.solve(r, b.T)
    h_k = 0.5 * (q + q.T)
    eye = np.eye(n)
    for _ in range(max_iter):
        w = eye + g_k @ h_k
        try:
            v = np.linalg.solve(w, a_k)
            vg = np.linalg.solve(w, g_k)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"doubling iteration met a singular pencil: {exc}")
        a_next = a_k @ v
        g_next = g_k + a_k @ vg @ a_k.T
        h_next = h_k + a_k.T @ h_k @ v
        h_next = 0.5 * (h_next + h_next.T)
        delta = np.linalg.norm(h_next - h_k)
        h_k, g_k, a_k = h_next, 0.5 * (g_next + g_next.T), a_next
        h_norm = np.linalg.norm(h_k)
        # the Frobenius norm overflows (inf) long before the entries do,
        # which would otherwise turn both gates below into inf-vs-inf no-ops
        if not np.isfinite(h_norm):
            raise SolverError(
                "doubling iterates diverged; (a, b) is likely not stabilizable"
            )
        if delta <= tol * max(1.0, h_norm):
            break
    else:
        raise SolverError(f"doubling iteration did not converge in {max_iter} steps")

    residual = _dare_residual(a, b, q, r, h_k)
    gate = 1e-9 * (1.0 + np.linalg.norm(h_k))
    if not (np.isfinite(residual) and residual <= gate):
        raise SolverError(
            f"Riccati residual {residual:.3e} exceeds tolerance for the "
            "computed solution"
        )
    return h_k


def riccati_recursion(
    a, b, q, r, tol: float = 1e-13, max_iter: int = 5_000_000
) -> np.ndarray:
    """Fixed-point value iteration for the same DARE; slow, independent oracle."""

    a = np.atleast_2d(np.asarray(a, float))
    b = _as_input_matrix(b)
    q = np.atleast_2d(np.asarray(q, float))
    r = _as_cost(r, b.shape[1])
    p = q.copy()
    for _ in range(max_iter):
        btpb = r + b.T @ p @ b
        gain = np.linalg.solve(btpb, b.T @ p @ a)
        p_next = a.T @ p @ a - a.T @ p @ b @ gain + q
        p_next = 0.5 * (p_next + p_next.T)
        if np.max(np.abs(p_next - p)) <= tol * max(1.0, np.max(np.abs(p_next))):
            return p_next
        p = p_next
    raise SolverError(f"Riccati recursion did not converge in {max_iter} steps")


# ---------------------------------------------------------------------------
# gain synthesis


@dataclass(frozen=True, eq=False)
class GainSet:
    """Controller and estimator gains with their steady-state covariances.

    ``sigma_cond_ss`` is the one-step-ahead (innovation-form) conditional
    covariance of the estimator; ``sigma_closed_ss`` the stationary
    covariance of the true state under feedback. ``delta_p`` is the
    conditional momentum uncertainty sqrt(2 Sigma_pp + 1) in p_zpf units,
    i.e. the width of the filtered state after adding back half a quantum of
    zero-point spread. ``disc`` records the model the gains were computed
    from; a simulator may run them against a different (mistuned) plant.
    """

    k_lqr: np.ndarray
    k_kal: np.ndarray
    sigma_lqr_ss: np.ndarray
    sigma_cond_ss: np.ndarray
    sigma_closed_ss: np.ndarray
    g_fb: float
    n_predicted: float
    delta_p: float
    disc: DiscreteModel

    @property
    def n_conditional(self) -> float:
        s = self.sigma_cond_ss
        return 0.5 * (s[0, 0] + s[1, 1] - 1.0)

    def conditional_std_zpf(self) -> tuple[float, float]:
        """Conditional position and momentum spread in (z_zpf, p_zpf) units."""
        s = self.sigma_cond_ss
        return math.sqrt(2.0 * s[0, 0]), math.sqrt(2.0 * s[1, 1])

    @property
    def innovation_variance(self) -> float:
        c = self.disc.c
        return float(c @ self.sigma_cond_ss @ c + self.disc.r_hat)


def _lqr_weights(disc: DiscreteModel, g_fb: float) -> tuple[np.ndarray, float]:
    n = disc.n_states
    q = np.zeros((n, n))
    q[0, 0] = q[1, 1] = disc.omega_z / 2.0
    r_u = disc.omega_z / (g_fb * g_fb)
    return q, r_u


def lqr_gain(disc: DiscreteModel, g_fb: float) -> tuple[np.ndarray, np.ndarray]:
    """Regulator gain row ``k`` and its Riccati matrix for gain ``g_fb``."""
    if g_fb <= 0.0:
        raise InvalidParameter(f"g_fb must be positive, got {g_fb}")
    q, r_u = _lqr_weights(disc, g_fb)
    p = solve_dare(disc.a_d, disc.b_d, q, r_u)
    b = disc.b_d.reshape(-1, 1)
    denom = r_u + float((b.T @ p @ b)[0, 0])
    k = (b.T @ p @ disc.a_d / denom).reshape(-1)
    return k, p


def kalman_gain(disc: DiscreteModel) -> tuple[np.ndarray, np.ndarray]:
    """Steady-state innovation gain and one-step conditional covariance.

    Solves the filter Riccati equation through the control-form DARE on the
    transposed system (duality), then forms
    ``k_kal = a_d Sigma c / (c' Sigma c + r_hat)``.
    """

    sigma = solve_dare(disc.a_d.T, disc.c, disc.q_hat, disc.r_hat)
    c = disc.c
    denom = float(c @ sigma @ c) + disc.r_hat
    if denom <= 0.0:
        raise SolverError("innovation variance is not positive")
    k_kal = disc.a_d @ sigma @ c / denom
    return k_kal, sigma


def closed_loop_covariance(
    disc: DiscreteModel, k_lqr: np.ndarray, k_kal: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Stationary covariance of the joint (state, estimate) vector.

    Returns ``(sigma_joint, sigma_true)`` where ``sigma_true`` is the upper
    state block. Raises :class:`StabilityError` if the loop is not
    asymptotically stable.
    """

    n = disc.n_states
    a, b, c = disc.a_d, disc.b_d.reshape(-1, 1), disc.c.reshape(1, -1)
    k = np.asarray(k_lqr, float).reshape(1, -1)
    kk = np.asarray(k_kal, float).reshape(-1, 1)
    f = np.block([[a, -b @ k], [kk @ c, a - b @ k - kk @ c]])
    radius = max(abs(np.linalg.eigvals(f)))
    if radius >= 1.0:
        raise StabilityError(f"closed loop unstable: spectral radius {radius:.6f}")
    w = np.zeros((2 * n, 2 * n))
    w[:n, :n] = disc.q_hat
    w[n:, n:] = kk @ kk.T * disc.r_hat
    sigma = solve_discrete_lyapunov(f, w)
    sigma = 0.5 * (sigma + sigma.T)
    return sigma, sigma[:n, :n]


def synthesize_gains(disc: DiscreteModel, g_fb: float) -> GainSet:
    """Full LQG synthesis at feedback gain ``g_fb`` (rad/s)."""
    k_lqr, p_lqr = lqr_gain(disc, g_fb)
    k_kal, sigma_cond = kalman_gain(disc)
    _, sigma_true = closed_loop_covariance(disc, k_lqr, k_kal)
    n_pred = 0.5 * (sigma_true[0, 0] + sigma_true[1, 1] - 1.0)
    delta_p = math.sqrt(2.0 * sigma_cond[1, 1] + 1.0)
    return GainSet(
        k_lqr=k_lqr,
        k_kal=k_kal,
        sigma_lqr_ss=p_lqr,
        sigma_cond_ss=sigma_cond,
        sigma_closed_ss=sigma_true,
        g_fb=g_fb,
        n_predicted=n_pred,
        delta_p=delta_p,
        disc=disc,
    )


# ---------------------------------------------------------------------------
# controller as a filter


@dataclass(frozen=True, eq=False)
class LqgFilter:
    """The measurement-to-control transfer of the steady-state LQG loop.

    State-space form ``x+ = a x + b zeta; u = c x`` together with the
    equivalent rational form (numerator/denominator in descending powers of
    z). Both describe ``u_k = -k_lqr @ xhat_k`` with the estimator driven by
    the innovation.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    num: np.ndarray
    den: np.ndarray
    f_s: float

    def apply(self, zeta: np.ndarray) -> np.ndarray:
        """Run the state-space recursion from rest over a measurement record."""
        zeta = np.asarray(zeta, float)
        x = np.zeros(self.a.shape[0])
        u = np.empty_like(zeta)
        for i, z in enumerate(zeta):
            u[i] = self.c @ x
            x = self.a @ x + self.b * z
        return u

    def apply_rational(self, zeta: np.ndarray) -> np.ndarray:
        """Run the rational form via direct-form filtering."""
        from scipy.signal import lfilter

        return lfilter(self.num, self.den, np.asarray(zeta, float))

    def dc_gain(self) -> float:
        eye = np.eye(self.a.shape[0])
        return float(self.c @ np.linalg.solve(eye - self.a, self.b))

    def frequency_response(self, omega: np.ndarray) -> np.ndarray:
        """Complex response at angular frequencies ``omega`` (rad/s)."""
        z = np.exp(1j * np.asarray(omega, float) / self.f_s)
        eye = np.eye(self.a.shape[0])
        out = np.empty(z.shape, complex)
        for i, zi in np.ndenumerate(z):
            out[i] = self.c @ np.linalg.solve(zi * eye - self.a, self.b)
        return out


def lqg_transfer_function(disc: DiscreteModel, gains: GainSet) -> LqgFilter:
    """Controller transfer function ``G(z) = -k (zI - A_cl)^-1 k_kal``.

    ``A_cl = a_d - b_d k - k_kal c`` is the estimator propagated with its own
    control; the direct term is zero because ``u_k`` uses the one-step-ahead
    prediction only.
    """

    a_cl = (
        disc.a_d
        - np.outer(disc.b_d, gains.k_lqr)
        - np.outer(gains.k_kal, disc.c)
    )
    b = gains.k_kal.copy()
    c = -gains.k_lqr.copy()
    num, den = ss2tf(a_cl, b.reshape(-1, 1), c.reshape(1, -1), np.zeros((1, 1)))
    return LqgFilter(
        a=a_cl, b=b, c=c, num=num.reshape(-1), den=den, f_s=disc.f_s
    )


# ---------------------------------------------------------------------------
# sweeps and baselines


def occupation_vs_gain(disc: DiscreteModel, gains_grid) -> np.ndarray:
    """Predicted stationary occupation on a grid of feedback gains.

    Returns an array of rows ``(g_fb, n_predicted, delta_p)``.
    """

    rows = np.empty((len(gains_grid), 3))
    for i, g in enumerate(gains_grid):
        gs = synthesize_gains(disc, float(g))
        rows[i] = (g, gs.n_predicted, gs.delta_p)
    return rows


def derivative_feedback_baseline(
    budget: NoiseBudget, omega_z: float, gamma: float, g_fb: float
) -> tuple[float, float]:
    """Cold-damping (velocity feedback) stationary state at dimensionless gain.

    The feedback multiplies the intrinsic damping by ``1 + g_fb`` while
    feeding the measurement imprecision back as force noise:

        <z^2> = n_eff * 2 z_zpf^2 / (1 + g_fb)
                + g_fb^2 * gamma * S_z_imp / (4 (1 + g_fb))

    ``n_eff = S_F_tot / (8 p_zpf^2 gamma)`` is the occupancy the total white
    force noise drives the undamped-feedback oscillator to. Writing that
    noise as an effective bath temperature, the open-loop value is the
    familiar equipartition variance k_B T_eff / (m omega_z^2); T_eff reduces
    to the gas temperature when collisions dominate the force noise.

    Returns ``(z_variance, n_equiv)`` with the variance in m^2 and
    ``n_equiv = <z^2> / (2 z_zpf^2) - 1/2`` the equipartition-equivalent
    occupation. Minimizing ``n_equiv`` over the gain recovers the ideal
    velocity-damping floor ``2 sqrt(n_imp n_tot) - 1/2``, which this model
    only reaches with unlimited bandwidth. Valid for ``gamma`` well below
    the trap frequency.
    """

    if g_fb < 0.0:
        raise InvalidParameter(f"g_fb must be non-negative, got {g_fb}")
    if gamma <= 0.0:
        raise InvalidParameter(f"gamma must be positive, got {gamma}")
    s_z_imp = budget.z_zpf**2 / (2.0 * budget.gamma_meas)
    n_eff = budget.s_f_tot / (8.0 * budget.p_zpf**2 * gamma)
    bath = 2.0 * budget.z_zpf**2 * n_eff / (1.0 + g_fb)
    fed_back = g_fb * g_fb * gamma * s_z_imp / (4.0 * (1.0 + g_fb))
    z_var = bath + fed_back
    n_equiv = z_var / (2.0 * budget.z_zpf**2) - 0.5
    return z_var, n_equiv

"""Time-domain simulation of the measured, feedback-cooled oscillator.

Everything here advances exact discrete-time recursions (no SDE stepper, no
timestep error): the plant matrices already integrate the continuous model
over one sample, so the only approximation anywhere is the zero-order hold
on the control, which the hardware shares.

Randomness comes from counter-based Philox streams. A given ``(seed, steps)``
pair reproduces bit-identical trajectories on both kernel backends; ensemble
members get independent streams through ``SeedSequence`` spawn keys.
"""

from __future__ import annotations

import concurrent.futures
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InvalidParameter, ProtocolError
from .lqg import GainSet
from .statespace import DiscreteModel

__all__ = [
    "DriveResponse",
    "ReheatResult",
    "SecondMoments",
    "SimConfig",
    "Trajectory",
    "simulate_closed_loop",
    "simulate_drive_response",
    "simulate_reheating",
]

_CHUNK = 1 << 20

_CSV_HEADER = (
    "time_s,z_quad,p_quad,zeta_quad,z_hat_quad,p_hat_quad,u_rad_per_s,innovation_quad"
)


def _max_workers() -> int:
    env = os.environ.get("LEVIKAL_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise InvalidParameter("LEVIKAL_THREADS must be an integer") from None
        if n < 1:
            raise InvalidParameter("LEVIKAL_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def _rng(seed: int, run: int | None = None) -> np.random.Generator:
    if run is None:
        ss = np.random.SeedSequence(seed)
    else:
        ss = np.random.SeedSequence(seed, spawn_key=(run,))
    return np.random.Generator(np.random.Philox(ss))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Any L with L L^T = mat, tolerant of semidefinite input."""
    if not np.any(mat):
        return np.zeros_like(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(mat)
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class SimConfig:
    """Run length, seeding, and bookkeeping for a simulation.

    ``record_stride = 0`` disables time-series recording (moments are still
    accumulated), which keeps long occupancy runs out of memory trouble.
    ``initial_state`` is either an explicit quadrature vector or
    ``("thermal", n0)`` for a Gibbs draw at occupation ``n0``; the filter
    always cold-starts at zero. Moment accumulation begins after
    ``burn_in`` steps.
    """

    seed: int
    steps: int
    record_stride: int = 1
    initial_state: object = None
    feedback_schedule: tuple[tuple[int, bool], ...] = ((0, True),)
    burn_in: int = 0
    u_max: float = np.inf

    def __post_init__(self):
        if self.steps <= 0:
            raise InvalidParameter("steps must be positive")
        if self.record_stride < 0:
            raise InvalidParameter("record_stride must be >= 0")
        if not 0 <= self.burn_in < self.steps:
            raise InvalidParameter("burn_in must lie inside the run")
        sched = tuple(self.feedback_schedule)
        if not sched or sched[0][0] != 0:
            raise InvalidParameter("feedback_schedule must start at step 0")
        for (s0, _), (s1, _) in zip(sched, sched[1:]):
            if s1 <= s0:
                raise InvalidParameter("feedback_schedule steps must increase")
        object.__setattr__(self, "feedback_schedule", sched)


@dataclass(frozen=True)
class SecondMoments:
    """First and (raw) second moments of the stacked (plant, estimate) state."""

    count: int
    mean: np.ndarray
    raw: np.ndarray
    n_plant: int

    @property
    def cov(self) -> np.ndarray:
        return self.raw - np.outer(self.mean, self.mean)

    @property
    def plant_raw(self) -> np.ndarray:
        n = self.n_plant
        return self.raw[:n, :n]

    @property
    def estimate_raw(self) -> np.ndarray:
        n = self.n_plant
        return self.raw[n:, n:]

    @property
    def occupation(self) -> float:
        """Mechanical quanta from raw second moments, (⟨z2⟩+⟨p2⟩)/2 - 1/2."""
        return 0.5 * (self.plant_raw[0, 0] + self.plant_raw[1, 1]) - 0.5

    def occupation_error(self) -> float:
        """Crude standard error assuming one correlation time per 1/4 period."""
        n_eff = max(self.count / 100.0, 1.0)
        return (self.occupation + 0.5) * np.sqrt(2.0 / n_eff)


@dataclass
class Trajectory:
    """Recorded time series, all in quadrature units except ``u`` (rad/s)."""

    time: np.ndarray
    z_true: np.ndarray
    p_true: np.ndarray
    zeta: np.ndarray
    z_hat: np.ndarray
    p_hat: np.ndarray
    u: np.ndarray
    epsilon: np.ndarray
    f_s: float
    moments: Optional[SecondMoments] = None

    def __len__(self) -> int:
        return self.time.shape[0]

    def _stacked(self) -> np.ndarray:
        return np.column_stack(
            [self.time, self.z_true, self.p_true, self.zeta, self.z_hat, self.p_hat, self.u, self.epsilon]
        )

    def to_csv(self, path) -> None:
        np.savetxt(path, self._stacked(), fmt="%.17g", delimiter=",", header=_CSV_HEADER, comments="")

    def save_binary(self, path) -> None:
        """Raw little-endian float64, C order, 8 columns per row.

        Read back with ``np.fromfile(path, '<f8').reshape(-1, 8)``.
        """
        self._stacked().astype("<f8").tofile(path)


def _schedule_array(schedule, start: int, stop: int) -> np.ndarray:
    out = np.empty(stop - start, dtype=np.uint8)
    for i, (step, on) in enumerate(schedule):
        seg_start = max(step, start)
        seg_stop = stop if i + 1 == len(schedule) else min(schedule[i + 1][0], stop)
        if seg_start < seg_stop:
            out[seg_start - start : seg_stop - start] = 1 if on else 0
    return out


def _initial_plant_state(cfg: SimConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    init = cfg.initial_state
    if init is None:
        return np.zeros(n)
    if isinstance(init, str):
        m = re.fullmatch(r"\s*thermal\(\s*([^)]+?)\s*\)\s*", init)
        if m is None:
            raise InvalidParameter(
                f"initial_state string must look like 'thermal(n0)', got {init!r}"
            )
        init = ("thermal", float(m.group(1)))
    if isinstance(init, tuple) and len(init) == 2 and init[0] == "thermal":
        n0 = float(init[1])
        if n0 < 0:
            raise InvalidParameter("thermal occupation must be >= 0")
        x = np.zeros(n)
        x[:2] = np.sqrt(n0 + 0.5) * rng.standard_normal(2)
        return x
    x = np.asarray(init, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise InvalidParameter(f"initial_state must have {n} components")
    return x.copy()


def _drive_fn_none(start: int, stop: int) -> np.ndarray:
    return np.zeros(stop - start)


def simulate_closed_loop(
    plant: DiscreteModel,
    gains: GainSet,
    cfg: SimConfig,
    drive: "tuple[float, float] | None" = None,
) -> Trajectory:
    """Run the measurement/feedback loop and collect statistics.

    The plant evolves under ``plant``; the estimator uses the model baked
    into ``gains``, so passing gains synthesized from a detuned or otherwise
    wrong model exercises exactly that mismatch. ``drive`` adds a coherent
    ``u_d cos(omega_d t)`` term (``(omega_d, u_d)``) on top of the feedback.
    """

    if abs(plant.t_s - gains.disc.t_s) > 1e-15 * plant.t_s:
        raise InvalidParameter("plant and filter sample times differ")
    n = plant.n_states
    m = gains.disc.n_states
    rng = _rng(cfg.seed)
    x = np.ascontiguousarray(_initial_plant_state(cfg, n, rng))
    xh = np.zeros(m)

    a_t = np.ascontiguousarray(plant.a_d)
    b_t = np.ascontiguousarray(plant.b_d)
    cq = np.ascontiguousarray(_psd_sqrt(plant.q_hat))
    c_t = np.ascontiguousarray(plant.c)
    sr = float(np.sqrt(plant.r_hat))
    a_f = np.ascontiguousarray(gains.disc.a_d)
    b_f = np.ascontiguousarray(gains.disc.b_d)
    c_f = np.ascontiguousarray(gains.disc.c)
    kk = np.ascontiguousarray(gains.k_kal)
    kl = np.ascontiguousarray(gains.k_lqr)

    stride = cfg.record_stride
    if stride > 0:
        n_rec = (cfg.steps + stride - 1) // stride
        rec_all = np.empty((n_rec, 7))
    else:
        rec_all = np.empty((0, 7))
    nm = n + m
    mom = np.zeros(1 + nm + nm * nm)
    rec_buf = np.empty((_CHUNK, 7))

    if drive is not None:
        omega_d, u_d = float(drive[0]), float(drive[1])

    rows = 0
    start = 0
    while start < cfg.steps:
        stop = min(start + _CHUNK, cfg.steps)
        if start < cfg.burn_in < stop:
            # Split the chunk at the burn-in boundary so the moment window
            # starts exactly where requested.
            stop = cfg.burn_in
        mom_on = 1 if cfg.burn_in <= start else 0
        k = stop - start
        # one row of draws per step, sliced by column: the stream position
        # depends only on the number of executed steps, so chunk size and
        # burn-in layout can change without changing any seeded trajectory
        noise = rng.standard_normal((k, n + 1))
        wn = np.ascontiguousarray(noise[:, :n])
        vn = np.ascontiguousarray(noise[:, n])
        if drive is None:
            dr = np.zeros(k)
        else:
            dr = u_d * np.cos(omega_d * plant.t_s * np.arange(start, stop))
        fb = _schedule_array(cfg.feedback_schedule, start, stop)
        got = _kernels.closed_loop_chunk(
            a_t, b_t, cq, c_t, sr, a_f, b_f, c_f, kk, kl, float(cfg.u_max),
            x, xh, wn, vn, dr, fb, rec_buf[:k] if stride > 0 else rec_buf[:1],
            stride if stride > 0 else cfg.steps + 1,
            start if stride > 0 else 1,
            mom, mom_on,
        )
        if stride > 0 and got:
            rec_all[rows : rows + got] = rec_buf[:got]
            rows += got
        start = stop

    moments = None
    if mom[0] > 0:
        count = mom[0]
        mean = mom[1 : 1 + nm] / count
        raw = mom[1 + nm :].reshape(nm, nm) / count
        moments = SecondMoments(count=int(count), mean=mean, raw=raw, n_plant=n)

    if stride > 0:
        idx = np.arange(0, cfg.steps, stride, dtype=float)
        rec = rec_all[:rows]
        return Trajectory(
            time=idx[:rows] * plant.t_s,
            z_true=rec[:, 0].copy(),
            p_true=rec[:, 1].copy(),
            zeta=rec[:, 2].copy(),
            z_hat=rec[:, 3].copy(),
            p_hat=rec[:, 4].copy(),
            u=rec[:, 5].copy(),
            epsilon=rec[:, 6].copy(),
            f_s=plant.f_s,
            moments=moments,
        )
    empty = np.empty(0)
    return Trajectory(
        time=empty, z_true=empty, p_true=empty, zeta=empty, z_hat=empty,
        p_hat=empty, u=empty, epsilon=empty, f_s=plant.f_s, moments=moments,
    )


@dataclass(frozen=True)
class ReheatResult:
    """Ensemble-averaged energy growth after the feedback is released."""

    window_times: np.ndarray
    mean_energy: np.ndarray
    rate_quanta_per_s: float
    rate_stderr: float
    r_squared: float
    ensemble: int
    window_steps: int

    @property
    def gamma_tot_fit(self) -> float:
        """Fitted total decoherence rate in 1/s (quanta per second)."""
        return self.rate_quanta_per_s


def _one_reheat_run(plant: DiscreteModel, n0: float, steps: int, seed: int, run: int) -> np.ndarray:
    rng = _rng(seed, run)
    x = np.sqrt(n0 + 0.5) * rng.standard_normal(plant.n_states)
    if plant.n_states > 2:
        x[2:] = 0.0
    x = np.ascontiguousarray(x)
    xh = np.zeros(1)
    rec = np.empty((steps, 7))
    mom = np.zeros(1 + (plant.n_states + 1) * (1 + plant.n_states + 1))
    _kernels.closed_loop_chunk(
        np.ascontiguousarray(plant.a_d),
        np.ascontiguousarray(plant.b_d),
        np.ascontiguousarray(_psd_sqrt(plant.q_hat)),
        np.ascontiguousarray(plant.c),
        float(np.sqrt(plant.r_hat)),
        np.zeros((1, 1)),
        np.zeros(1),
        np.zeros(1),
        np.zeros(1),
        np.zeros(1),
        np.inf,
        x,
        xh,
        rng.standard_normal((steps, plant.n_states)),
        rng.standard_normal(steps),
        np.zeros(steps),
        np.zeros(steps, dtype=np.uint8),
        rec,
        1,
        0,
        mom,
        0,
    )
    return 0.5 * (rec[:, 0] ** 2 + rec[:, 1] ** 2) - 0.5


def simulate_reheating(
    plant: DiscreteModel,
    n0: float,
    duration: float,
    ensemble: int,
    seed: int,
) -> ReheatResult:
    """Free evolution from occupation ``n0``; fits the linear energy growth.

    Window length is one mechanical period (the energy is constant over a
    period up to the slow heating, so this averages out the quadrature
    beating). Requires at least ten windows.
    """

    if ensemble < 2:
        raise InvalidParameter("ensemble must be >= 2")
    period = 2.0 * np.pi / plant.omega_z
    window_steps = max(int(round(period / plant.t_s)), 1)
    steps = int(round(duration / plant.t_s))
    n_windows = steps // window_steps
    if n_windows < 10:
        raise ProtocolError(
            f"duration covers {n_windows} mechanical periods; need at least 10"
        )
    steps = n_windows * window_steps

    def job(run: int) -> np.ndarray:
        e = _one_reheat_run(plant, n0, steps, seed, run)
        return e.reshape(n_windows, window_steps).mean(axis=1)

    workers = min(_max_workers(), ensemble)
    if workers > 1 and _kernels.USING_COMPILED:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            energies = list(ex.map(job, range(ensemble)))
    else:
        energies = [job(run) for run in range(ensemble)]
    mean_e = np.mean(energies, axis=0)
    t_w = (np.arange(n_windows) + 0.5) * window_steps * plant.t_s

    design = np.column_stack([t_w, np.ones_like(t_w)])
    coef = np.linalg.lstsq(design, mean_e, rcond=None)[0]
    pred = design @ coef
    ss_res = float(np.sum((mean_e - pred) ** 2))
    ss_tot = float(np.sum((mean_e - mean_e.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    dof = max(n_windows - 2, 1)
    var_slope = ss_res / dof / float(np.sum((t_w - t_w.mean()) ** 2))
    return ReheatResult(
        window_times=t_w,
        mean_energy=mean_e,
        rate_quanta_per_s=float(coef[0]),
        rate_stderr=float(np.sqrt(var_slope)),
        r_squared=r2,
        ensemble=ensemble,
        window_steps=window_steps,
    )


@dataclass(frozen=True)
class DriveResponse:
    """Demodulated steady-state response to a coherent drive."""

    omega_drive: float
    u_drive: float
    response: complex
    n_periods: int

    @property
    def amplitude(self) -> float:
        return abs(self.response)

    @property
    def phase(self) -> float:
        return float(np.angle(self.response))


def closed_loop_damping(gains: GainSet) -> float:
    """Effective energy decay rate of the regulated mechanics, rad/s."""
    disc = gains.disc
    a_cl = disc.a_d - np.outer(disc.b_d, gains.k_lqr)
    rho = float(np.max(np.abs(np.linalg.eigvals(a_cl))))
    return -2.0 * np.log(rho) / disc.t_s


def drive_response_gain(plant: DiscreteModel, gains: GainSet, omega: float) -> complex:
    """Linear response of the recorded position to a unit drive at ``omega``.

    Evaluates the full loop (plant plus estimator feedback) at
    ``exp(i omega t_s)``; the drive enters both the plant and the estimator
    input, matching how :func:`simulate_closed_loop` injects it.
    """

    n = plant.n_states
    m = gains.disc.n_states
    a_joint = np.zeros((n + m, n + m), dtype=complex)
    a_joint[:n, :n] = plant.a_d
    a_joint[:n, n:] = -np.outer(plant.b_d, gains.k_lqr)
    a_joint[n:, :n] = np.outer(gains.k_kal, plant.c)
    a_joint[n:, n:] = (
        gains.disc.a_d
        - np.outer(gains.disc.b_d, gains.k_lqr)
        - np.outer(gains.k_kal, gains.disc.c)
    )
    b_joint = np.concatenate([plant.b_d, gains.disc.b_d]).astype(complex)
    zi = np.exp(1j * omega * plant.t_s)
    resolvent = np.linalg.solve(zi * np.eye(n + m) - a_joint, b_joint)
    return complex(resolvent[0])


def simulate_drive_response(
    plant: DiscreteModel,
    gains: GainSet,
    omega_drive: float,
    u_drive: float,
    cfg: SimConfig,
) -> DriveResponse:
    """Drive the loop at ``omega_drive`` and demodulate the position record.

    The tone must sit well outside the cooled linewidth
    (``|omega_drive - omega_z| > 10 * closed_loop_damping``) so the
    steady-state response is deterministic against the noise background;
    closer tones raise :class:`ProtocolError`. Demodulation uses an integer
    number of drive periods after the burn-in.
    """

    if omega_drive <= 0 or u_drive <= 0:
        raise InvalidParameter("drive frequency and amplitude must be positive")
    gamma_eff = closed_loop_damping(gains)
    if abs(omega_drive - plant.omega_z) <= 10.0 * gamma_eff:
        raise ProtocolError(
            "drive tone within ten effective linewidths of the resonance; "
            "the response there is not calibration grade"
        )
    if cfg.record_stride != 1:
        raise InvalidParameter("drive demodulation needs record_stride == 1")
    traj = simulate_closed_loop(plant, gains, cfg, drive=(omega_drive, u_drive))
    period_steps = 2.0 * np.pi / (omega_drive * plant.t_s)
    avail = len(traj) - cfg.burn_in
    n_periods = int(avail / period_steps)
    if n_periods < 1:
        raise ProtocolError("run too short to demodulate a full drive period")
    n_use = int(round(n_periods * period_steps))
    z = traj.z_true[cfg.burn_in : cfg.burn_in + n_use]
    t = traj.time[cfg.burn_in : cfg.burn_in + n_use]
    phasor = np.exp(-1j * omega_drive * t)
    response = 2.0 * np.mean(z * phasor)
    return DriveResponse(
        omega_drive=omega_drive,
        u_drive=u_drive,
        response=complex(response),
        n_periods=n_periods,
    )

"""Streaming estimator/controller steps and a fixed-point realization.

The float path is a one-step-ahead predictor: ``u_k`` is computed from the
current estimate, then the measurement at the same step corrects the state
for ``k+1``. The fixed-point classes emulate the same recursion in int64
two's-complement arithmetic with truncating multiplies, a saturating word,
and quantized converter interfaces, which is what ends up on an FPGA.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InvalidParameter
from .lqg import GainSet, closed_loop_covariance, synthesize_gains
from .statespace import DiscreteModel

__all__ = [
    "FilterState",
    "FixedPointConfig",
    "FixedPointFilter",
    "FixedPointRun",
    "fixed_point_filter_step",
    "kalman_step",
    "lqr_control",
    "make_filter_state",
    "recommended_full_scales",
    "run_filter",
]


@dataclass
class FilterState:
    """Mutable carrier for the streaming API.

    ``z_hat`` is the current one-step prediction in quadrature units.
    ``fixed_point`` holds the integer twin when one was requested; the float
    fields stay valid alongside it so both paths can be compared per step.
    """

    z_hat: np.ndarray
    gains: GainSet
    step_index: int = 0
    fixed_point: Optional["FixedPointFilter"] = None

    @property
    def fixed_point_cfg(self) -> Optional["FixedPointConfig"]:
        return self.fixed_point.config if self.fixed_point is not None else None


def make_filter_state(
    gains: GainSet,
    fixed_point_cfg: Optional["FixedPointConfig"] = None,
    z_hat: np.ndarray | None = None,
) -> FilterState:
    m = gains.disc.n_states
    if z_hat is None:
        z_hat = np.zeros(m)
    else:
        z_hat = np.asarray(z_hat, dtype=float).reshape(m).copy()
    fp = FixedPointFilter(gains, fixed_point_cfg) if fixed_point_cfg is not None else None
    return FilterState(z_hat=z_hat, gains=gains, fixed_point=fp)


def kalman_step(state: FilterState, zeta_k: float, u_k: float) -> tuple[FilterState, float]:
    """Advance the estimator by one sample.

    ``u_k`` is the control held over ``[k, k+1)``. Returns the (mutated)
    state and the innovation ``eps_k = zeta_k - c z_hat_k``.
    """

    disc = state.gains.disc
    eps = float(zeta_k - disc.c @ state.z_hat)
    state.z_hat = disc.a_d @ state.z_hat + disc.b_d * u_k + state.gains.k_kal * eps
    state.step_index += 1
    return state, eps


def lqr_control(state: FilterState) -> float:
    """Control for the current step, saturated when a fixed-point config is set."""
    u = float(-state.gains.k_lqr @ state.z_hat)
    cfg = state.fixed_point_cfg
    if cfg is not None:
        u = float(np.clip(u, -cfg.output_full_scale, cfg.output_full_scale))
    return u


def run_filter(
    gains: GainSet,
    zeta: np.ndarray,
    u_max: float = np.inf,
    z_hat0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Replay the float filter over a recorded measurement.

    Returns ``(u, eps)`` arrays; the control obeys the same causality as the
    streaming API (``u_k`` ignores ``zeta_k``).
    """

    disc = gains.disc
    zeta = np.ascontiguousarray(zeta, dtype=float)
    m = disc.n_states
    xh = np.zeros(m) if z_hat0 is None else np.asarray(z_hat0, dtype=float).reshape(m).copy()
    u = np.empty_like(zeta)
    eps = np.empty_like(zeta)
    _kernels.filter_chunk(
        np.ascontiguousarray(disc.a_d),
        np.ascontiguousarray(disc.b_d),
        np.ascontiguousarray(disc.c),
        np.ascontiguousarray(gains.k_kal),
        np.ascontiguousarray(gains.k_lqr),
        float(u_max),
        xh,
        zeta,
        u,
        eps,
    )
    return u, eps


@dataclass(frozen=True)
class FixedPointConfig:
    """Word layout and converter scales for the integer filter.

    ``word_bits`` caps at 32 so every product fits int64 before the
    truncating shift. ``input_full_scale`` is in measurement (quadrature)
    units, ``output_full_scale`` in control units (rad/s); both converters
    are ``io_bits`` wide. Internal states carry an extra factor
    ``2**state_scale_bits`` to use the word's dynamic range; the factor is
    baked into the coefficients, not applied at run time.
    """

    input_full_scale: float
    output_full_scale: float
    word_bits: int = 32
    frac_bits: int = 24
    io_bits: int = 14
    state_scale_bits: int = 3

    def __post_init__(self):
        if not 8 <= self.word_bits <= 32:
            raise InvalidParameter("word_bits must be in [8, 32]")
        if not 1 <= self.frac_bits < self.word_bits:
            raise InvalidParameter("frac_bits must be in [1, word_bits)")
        if not 2 <= self.io_bits <= 31:
            raise InvalidParameter("io_bits must be in [2, 31]")
        if self.state_scale_bits < 0:
            raise InvalidParameter("state_scale_bits must be >= 0")
        if self.input_full_scale <= 0 or self.output_full_scale <= 0:
            raise InvalidParameter("converter full scales must be positive")
        if self.input_full_scale >= 2.0 ** (self.word_bits - 1 - self.frac_bits):
            raise InvalidParameter(
                "input_full_scale exceeds the representable range for this word layout"
            )

    @property
    def word_max(self) -> int:
        return (1 << (self.word_bits - 1)) - 1

    @property
    def quantum(self) -> float:
        """Value of one fractional LSB."""
        return 2.0 ** (-self.frac_bits)

    @property
    def input_step(self) -> float:
        return self.input_full_scale * 2.0 ** (1 - self.io_bits)

    @property
    def output_step(self) -> float:
        return self.output_full_scale * 2.0 ** (1 - self.io_bits)


@dataclass
class FixedPointRun:
    u: np.ndarray
    y_code: np.ndarray
    overflow_count: int
    first_overflow: int
    input_clips: int

    @property
    def overflowed(self) -> bool:
        return self.overflow_count > 0


def recommended_full_scales(
    disc: DiscreteModel,
    g_low: float = 2 * np.pi * 10e3,
    g_rated: float = 2 * np.pi * 110e3,
    n_sigma_in: float = 8.0,
    n_sigma_out: float = 6.5,
) -> tuple[float, float]:
    """Converter full scales sized from closed-loop statistics.

    The ADC range covers ``n_sigma_in`` standard deviations of the
    measurement at the softest gain anyone would run (widest position
    spread), the DAC range ``n_sigma_out`` deviations of the control at the
    rated gain. Gaussian tails put both clip probabilities below 1e-10 per
    sample at their design points.
    """

    n = disc.n_states
    worst_zeta = 0.0
    for g in (g_low, g_rated):
        gains = synthesize_gains(disc, g)
        joint, sigma_true = closed_loop_covariance(disc, gains.k_lqr, gains.k_kal)
        var_zeta = float(disc.c @ sigma_true @ disc.c) + disc.r_hat
        worst_zeta = max(worst_zeta, var_zeta)
        if g == g_rated:
            m_est = joint[n:, n:]
            sigma_u = float(np.sqrt(gains.k_lqr @ m_est @ gains.k_lqr))
    return n_sigma_in * float(np.sqrt(worst_zeta)), n_sigma_out * sigma_u


class FixedPointFilter:
    """Integer twin of the estimator/controller pair.

    Realization: with ``S = 2**state_scale_bits`` and the normalized output
    ``y = u / output_full_scale``,

        x'    = S * z_hat
        y_k   = ky . x'_k                  (then quantized to the DAC grid)
        x'_+  = (A_d - k_kal c) x'_k + S k_kal zeta_k + S b_d U_fs y_k

    so the fed-back control is exactly the quantized DAC value, as in
    hardware. All coefficients are rounded to the fractional grid at
    construction; a coefficient outside the word range raises.
    """

    def __init__(self, gains: GainSet, config: FixedPointConfig):
        disc = gains.disc
        m = disc.n_states
        scale = float(1 << config.state_scale_bits)
        u_fs = config.output_full_scale
        a_eff = disc.a_d - np.outer(gains.k_kal, disc.c)
        kin = scale * gains.k_kal
        bu = scale * disc.b_d * u_fs
        ky = -gains.k_lqr / (u_fs * scale)
        self.gains = gains
        self.config = config
        self._a_raw = self._quantize(a_eff, "state matrix")
        self._kin_raw = self._quantize(kin, "innovation gain")
        self._bu_raw = self._quantize(bu, "control input gain")
        self._ky_raw = self._quantize(ky, "output gain")
        self._x_raw = np.zeros(m, dtype=np.int64)
        self.overflow_count = 0
        self.input_clips = 0

    def _quantize(self, values: np.ndarray, what: str) -> np.ndarray:
        cfg = self.config
        raw = np.rint(np.asarray(values, dtype=float) * 2.0**cfg.frac_bits)
        if np.any(np.abs(raw) > cfg.word_max):
            worst = float(np.max(np.abs(values)))
            raise InvalidParameter(
                f"{what} magnitude {worst:.3g} does not fit a "
                f"Q{cfg.word_bits - 1 - cfg.frac_bits}.{cfg.frac_bits} word"
            )
        return raw.astype(np.int64)

    def coefficients_as_float(self) -> dict[str, np.ndarray]:
        """Dequantized coefficients, for arithmetic-only comparisons."""
        q = self.config.quantum
        return {
            "a": self._a_raw * q,
            "k_in": self._kin_raw * q,
            "b_u": self._bu_raw * q,
            "k_y": self._ky_raw * q,
        }

    def reset(self, z_hat: np.ndarray | None = None) -> None:
        if z_hat is None:
            self._x_raw[:] = 0
        else:
            scale = float(1 << self.config.state_scale_bits)
            vals = np.asarray(z_hat, dtype=float) * scale * 2.0**self.config.frac_bits
            if np.any(np.abs(vals) > self.config.word_max):
                raise InvalidParameter("initial state outside the word range")
            self._x_raw[:] = np.rint(vals).astype(np.int64)
        self.overflow_count = 0
        self.input_clips = 0

    @property
    def z_hat(self) -> np.ndarray:
        """Current state estimate converted back to quadrature units."""
        scale = float(1 << self.config.state_scale_bits)
        return self._x_raw * (self.config.quantum / scale)

    def quantize_input(self, zeta: np.ndarray) -> tuple[np.ndarray, int]:
        """Apply the ADC: snap to the input grid and clamp at full scale."""
        cfg = self.config
        step = cfg.input_step
        code = np.rint(np.asarray(zeta, dtype=float) / step)
        lo, hi = -(1 << (cfg.io_bits - 1)), (1 << (cfg.io_bits - 1)) - 1
        clips = int(np.count_nonzero((code < lo) | (code > hi)))
        return np.clip(code, lo, hi) * step, clips

    def run(self, zeta: np.ndarray) -> FixedPointRun:
        cfg = self.config
        zeta_q, clips = self.quantize_input(zeta)
        zeta_raw = np.rint(zeta_q * 2.0**cfg.frac_bits).astype(np.int64)
        y_code = np.empty(zeta_raw.shape[0], dtype=np.int64)
        overflow, first = _kernels.fixed_point_chunk(
            self._a_raw,
            self._kin_raw,
            self._bu_raw,
            self._ky_raw,
            self._x_raw,
            zeta_raw,
            y_code,
            cfg.frac_bits,
            cfg.io_bits,
            cfg.word_max,
        )
        self.overflow_count += overflow
        self.input_clips += clips
        u = y_code * cfg.output_step
        return FixedPointRun(
            u=u,
            y_code=y_code,
            overflow_count=int(overflow),
            first_overflow=int(first),
            input_clips=clips,
        )

    def step(self, zeta_k: float) -> tuple[float, bool]:
        out = self.run(np.array([zeta_k], dtype=float))
        return float(out.u[0]), out.overflowed

    def reference_run(self, zeta: np.ndarray) -> np.ndarray:
        """Float64 recursion with the same quantized coefficients.

        No converter quantization, no saturation: the difference between
        this and :meth:`run` isolates the integer arithmetic itself.
        """

        coef = self.coefficients_as_float()
        a_cl = coef["a"] + np.outer(coef["b_u"], coef["k_y"])
        m = a_cl.shape[0]
        xh = self._x_raw * self.config.quantum
        u = np.empty(len(zeta))
        eps = np.empty(len(zeta))
        _kernels.filter_chunk(
            np.ascontiguousarray(a_cl),
            np.zeros(m),
            np.zeros(m),
            np.ascontiguousarray(coef["k_in"]),
            np.ascontiguousarray(-coef["k_y"]),
            np.inf,
            xh.copy(),
            np.ascontiguousarray(zeta, dtype=float),
            u,
            eps,
        )
        return u * self.config.output_full_scale


def fixed_point_filter_step(state: FilterState, zeta_quantized: float) -> tuple[float, bool]:
    """One integer-filter sample: returns ``(u_quantized, overflow_flag)``.

    The float fields of ``state`` are advanced in lockstep so the two paths
    can be compared sample by sample.
    """

    if state.fixed_point is None:
        raise InvalidParameter("filter state has no fixed-point configuration")
    u_q, flag = state.fixed_point.step(zeta_quantized)
    kalman_step(state, zeta_quantized, u_q)
    return u_q, flag

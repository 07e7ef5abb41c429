"""Spectral estimation, filter diagnostics, and calibration fits.

Frequency conventions: arrays named ``freq`` are in Hz; arguments named
``omega_*`` or ``gamma_*`` are angular (rad/s). All densities are one-sided.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, signal, stats

from .errors import FitError, InvalidParameter, ProtocolError
from .params import NoiseBudget

__all__ = [
    "HeterodyneFloors",
    "PositionCalibration",
    "ForceCalibration",
    "SidebandFit",
    "SpectrumRecord",
    "WhitenessResult",
    "balanced_linewidth",
    "calibrate_force",
    "calibrate_position",
    "fit_sidebands",
    "gaussianity_check",
    "innovation_whiteness",
    "sql_curves",
    "synth_heterodyne_psd",
    "welch_psd",
]


@dataclass(frozen=True)
class SpectrumRecord:
    """A one-sided spectrum with optional named components.

    ``psd`` is the total; ``components`` holds same-length breakdowns
    (model curves, noise floors). ``meta`` carries whatever produced it.
    """

    freq: np.ndarray
    psd: np.ndarray
    n_segments: int = 1
    window: str = "boxcar"
    components: Mapping[str, np.ndarray] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    def to_csv(self, path) -> None:
        """Long format: ``freq_hz,psd,component`` with the total first."""
        with open(path, "w") as fh:
            fh.write("freq_hz,psd,component\n")
            for name, col in [("total", self.psd)] + sorted(self.components.items()):
                for f, v in zip(self.freq, col):
                    fh.write(f"{f:.17g},{v:.17g},{name}\n")


def welch_psd(
    series: np.ndarray,
    f_s: float,
    segment_len: int = 4096,
    overlap_fraction: float = 0.5,
    window: str = "hann",
) -> SpectrumRecord:
    """Averaged-periodogram PSD of a uniformly sampled record."""
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise InvalidParameter("series must be one-dimensional")
    if segment_len < 8 or segment_len > series.shape[0]:
        raise InvalidParameter("segment_len must be in [8, len(series)]")
    if not 0.0 <= overlap_fraction < 1.0:
        raise InvalidParameter("overlap_fraction must be in [0, 1)")
    noverlap = int(segment_len * overlap_fraction)
    freq, psd = signal.welch(
        series,
        fs=f_s,
        window=window,
        nperseg=segment_len,
        noverlap=noverlap,
        detrend=False,
        return_onesided=True,
        scaling="density",
    )
    step = segment_len - noverlap
    n_segments = 1 + (series.shape[0] - segment_len) // step
    return SpectrumRecord(freq=freq, psd=psd, n_segments=n_segments, window=window)


@dataclass(frozen=True)
class WhitenessResult:
    fraction_in_band: float
    band_low: float
    band_high: float
    n_bins: int
    n_segments: int
    confidence: float
    passed: bool
    degenerate: bool


def innovation_whiteness(
    epsilon: np.ndarray,
    confidence: float = 0.95,
    f_s: float | None = None,
    band: tuple[float, float] | None = None,
    n_segments: int | None = None,
) -> WhitenessResult:
    """Chi-squared band test on the averaged innovation periodogram.

    The record is cut into ``n_segments`` non-overlapping pieces whose
    periodograms are averaged; for a white sequence each averaged bin
    (DC and Nyquist excluded, normalized by the empirical mean level) is
    then chi-squared with ``2 n_segments`` degrees of freedom, and a
    fraction ``confidence`` of bins falls inside the central quantile band.
    A healthy filter lands within +-0.02 of that. Averaging narrows the
    band: long records make even mild spectral structure escape it, which
    is the point of the test. ``n_segments`` defaults to one segment per
    2**17 samples (capped at 64); ``band`` restricts the statistic to
    ``(f_lo, f_hi)`` in Hz and requires ``f_s``.
    """

    epsilon = np.asarray(epsilon, dtype=float)
    if epsilon.ndim != 1:
        raise InvalidParameter("epsilon must be one-dimensional")
    if epsilon.shape[0] < 1 << 14:
        raise ProtocolError("whiteness test needs at least 2**14 samples")
    if not 0.5 < confidence < 1.0:
        raise InvalidParameter("confidence must be in (0.5, 1)")
    if band is not None and f_s is None:
        raise InvalidParameter("a frequency band requires f_s")
    if n_segments is None:
        n_segments = min(max(epsilon.shape[0] >> 17, 1), 64)
    if n_segments < 1 or epsilon.shape[0] // n_segments < 1 << 10:
        raise InvalidParameter("n_segments leaves segments shorter than 2**10")

    if not np.any(epsilon != epsilon[0]):
        return WhitenessResult(0.0, 0.0, 0.0, 0, n_segments, confidence, False, True)

    fs_eff = f_s if f_s is not None else 1.0
    seg = epsilon.shape[0] // n_segments
    freq, pxx = signal.welch(
        epsilon[: seg * n_segments],
        fs=fs_eff,
        window="boxcar",
        nperseg=seg,
        noverlap=0,
        detrend=False,
        scaling="density",
    )
    freq, pxx = freq[1:-1], pxx[1:-1]
    if band is not None:
        lo_f, hi_f = band
        if not 0 <= lo_f < hi_f:
            raise InvalidParameter("band must satisfy 0 <= f_lo < f_hi")
        keep = (freq >= lo_f) & (freq <= hi_f)
        if np.count_nonzero(keep) < 64:
            raise ProtocolError("band keeps fewer than 64 periodogram bins")
        pxx = pxx[keep]
    scaled = pxx / pxx.mean()
    k = n_segments
    lo = float(stats.gamma.ppf((1.0 - confidence) / 2.0, k) / k)
    hi = float(stats.gamma.ppf((1.0 + confidence) / 2.0, k) / k)
    frac = float(np.mean((scaled > lo) & (scaled < hi)))
    passed = confidence - 0.02 <= frac <= confidence + 0.02
    return WhitenessResult(
        fraction_in_band=frac,
        band_low=lo,
        band_high=hi,
        n_bins=int(scaled.shape[0]),
        n_segments=n_segments,
        confidence=confidence,
        passed=passed,
        degenerate=False,
    )


def gaussianity_check(
    epsilon: np.ndarray,
    f_s: float,
    highpass_cutoff: float = 10e3,
) -> float:
    """Excess kurtosis of the innovation after removing slow drifts.

    Zero for Gaussian; the high-pass (4th-order Butterworth, applied
    forward-backward) strips DC offsets and sub-acoustic wander that would
    otherwise bias the tails. The filter's settling span (two time
    constants at the cutoff) is trimmed from both ends, since those edge
    transients are pure artifact and fatten the tails.
    """

    epsilon = np.asarray(epsilon, dtype=float)
    if epsilon.shape[0] < 1 << 12:
        raise ProtocolError("kurtosis estimate needs at least 2**12 samples")
    if not 0 < highpass_cutoff < f_s / 2:
        raise InvalidParameter("highpass_cutoff must be below Nyquist")
    sos = signal.butter(4, highpass_cutoff, btype="highpass", fs=f_s, output="sos")
    filtered = signal.sosfiltfilt(sos, epsilon)
    trim = int(2.0 * f_s / highpass_cutoff)
    if filtered.shape[0] <= 4 * trim:
        trim = filtered.shape[0] // 8
    if trim > 0:
        filtered = filtered[trim:-trim]
    return float(stats.kurtosis(filtered, fisher=True, bias=False))


def balanced_linewidth(budget: NoiseBudget) -> float:
    """Damping rate at which force noise and imprecision contribute equally
    to the on-resonance displacement PSD, rad/s."""
    return float(np.sqrt(budget.s_f_tot / budget.s_z_imp) * budget.z_zpf / budget.p_zpf)


def sql_curves(
    budget: NoiseBudget,
    omega_z: float,
    gamma_eff: float,
    omega: np.ndarray | None = None,
) -> SpectrumRecord:
    """Displacement-PSD budget against the standard quantum limit.

    Components (m^2/Hz, one-sided): flat ``imprecision``; ``force`` is the
    total force noise filtered by the mechanical susceptibility at effective
    damping ``gamma_eff``; ``zpf`` the zero-point line, which touches the
    ``sql`` curve exactly on resonance; ``total`` their sum. ``meta`` holds
    the minimum of total/sql over the grid and where it occurs.
    """

    if gamma_eff <= 0:
        raise InvalidParameter("gamma_eff must be positive")
    if omega is None:
        half = max(12.0 * gamma_eff, 2.0 * np.pi * 80e3)
        half = min(half, 0.95 * omega_z)
        omega = np.linspace(omega_z - half, omega_z + half, 24001)
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise InvalidParameter("omega grid must be positive")

    mass = budget.p_zpf / (budget.z_zpf * omega_z)
    hbar = 2.0 * budget.z_zpf * budget.p_zpf
    chi_sq = 1.0 / (mass**2 * ((omega_z**2 - omega**2) ** 2 + (gamma_eff * omega) ** 2))
    imp = np.full_like(omega, budget.s_z_imp)
    force = budget.s_f_tot * chi_sq
    zpf = 2.0 * hbar * mass * gamma_eff * omega * chi_sq
    sql = 2.0 * hbar * np.sqrt(chi_sq)
    total = imp + force + zpf
    ratio = total / sql
    i_min = int(np.argmin(ratio))
    return SpectrumRecord(
        freq=omega / (2.0 * np.pi),
        psd=total,
        window="model",
        components={
            "imprecision": imp,
            "force": force,
            "zpf": zpf,
            "sql": sql,
            "ratio": ratio,
        },
        meta={
            "min_ratio": float(ratio[i_min]),
            "min_ratio_freq_hz": float(omega[i_min] / (2.0 * np.pi)),
            "gamma_eff": float(gamma_eff),
            "balanced_linewidth": balanced_linewidth(budget),
        },
    )


@dataclass(frozen=True)
class HeterodyneFloors:
    """Known detection-chain parameters entering the sideband model.

    PSD levels are in detector units^2/Hz. ``signal_gain`` converts a
    unit-area sideband Lorentzian into those units; ``one_over_f_knee`` is
    the offset from the carrier (Hz) where flicker noise crosses the shot
    level; ``detector_cutoff`` is the first-order bandwidth of the
    photoreceiver, applied to everything it sees (signal and its own dark
    noise, but not the analyzer floor added downstream).
    """

    f_het: float
    shot_level: float
    dark_detector: float
    dark_analyzer: float
    signal_gain: float
    one_over_f_knee: float = 0.0
    detector_cutoff: float = 75e6

    def __post_init__(self):
        if self.f_het <= 0:
            raise InvalidParameter("f_het must be positive")
        for name in ("shot_level", "signal_gain"):
            if getattr(self, name) <= 0:
                raise InvalidParameter(f"{name} must be positive")
        for name in ("dark_detector", "dark_analyzer", "one_over_f_knee"):
            if getattr(self, name) < 0:
                raise InvalidParameter(f"{name} must be >= 0")
        if self.detector_cutoff <= 0:
            raise InvalidParameter("detector_cutoff must be positive")

    def response(self, freq: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + (np.asarray(freq, dtype=float) / self.detector_cutoff) ** 2)


def _lorentzian(freq: np.ndarray, center: float, gamma: float) -> np.ndarray:
    """Unit-area line; ``gamma`` is the angular energy decay rate."""
    hw = gamma / (4.0 * np.pi)
    return (hw / np.pi) / ((freq - center) ** 2 + hw**2)


def _sideband_model(
    freq: np.ndarray,
    floors: HeterodyneFloors,
    omega_z: float,
    gamma: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Fixed background plus the three linear-coefficient basis columns."""
    f_m = omega_z / (2.0 * np.pi)
    h = floors.response(freq)
    fixed = floors.dark_analyzer + h * (floors.dark_detector + floors.shot_level)
    with np.errstate(divide="ignore"):
        flicker = h * floors.shot_level / np.abs(freq - floors.f_het)
    flicker[~np.isfinite(flicker)] = 0.0
    stokes = h * _lorentzian(freq, floors.f_het - f_m, gamma)
    anti = h * _lorentzian(freq, floors.f_het + f_m, gamma)
    return fixed, flicker, stokes, anti


def synth_heterodyne_psd(
    n_occupation: float,
    omega_z: float,
    gamma_eff: float,
    floors: HeterodyneFloors,
    freq: np.ndarray | None = None,
    n_averages: int = 400,
    rng: np.random.Generator | None = None,
) -> SpectrumRecord:
    """Synthetic heterodyne spectrum with motional sidebands.

    The lower (Stokes) sideband carries weight ``n + 1``, the upper
    (anti-Stokes) ``n``; their ratio is the thermometer. Each bin gets
    independent Gamma(``n_averages``) multiplicative noise, the statistics
    of an averaged periodogram.
    """

    if n_occupation < 0:
        raise InvalidParameter("n_occupation must be >= 0")
    if gamma_eff <= 0:
        raise InvalidParameter("gamma_eff must be positive")
    if n_averages < 1:
        raise InvalidParameter("n_averages must be >= 1")
    f_m = omega_z / (2.0 * np.pi)
    if freq is None:
        freq = np.linspace(floors.f_het - 1.5 * f_m, floors.f_het + 1.5 * f_m, 16001)
    freq = np.asarray(freq, dtype=float)
    fixed, flicker, stokes, anti = _sideband_model(freq, floors, omega_z, gamma_eff)
    clean = (
        fixed
        + floors.one_over_f_knee * flicker
        + floors.signal_gain * ((n_occupation + 1.0) * stokes + n_occupation * anti)
    )
    if rng is None:
        noisy = clean.copy()
    else:
        noisy = rng.gamma(shape=n_averages, scale=clean / n_averages)
    return SpectrumRecord(
        freq=freq,
        psd=noisy,
        n_segments=n_averages,
        window="hann",
        components={"clean": clean},
        meta={
            "n_occupation": float(n_occupation),
            "omega_z": float(omega_z),
            "gamma_eff": float(gamma_eff),
        },
    )


@dataclass(frozen=True)
class SidebandFit:
    """Result of the two-sideband thermometry fit."""

    weight_stokes: float
    weight_anti_stokes: float
    sideband_ratio: float
    n_occupation: float
    gamma_eff: float
    one_over_f_knee: float
    residual_rms: float
    residual_kurtosis: float


def fit_sidebands(
    record: SpectrumRecord,
    floors: HeterodyneFloors,
    omega_z: float,
    gamma_bounds: tuple[float, float] = (2.0 * np.pi * 10.0, 2.0 * np.pi * 1e6),
) -> SidebandFit:
    """Extract occupation from the motional sideband asymmetry.

    At fixed linewidth the model is linear in the sideband weights and the
    flicker amplitude, so those solve in closed form; the linewidth is the
    single nonlinear parameter, minimized over ``gamma_bounds``. The
    occupation follows from the weight ratio R as ``n = R / (1 - R)``.
    """

    freq = np.asarray(record.freq, dtype=float)
    data = np.asarray(record.psd, dtype=float)
    if freq.shape[0] < 64:
        raise InvalidParameter("record too short to fit")

    def linear_fit(gamma: float):
        fixed, flicker, stokes, anti = _sideband_model(freq, floors, omega_z, gamma)
        basis = np.column_stack([flicker, stokes, anti])
        coef, *_ = np.linalg.lstsq(basis, data - fixed, rcond=None)
        resid = data - fixed - basis @ coef
        return coef, resid, fixed

    def sse(log_gamma: float) -> float:
        _, resid, _ = linear_fit(np.exp(log_gamma))
        return float(resid @ resid)

    res = optimize.minimize_scalar(
        sse,
        bounds=(np.log(gamma_bounds[0]), np.log(gamma_bounds[1])),
        method="bounded",
        options={"xatol": 1e-10},
    )
    gamma = float(np.exp(res.x))
    coef, resid, _ = linear_fit(gamma)
    knee, w_s, w_as = (float(v) for v in coef)

    scale = float(np.median(data))
    if w_s <= 0 or w_s * _lorentzian(np.array([0.0]), 0.0, gamma)[0] < 1e-6 * scale:
        raise FitError("no resolvable Stokes sideband above the noise floors")
    if w_as < 0:
        w_as = 0.0
    ratio = w_as / w_s
    if ratio >= 1.0:
        raise FitError(
            f"sideband ratio {ratio:.4f} >= 1 has no thermal-state occupation"
        )
    n_est = ratio / (1.0 - ratio)
    norm = resid / data
    return SidebandFit(
        weight_stokes=w_s / floors.signal_gain,
        weight_anti_stokes=w_as / floors.signal_gain,
        sideband_ratio=ratio,
        n_occupation=n_est,
        gamma_eff=gamma,
        one_over_f_knee=knee,
        residual_rms=float(np.sqrt(np.mean(norm**2))),
        residual_kurtosis=float(stats.kurtosis(norm, fisher=True, bias=False)),
    )


@dataclass(frozen=True)
class PositionCalibration:
    """Detector transduction from occupancy-referenced voltage variances."""

    meters_per_volt: float
    noise_floor_m2: float
    slope: float
    intercept: float
    r_squared: float

    @property
    def volts_per_meter(self) -> float:
        return 1.0 / self.meters_per_volt


def calibrate_position(
    pairs: Sequence[tuple[float, float]],
    z_zpf: float,
) -> PositionCalibration:
    """Fit measured voltage variance against independently known occupation.

    A state of occupation ``n`` carries mean-square displacement
    ``z_zpf^2 (2n + 1)``, so the recorded variances fall on the line
    ``var = x / C^2 + nu2 / C^2`` with ``x`` that displacement, ``C`` the
    transduction in meters per volt and ``nu2`` the additive measurement
    noise referred back to displacement. Needs at least three points
    spanning a factor of three in occupation; the slope and intercept
    fields keep the raw line (V^2 per m^2 and V^2).
    """

    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise InvalidParameter("need at least three (variance, occupation) pairs")
    var, n_occ = arr[:, 0], arr[:, 1]
    if z_zpf <= 0:
        raise InvalidParameter("z_zpf must be positive")
    if np.any(n_occ < 0) or np.any(var <= 0):
        raise InvalidParameter("occupations must be >= 0 and variances positive")
    if np.max(n_occ) < 3.0 * max(np.min(n_occ), 1e-12):
        raise ProtocolError("occupation points must span at least a factor of 3")
    x = z_zpf**2 * (2.0 * n_occ + 1.0)
    # x sits 20 orders of magnitude below the intercept column, so a naive
    # design-matrix solve truncates the slope; center both axes instead.
    dx = x - x.mean()
    sxx = float(np.sum(dx**2))
    if sxx == 0.0:
        raise FitError("occupation points are degenerate")
    slope = float(np.sum(dx * (var - var.mean())) / sxx)
    intercept = float(var.mean() - slope * x.mean())
    if slope <= 0:
        raise FitError("variance does not increase with occupation")
    pred = slope * x + intercept
    ss_res = float(np.sum((var - pred) ** 2))
    ss_tot = float(np.sum((var - var.mean()) ** 2))
    return PositionCalibration(
        meters_per_volt=float(1.0 / np.sqrt(slope)),
        noise_floor_m2=float(intercept / slope),
        slope=float(slope),
        intercept=float(intercept),
        r_squared=1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0,
    )


@dataclass(frozen=True)
class ForceCalibration:
    """Drive-voltage to force transduction from coherent response tones."""

    newtons_per_volt: float
    stderr: float
    per_frequency: dict[float, float]


def calibrate_force(
    drive_results: Sequence[tuple[float, float, float]],
) -> ForceCalibration:
    """Pool per-tone force/voltage slopes into one transduction constant.

    Each entry is ``(omega_drive, voltage_std, force_std)`` where the force
    is what the response analysis recovered for that tone. The fit is a
    single line through the origin. A frequency whose own slope sits more
    than three standard errors from the pooled one points at a wrong
    susceptibility model or a miscalibrated drive chain, which no amount
    of averaging should paper over, so that raises instead of widening
    the error bar.
    """

    arr = np.asarray(drive_results, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 2:
        raise InvalidParameter(
            "need at least two (omega, voltage_std, force_std) results"
        )
    omega, volts, force = arr.T
    if np.any(volts <= 0) or np.any(force < 0):
        raise InvalidParameter("voltage stds must be positive, forces nonnegative")
    if np.unique(omega).size < 2:
        raise InvalidParameter("need drive tones at two or more frequencies")
    pooled = float(np.sum(force * volts) / np.sum(volts**2))
    per_freq: dict[float, float] = {}
    within_ss = 0.0
    for w in np.unique(omega):
        m = omega == w
        slope_w = float(np.sum(force[m] * volts[m]) / np.sum(volts[m] ** 2))
        per_freq[float(w)] = slope_w
        within_ss += float(np.sum((force[m] - slope_w * volts[m]) ** 2))
    # Judge agreement against the scatter seen within each frequency, not
    # against pooled residuals: a genuinely wrong slope inflates the pooled
    # variance enough to hide itself. With one tone per frequency there is
    # no within-frequency scatter, so the pooled residuals are all we have.
    within_dof = arr.shape[0] - len(per_freq)
    if within_dof > 0:
        sigma2 = within_ss / within_dof
    else:
        sigma2 = float(np.sum((force - pooled * volts) ** 2)) / (arr.shape[0] - 1)
    stderr = float(np.sqrt(sigma2 / np.sum(volts**2)))
    for w, slope_w in per_freq.items():
        m = omega == w
        se_w = float(np.sqrt(sigma2 / np.sum(volts[m] ** 2)))
        if abs(slope_w - pooled) > 3.0 * se_w + 1e-12 * abs(pooled):
            raise FitError(
                "per-frequency force calibrations disagree beyond three sigma"
            )
    return ForceCalibration(
        newtons_per_volt=pooled,
        stderr=stderr,
        per_frequency=per_freq,
    )

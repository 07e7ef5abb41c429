"""Spectral estimators, filter diagnostics, and calibration fits."""

import dataclasses
import math

import numpy as np
import pytest
from scipy import signal

from levikal import analysis, lqg, sim, statespace
from levikal.errors import FitError, InvalidParameter, ProtocolError

TWO_PI = 2.0 * math.pi


@pytest.fixture(scope="module")
def floors():
    return analysis.HeterodyneFloors(
        f_het=1.5e6,
        shot_level=1.0,
        dark_detector=0.15,
        dark_analyzer=0.05,
        signal_gain=2e5,
        one_over_f_knee=50.0,
    )


# ---------------------------------------------------------------------------
# welch_psd


def test_welch_white_noise_level():
    # averaged-periodogram bins are chi-squared around 2 sigma^2 / f_s;
    # ~8000 segments puts every bin within a few percent of the line
    f_s = 31.25e6
    rng = np.random.default_rng(77)
    x = rng.standard_normal(1 << 21)
    rec = analysis.welch_psd(x, f_s, segment_len=512)
    level = 2.0 / f_s
    inner = rec.psd[1:-1]
    assert rec.n_segments > 100
    assert inner.mean() == pytest.approx(level, rel=5e-3)
    assert np.abs(inner / level - 1.0).max() < 0.10
    df = rec.freq[1] - rec.freq[0]
    assert rec.psd.sum() * df == pytest.approx(x.var(), rel=0.02)


def test_welch_tone_power():
    f_s = 1e6
    a = 0.7
    t = np.arange(1 << 20) / f_s
    rec = analysis.welch_psd(a * np.sin(TWO_PI * 125e3 * t), f_s, segment_len=4096)
    df = rec.freq[1] - rec.freq[0]
    peak = int(np.argmax(rec.psd))
    integrated = rec.psd[peak - 8 : peak + 9].sum() * df
    assert integrated == pytest.approx(a * a / 2.0, rel=0.02)


def test_welch_open_loop_oscillator_peak(pars, disc, gains_soft):
    cfg = sim.SimConfig(
        seed=21,
        steps=1 << 20,
        initial_state="thermal(500)",
        feedback_schedule=((0, False),),
    )
    traj = sim.simulate_closed_loop(disc, gains_soft, cfg)
    rec = analysis.welch_psd(traj.z_true, f_s=traj.f_s, segment_len=1 << 18)
    df = rec.freq[1] - rec.freq[0]
    peak = rec.freq[int(np.argmax(rec.psd))]
    assert abs(peak - pars.omega_z / TWO_PI) <= df


def test_welch_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        analysis.welch_psd(np.array([]), 1e6)
    with pytest.raises(InvalidParameter):
        analysis.welch_psd(np.zeros((4, 4)), 1e6)
    with pytest.raises(InvalidParameter):
        analysis.welch_psd(np.zeros(100), 1e6, segment_len=200)
    with pytest.raises(InvalidParameter):
        analysis.welch_psd(np.zeros(8192), 1e6, overlap_fraction=1.0)


def test_spectrum_record_csv_layout(tmp_path):
    rec = analysis.SpectrumRecord(
        freq=np.array([1.0, 2.0]),
        psd=np.array([3.0, 4.0]),
        components={"model": np.array([5.0, 6.0])},
    )
    path = tmp_path / "spec.csv"
    rec.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "freq_hz,psd,component"
    assert len(lines) == 5
    assert lines[1].endswith(",total")
    assert lines[3].endswith(",model")


# ---------------------------------------------------------------------------
# innovation_whiteness / gaussianity_check


def test_whiteness_passes_on_white_noise():
    rng = np.random.default_rng(321)
    res = analysis.innovation_whiteness(rng.standard_normal(1 << 19))
    assert res.passed
    assert 0.93 <= res.fraction_in_band <= 0.97
    assert not res.degenerate


def test_whiteness_fails_on_lowpass_noise():
    rng = np.random.default_rng(321)
    colored = signal.lfilter([0.1], [1.0, -0.9], rng.standard_normal(1 << 19))
    res = analysis.innovation_whiteness(colored)
    assert not res.passed
    assert res.fraction_in_band < 0.85


def test_whiteness_degenerate_constant_input():
    res = analysis.innovation_whiteness(np.full(1 << 15, 3.7))
    assert res.degenerate
    assert not res.passed
    assert res.fraction_in_band == 0.0


def test_whiteness_matched_innovation_in_band(disc, gains_soft):
    """The Kalman innovation of the matched filter is white."""
    cfg = sim.SimConfig(seed=3, steps=1 << 19, burn_in=1 << 14)
    traj = sim.simulate_closed_loop(disc, gains_soft, cfg)
    eps = traj.epsilon[1 << 14 :]
    res = analysis.innovation_whiteness(eps, f_s=traj.f_s, band=(25e3, 225e3))
    assert res.passed
    assert 0.93 <= res.fraction_in_band <= 0.97
    assert analysis.gaussianity_check(eps, f_s=traj.f_s) == pytest.approx(0.0, abs=0.05)


def test_whiteness_input_validation():
    rng = np.random.default_rng(5)
    x = rng.standard_normal(1 << 15)
    with pytest.raises(ProtocolError):
        analysis.innovation_whiteness(x[: 1 << 13])
    with pytest.raises(InvalidParameter):
        analysis.innovation_whiteness(x, band=(1e3, 2e3))  # band needs f_s
    with pytest.raises(InvalidParameter):
        analysis.innovation_whiteness(x, confidence=0.3)
    with pytest.raises(InvalidParameter):
        analysis.innovation_whiteness(x, n_segments=64)  # segments < 2**10
    with pytest.raises(ProtocolError):
        # a band this narrow keeps too few periodogram bins to say anything
        analysis.innovation_whiteness(x, f_s=1e6, band=(1e3, 1.5e3))


def test_gaussianity_known_kurtosis():
    rng = np.random.default_rng(11)
    ek_gauss = analysis.gaussianity_check(rng.standard_normal(1_000_000), f_s=31.25e6)
    assert abs(ek_gauss) < 0.05
    ek_uniform = analysis.gaussianity_check(rng.uniform(-1, 1, 1_000_000), f_s=31.25e6)
    assert ek_uniform == pytest.approx(-1.2, abs=0.1)


def test_gaussianity_input_validation():
    with pytest.raises(ProtocolError):
        analysis.gaussianity_check(np.zeros(100), f_s=1e6)
    with pytest.raises(InvalidParameter):
        analysis.gaussianity_check(np.zeros(1 << 13), f_s=1e6, highpass_cutoff=6e5)


# ---------------------------------------------------------------------------
# sql_curves


def test_sql_low_gain_minimum_above_resonance(budget, pars):
    omega = np.linspace(pars.omega_z, pars.omega_z + TWO_PI * 80e3, 40001)
    rec = analysis.sql_curves(budget, pars.omega_z, TWO_PI * 2e3, omega=omega)
    assert rec.meta["min_ratio"] == pytest.approx(1.76, rel=0.10)
    offset = rec.meta["min_ratio_freq_hz"] - pars.omega_z / TWO_PI
    assert offset == pytest.approx(22e3, rel=0.10)
    i = int(np.argmin(rec.components["ratio"]))
    assert rec.components["ratio"][i] == rec.meta["min_ratio"]
    assert rec.freq[i] == rec.meta["min_ratio_freq_hz"]


def test_sql_high_gain_on_resonance_ratio(budget, pars):
    gamma = analysis.balanced_linewidth(budget)
    rec = analysis.sql_curves(budget, pars.omega_z, gamma)
    i = int(np.argmin(np.abs(rec.freq * TWO_PI - pars.omega_z)))
    assert rec.components["ratio"][i] == pytest.approx(2.7, rel=0.10)


def test_sql_ratio_floor_and_zpf_tangency(budget, pars):
    rec = analysis.sql_curves(budget, pars.omega_z, TWO_PI * 2e3)
    assert rec.components["ratio"].min() >= 1.0
    assert np.all(rec.psd >= 0.0)
    assert np.all(np.diff(rec.freq) > 0)
    # the zero-point line touches the SQL exactly on resonance
    i = int(np.argmin(np.abs(rec.freq * TWO_PI - pars.omega_z)))
    assert rec.components["zpf"][i] == pytest.approx(
        rec.components["sql"][i], rel=1e-9
    )


def test_sql_unit_efficiency_reaches_twice_sql(budget, pars):
    # imprecision-backaction product at the Heisenberg minimum, zero
    # temperature, damping chosen so the two contributions balance on
    # resonance: the total sits at exactly twice the SQL there
    hbar = 2.0 * budget.z_zpf * budget.p_zpf
    gamma = TWO_PI * 5e3
    s_imp = hbar * budget.z_zpf / (gamma * budget.p_zpf)
    b_unit = dataclasses.replace(
        budget,
        gamma_meas=budget.z_zpf**2 / (2.0 * s_imp),
        s_f_tot=hbar**2 / s_imp,
    )
    assert analysis.balanced_linewidth(b_unit) == pytest.approx(gamma, rel=1e-12)
    omega = np.sort(
        np.append(
            np.linspace(pars.omega_z - 5 * gamma, pars.omega_z + 5 * gamma, 20001),
            pars.omega_z,
        )
    )
    rec = analysis.sql_curves(b_unit, pars.omega_z, gamma, omega=omega)
    i = int(np.argmin(np.abs(rec.freq * TWO_PI - pars.omega_z)))
    assert rec.components["ratio"][i] == pytest.approx(2.0, rel=1e-9)


def test_sql_input_validation(budget, pars):
    with pytest.raises(InvalidParameter):
        analysis.sql_curves(budget, pars.omega_z, 0.0)
    with pytest.raises(InvalidParameter):
        analysis.sql_curves(
            budget, pars.omega_z, TWO_PI * 1e3, omega=np.array([-1.0, 1.0])
        )


# ---------------------------------------------------------------------------
# heterodyne synthesis and sideband thermometry


def test_sideband_round_trip_noiseless(floors, pars):
    gamma = TWO_PI * 20e3
    for n in (0.3, 0.56, 8.3):
        rec = analysis.synth_heterodyne_psd(n, pars.omega_z, gamma, floors)
        fit = analysis.fit_sidebands(rec, floors, pars.omega_z)
        assert fit.n_occupation == pytest.approx(n, rel=1e-6)
        assert fit.sideband_ratio == pytest.approx(n / (n + 1.0), rel=1e-6)
        assert fit.gamma_eff == pytest.approx(gamma, rel=1e-6)
        assert fit.weight_stokes == pytest.approx(n + 1.0, rel=1e-6)
        assert fit.weight_anti_stokes == pytest.approx(n, rel=1e-6)


def test_ground_state_has_no_anti_stokes(floors, pars):
    rec = analysis.synth_heterodyne_psd(0.0, pars.omega_z, TWO_PI * 20e3, floors)
    fit = analysis.fit_sidebands(rec, floors, pars.omega_z)
    assert fit.weight_anti_stokes == pytest.approx(0.0, abs=1e-6)
    assert fit.n_occupation == pytest.approx(0.0, abs=1e-6)


def test_sideband_difference_independent_of_occupation(floors, pars):
    gamma = TWO_PI * 20e3
    diffs = []
    for n in (0.3, 0.56, 8.3):
        rec = analysis.synth_heterodyne_psd(n, pars.omega_z, gamma, floors)
        fit = analysis.fit_sidebands(rec, floors, pars.omega_z)
        diffs.append(fit.weight_stokes - fit.weight_anti_stokes)
    assert np.allclose(diffs, 1.0, rtol=1e-6)


def test_sideband_fit_with_periodogram_noise(floors, pars):
    rng = np.random.default_rng(1234)
    rec = analysis.synth_heterodyne_psd(
        8.3, pars.omega_z, TWO_PI * 20e3, floors, rng=rng
    )
    fit = analysis.fit_sidebands(rec, floors, pars.omega_z)
    assert fit.n_occupation == pytest.approx(8.3, rel=0.03)
    assert fit.residual_rms < 0.1


def test_fit_rejects_inverted_sidebands(floors, pars):
    rec = analysis.synth_heterodyne_psd(3.0, pars.omega_z, TWO_PI * 20e3, floors)
    # the frequency grid is symmetric about f_het, so reversing the data
    # swaps the sidebands and puts the ratio above one
    mirrored = dataclasses.replace(rec, psd=rec.psd[::-1].copy())
    with pytest.raises(FitError, match="ratio"):
        analysis.fit_sidebands(mirrored, floors, pars.omega_z)


def test_fit_rejects_floors_only_spectrum(floors, pars):
    f_m = pars.omega_z / TWO_PI
    freq = np.linspace(floors.f_het - 1.5 * f_m, floors.f_het + 1.5 * f_m, 4001)
    h = floors.response(freq)
    flat = floors.dark_analyzer + h * (floors.dark_detector + floors.shot_level)
    rec = analysis.SpectrumRecord(freq=freq, psd=flat)
    with pytest.raises(FitError):
        analysis.fit_sidebands(rec, floors, pars.omega_z)


def test_synth_and_floors_validation(floors, pars):
    with pytest.raises(InvalidParameter):
        analysis.synth_heterodyne_psd(-0.1, pars.omega_z, TWO_PI * 20e3, floors)
    with pytest.raises(InvalidParameter):
        analysis.synth_heterodyne_psd(1.0, pars.omega_z, 0.0, floors)
    with pytest.raises(InvalidParameter):
        dataclasses.replace(floors, shot_level=0.0)
    with pytest.raises(InvalidParameter):
        dataclasses.replace(floors, dark_detector=-1.0)
    short = analysis.SpectrumRecord(freq=np.arange(10.0), psd=np.ones(10))
    with pytest.raises(InvalidParameter):
        analysis.fit_sidebands(short, floors, pars.omega_z)


# ---------------------------------------------------------------------------
# calibrations


def test_position_calibration_recovers_transduction(budget):
    c_mv = 8.0e-9
    nu2 = 5.4e-21
    z2 = budget.z_zpf**2
    occupations = np.array([0.3, 1.0, 3.0, 10.0])
    pairs = [((z2 * (2 * n + 1) + nu2) / c_mv**2, n) for n in occupations]
    cal = analysis.calibrate_position(pairs, budget.z_zpf)
    assert cal.meters_per_volt == pytest.approx(c_mv, rel=1e-9)
    assert cal.noise_floor_m2 == pytest.approx(nu2, rel=1e-9)
    assert cal.volts_per_meter == pytest.approx(1.0 / c_mv, rel=1e-9)
    assert cal.r_squared == pytest.approx(1.0, abs=1e-12)


def test_position_calibration_noisy_variances(budget):
    # finite-record variance estimates, chi-squared with 4e5 samples each
    rng = np.random.default_rng(99)
    c_mv = 8.0e-9
    nu2 = 5.4e-21
    z2 = budget.z_zpf**2
    pairs = []
    for n in (0.3, 1.0, 3.0, 10.0):
        true_var = (z2 * (2 * n + 1) + nu2) / c_mv**2
        pairs.append((np.mean(rng.standard_normal(400_000) ** 2) * true_var, n))
    cal = analysis.calibrate_position(pairs, budget.z_zpf)
    assert cal.meters_per_volt == pytest.approx(c_mv, rel=0.04)
    assert cal.noise_floor_m2 == pytest.approx(nu2, rel=0.05)


def test_position_calibration_zero_noise_intercept(budget):
    z2 = budget.z_zpf**2
    pairs = [(z2 * (2 * n + 1) / 8.0e-9**2, n) for n in (0.5, 2.0, 9.0)]
    cal = analysis.calibrate_position(pairs, budget.z_zpf)
    assert abs(cal.noise_floor_m2) < 1e-24


def test_position_calibration_rejects_bad_data(budget):
    z = budget.z_zpf
    good = [(1e-4, 0.3), (2e-4, 3.0), (3e-4, 10.0)]
    with pytest.raises(InvalidParameter):
        analysis.calibrate_position(good[:2], z)
    with pytest.raises(InvalidParameter):
        analysis.calibrate_position(good, -z)
    with pytest.raises(InvalidParameter):
        analysis.calibrate_position([(1e-4, -0.5), (2e-4, 3.0), (3e-4, 10.0)], z)
    with pytest.raises(ProtocolError):
        # factor of three span in occupation is the floor for a stable line
        analysis.calibrate_position([(1e-4, 4.0), (2e-4, 5.0), (3e-4, 6.0)], z)
    with pytest.raises(FitError):
        analysis.calibrate_position([(3e-4, 0.3), (2e-4, 3.0), (1e-4, 10.0)], z)


def test_force_calibration_recovers_transduction():
    c_nv = 1.98e-15
    tones = [
        (TWO_PI * 50e3, 0.02),
        (TWO_PI * 50e3, 0.08),
        (TWO_PI * 50e3, 0.15),
        (TWO_PI * 90e3, 0.04),
        (TWO_PI * 90e3, 0.1),
        (TWO_PI * 90e3, 0.2),
    ]
    results = [(w, v, c_nv * v) for w, v in tones]
    cal = analysis.calibrate_force(results)
    assert cal.newtons_per_volt == pytest.approx(c_nv, rel=1e-12)
    assert set(cal.per_frequency) == {TWO_PI * 50e3, TWO_PI * 90e3}
    doubled = analysis.calibrate_force([(w, 2 * v, 2 * f) for w, v, f in results])
    assert doubled.newtons_per_volt == pytest.approx(cal.newtons_per_volt, rel=1e-12)


def test_force_calibration_two_frequencies_overlap():
    rng = np.random.default_rng(11)
    c_nv = 1.98e-15
    tones = [(TWO_PI * 50e3, v) for v in (0.02, 0.05, 0.08, 0.15)]
    tones += [(TWO_PI * 90e3, v) for v in (0.04, 0.07, 0.1, 0.2)]
    results = [(w, v, c_nv * v * (1 + 1e-3 * rng.standard_normal())) for w, v in tones]
    cal = analysis.calibrate_force(results)
    assert cal.newtons_per_volt == pytest.approx(c_nv, rel=4e-2)
    for slope in cal.per_frequency.values():
        assert abs(slope - cal.newtons_per_volt) < cal.stderr * math.sqrt(2.0)


def test_force_calibration_rejects_inconsistent_slopes():
    c_nv = 1.98e-15
    w1, w2 = TWO_PI * 50e3, TWO_PI * 90e3
    results = [(w1, v, c_nv * v) for v in (0.02, 0.05, 0.1)]
    results += [(w2, v, 1.5 * c_nv * v) for v in (0.05, 0.12, 0.2)]
    with pytest.raises(FitError, match="disagree"):
        analysis.calibrate_force(results)


def test_force_calibration_input_validation():
    with pytest.raises(InvalidParameter):
        analysis.calibrate_force([(1.0, 0.1, 1e-16)])
    with pytest.raises(InvalidParameter):
        # all tones at one frequency cannot cross-check the model
        analysis.calibrate_force([(1.0, 0.1, 1e-16), (1.0, 0.2, 2e-16)])
    with pytest.raises(InvalidParameter):
        analysis.calibrate_force([(1.0, -0.1, 1e-16), (2.0, 0.2, 2e-16)])

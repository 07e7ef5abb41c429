"""Command-line entry point.

One scenario per invocation::

    levikal budget --config run.json --out results/

Every scenario writes its artifacts plus a ``manifest.json`` with the
effective configuration, the seed, and SHA-256 checksums of everything it
produced. Exit codes: 0 success, 1 failed verification checks, 2 bad
configuration or parameters, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, analysis, filtering, lqg, optics, params, sim, statespace
from .errors import (
    ConfigError,
    FitError,
    InvalidParameter,
    ProtocolError,
    SolverError,
)

_TWO_PI = 2.0 * np.pi


def _load_schema() -> dict:
    with resources.files("levikal").joinpath("config_schema.json").open("rb") as fh:
        return json.load(fh)


def _type_ok(value, expected: str) -> bool:
    if expected == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if expected == "boolean":
        return isinstance(value, bool)
    if expected == "string":
        return isinstance(value, str)
    if expected == "object":
        return isinstance(value, dict)
    if expected == "array":
        return isinstance(value, list)
    return True


def _validate_node(value, schema: dict, path: str, strict: bool, warnings: list[str]):
    expected = schema.get("type")
    if expected is not None and not _type_ok(value, expected):
        raise ConfigError(f"{path}: expected {expected}, got {type(value).__name__}")
    if "minimum" in schema and value < schema["minimum"]:
        raise ConfigError(f"{path}: must be >= {schema['minimum']}")
    if "exclusiveMinimum" in schema and value <= schema["exclusiveMinimum"]:
        raise ConfigError(f"{path}: must be > {schema['exclusiveMinimum']}")
    if "maximum" in schema and value > schema["maximum"]:
        raise ConfigError(f"{path}: must be <= {schema['maximum']}")
    if "enum" in schema and value not in schema["enum"]:
        raise ConfigError(f"{path}: must be one of {schema['enum']}")
    if expected == "object":
        props = schema.get("properties", {})
        for key, sub in value.items():
            child = f"{path}.{key}" if path else key
            if key in props:
                _validate_node(sub, props[key], child, strict, warnings)
            else:
                msg = f"unknown configuration key: {child}"
                if strict:
                    raise ConfigError(msg)
                warnings.append(msg)
    elif expected == "array" and "items" in schema:
        for i, item in enumerate(value):
            _validate_node(item, schema["items"], f"{path}[{i}]", strict, warnings)


def validate_config(config: dict, strict: bool = False) -> list[str]:
    """Check a configuration against the shipped schema.

    Returns warnings (unknown keys in non-strict mode); raises
    :class:`ConfigError` with a dotted path on real violations.
    """

    if not isinstance(config, dict):
        raise ConfigError("configuration root must be an object")
    warnings: list[str] = []
    _validate_node(config, _load_schema(), "", strict, warnings)
    return warnings


class _ArtifactDir:
    """Collects outputs so a failed run leaves no partial files behind.

    Every JSON artifact gets the seed and the config echo folded in, so a
    results directory stays interpretable after the command line is gone.
    """

    def __init__(self, root: Path, seed: int = 0, config: dict | None = None):
        self.root = root
        self.seed = seed
        self.config = config if config is not None else {}
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.paths.append(p)
        return p

    def write_json(self, name: str, payload) -> Path:
        p = self.path(name)
        body = {"seed": self.seed, "config": _jsonable(self.config)}
        body.update(payload)
        with open(p, "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass

    def checksums(self) -> dict[str, str]:
        out = {}
        for p in self.paths:
            if p.exists():
                out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
        return out


def _jsonable(value):
    if isinstance(value, (np.floating, np.integer)):
        return _jsonable(value.item())
    if isinstance(value, float):
        return value
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _build_params(config: dict) -> params.ExperimentParams:
    section = dict(config.get("params", {}))
    base = params.reference_params()
    kw = {}
    if "pressure_mbar" in section and "pressure_pa" in section:
        raise ConfigError("params: give pressure_pa or pressure_mbar, not both")
    if "pressure_mbar" in section:
        kw["pressure"] = section["pressure_mbar"] * 100.0
    mapping = {
        "pressure_pa": "pressure",
        "temperature_k": "temperature",
        "radius_m": "radius",
        "mass_kg": "mass",
        "omega_z_rad_s": "omega_z",
        "wavelength_m": "wavelength",
        "scattered_power_w": "p_scatt",
        "na": "na",
        "gouy_a": "gouy_a",
        "imprecision_psd_m2_hz": "s_z_imp",
        "gas_molar_mass_kg_mol": "gas_molar_mass",
        "gas_viscosity_pa_s": "gas_viscosity",
    }
    for key, attr in mapping.items():
        if key in section:
            kw[attr] = section[key]
    if "frequency_hz" in section:
        if "omega_z_rad_s" in section:
            raise ConfigError("params: give omega_z_rad_s or frequency_hz, not both")
        kw["omega_z"] = _TWO_PI * section["frequency_hz"]
    if not kw:
        return base
    fields = {f: getattr(base, f) for f in (
        "radius", "mass", "omega_z", "wavelength", "p_scatt", "pressure",
        "temperature", "gas_molar_mass", "gas_viscosity", "na", "gouy_a", "s_z_imp",
    )}
    fields["detection_efficiencies"] = base.detection_efficiencies
    fields.update(kw)
    return params.ExperimentParams(**fields)


def _loop_section(config: dict) -> dict:
    section = dict(config.get("loop", {}))
    out = {
        "sample_rate_hz": section.get("sample_rate_hz", 31.25e6),
        "gain_rad_s": None,
        "gamma_rad_s": None,
    }
    if "gain_hz" in section and "gain_rad_s" in section:
        raise ConfigError("loop: give gain_hz or gain_rad_s, not both")
    if "gain_hz" in section:
        out["gain_rad_s"] = _TWO_PI * section["gain_hz"]
    elif "gain_rad_s" in section:
        out["gain_rad_s"] = section["gain_rad_s"]
    else:
        out["gain_rad_s"] = _TWO_PI * 110e3
    if "gamma_hz" in section:
        out["gamma_rad_s"] = _TWO_PI * section["gamma_hz"]
    elif "gamma_rad_s" in section:
        out["gamma_rad_s"] = section["gamma_rad_s"]
    return out


def _build_loop(config: dict):
    pars = _build_params(config)
    budget = params.decoherence_rates(pars)
    loop = _loop_section(config)
    gamma = loop["gamma_rad_s"] if loop["gamma_rad_s"] is not None else budget.gamma_th
    cont = statespace.build_continuous(budget, pars.omega_z, gamma)
    disc = statespace.discretize(cont, 1.0 / loop["sample_rate_hz"])
    return pars, budget, disc, loop


def _budget_payload(pars: params.ExperimentParams, budget: params.NoiseBudget) -> dict:
    return {
        "pressure_pa": pars.pressure,
        "omega_z_rad_s": pars.omega_z,
        "force_noise": {
            "backaction_n2_hz": budget.s_f_ba,
            "thermal_n2_hz": budget.s_f_th,
            "total_n2_hz": budget.s_f_tot,
        },
        "imprecision_m2_hz": budget.s_z_imp,
        "rates": {
            "gamma_meas_rad_s": budget.gamma_meas,
            "gamma_ba_rad_s": budget.gamma_ba_rate,
            "gamma_th_rad_s": budget.gamma_th_rate,
            "gamma_tot_rad_s": budget.gamma_tot_rate,
            "gamma_meas_hz": budget.gamma_meas / _TWO_PI,
            "gamma_ba_hz": budget.gamma_ba_rate / _TWO_PI,
            "gamma_th_hz": budget.gamma_th_rate / _TWO_PI,
            "gamma_tot_hz": budget.gamma_tot_rate / _TWO_PI,
            "gas_damping_rad_s": budget.gamma_th,
        },
        "efficiencies": {
            "eta_detection": budget.eta_d,
            "eta_efficiency_chain": budget.eta_e,
            "eta_total": budget.eta,
        },
        "quantum_cooperativity": budget.c_q,
        "occupation": {"n_imprecision": budget.n_imp, "n_total_force": budget.n_tot,
                       "n_min": budget.n_min},
        "zero_point": {"z_zpf_m": budget.z_zpf, "p_zpf_kg_m_s": budget.p_zpf},
        "warnings": list(budget.warnings),
    }


def _scenario_budget(config, seed, out: _ArtifactDir) -> str:
    pars = _build_params(config)
    budget = params.decoherence_rates(pars)
    out.write_json("budget.json", _jsonable(_budget_payload(pars, budget)))
    return (
        f"budget: gamma_tot = 2*pi*{budget.gamma_tot_rate / _TWO_PI:.4g} Hz, "
        f"eta = {budget.eta:.4f}, n_min = {budget.n_min:.3f}"
    )


def _scenario_gains(config, seed, out: _ArtifactDir) -> str:
    pars, budget, disc, loop = _build_loop(config)
    gains = lqg.synthesize_gains(disc, loop["gain_rad_s"])
    sz, sp = gains.conditional_std_zpf()
    payload = {
        "sample_rate_hz": disc.f_s,
        "gain_rad_s": gains.g_fb,
        "k_lqr": _jsonable(gains.k_lqr),
        "k_kalman": _jsonable(gains.k_kal),
        "conditional_std_zpf": {"z": sz, "p": sp},
        "n_conditional": gains.n_conditional,
        "n_predicted": gains.n_predicted,
        "delta_p_heating": gains.delta_p,
        "innovation_variance": gains.innovation_variance,
    }
    out.write_json("gains.json", _jsonable(payload))
    return (
        f"gains: g_fb = 2*pi*{gains.g_fb / _TWO_PI:.4g} Hz, "
        f"n_predicted = {gains.n_predicted:.4f}, sigma_z = {sz:.4f} z_zpf"
    )


def _scenario_sweep(config, seed, out: _ArtifactDir) -> str:
    pars, budget, disc, loop = _build_loop(config)
    section = dict(config.get("sweep", {}))
    if "gain_grid_hz" in section:
        explicit = section["gain_grid_hz"]
        if len(explicit) == 0:
            raise ConfigError("sweep.gain_grid_hz: gain_grid required (got an empty list)")
        grid = _TWO_PI * np.asarray(explicit, dtype=float)
        pts = grid.shape[0]
    else:
        lo = _TWO_PI * section.get("gain_min_hz", 1e3)
        hi = _TWO_PI * section.get("gain_max_hz", 400e3)
        pts = int(section.get("points", 60))
        if pts < 2 or hi <= lo:
            raise ConfigError("sweep: need points >= 2 and gain_max_hz > gain_min_hz")
        if section.get("log_spaced", True):
            grid = np.geomspace(lo, hi, pts)
        else:
            grid = np.linspace(lo, hi, pts)
    rows = lqg.occupation_vs_gain(disc, grid)
    p = out.path("occupation_vs_gain.csv")
    np.savetxt(
        p,
        np.column_stack([rows[:, 0] / _TWO_PI, rows[:, 0], rows[:, 1], rows[:, 2]]),
        fmt="%.17g",
        delimiter=",",
        header="gain_hz,gain_rad_s,n_predicted,delta_p_heating",
        comments="",
    )
    i_best = int(np.argmin(rows[:, 1]))
    out.write_json("sweep.json", _jsonable({
        "gain_best_rad_s": rows[i_best, 0],
        "gain_best_hz": rows[i_best, 0] / _TWO_PI,
        "n_best": rows[i_best, 1],
        "points": pts,
    }))
    return (
        f"sweep: minimum n = {rows[i_best, 1]:.4f} at "
        f"g_fb = 2*pi*{rows[i_best, 0] / _TWO_PI:.4g} Hz"
    )


def _fixed_point_config(config, disc) -> filtering.FixedPointConfig | None:
    section = config.get("fixed_point")
    if section is None:
        return None
    section = dict(section)
    if "input_full_scale" in section and "output_full_scale" in section:
        in_fs, out_fs = section["input_full_scale"], section["output_full_scale"]
    else:
        in_fs, out_fs = filtering.recommended_full_scales(disc)
    return filtering.FixedPointConfig(
        input_full_scale=in_fs,
        output_full_scale=out_fs,
        word_bits=int(section.get("word_bits", 32)),
        frac_bits=int(section.get("frac_bits", 24)),
        io_bits=int(section.get("io_bits", 14)),
        state_scale_bits=int(section.get("state_scale_bits", 3)),
    )


def _scenario_simulate(config, seed, out: _ArtifactDir) -> str:
    pars, budget, disc, loop = _build_loop(config)
    section = dict(config.get("simulate", {}))
    steps = int(section.get("steps", 1 << 19))
    stride = int(section.get("record_stride", 1))
    burn_in = int(section.get("burn_in", min(steps // 4, 1 << 16)))
    feedback_on = bool(section.get("feedback_on", True))
    gains = lqg.synthesize_gains(disc, loop["gain_rad_s"])
    fp_cfg = _fixed_point_config(config, disc)
    cfg = sim.SimConfig(
        seed=seed,
        steps=steps,
        record_stride=stride,
        burn_in=burn_in,
        feedback_schedule=((0, feedback_on),),
        u_max=fp_cfg.output_full_scale if fp_cfg is not None else np.inf,
    )
    traj = sim.simulate_closed_loop(disc, gains, cfg)
    summary = {
        "steps": steps,
        "sample_rate_hz": disc.f_s,
        "gain_rad_s": gains.g_fb,
        "n_predicted": gains.n_predicted,
    }
    if traj.moments is not None:
        summary["n_simulated"] = traj.moments.occupation
        summary["n_simulated_stderr"] = traj.moments.occupation_error()
    if stride == 1 and len(traj) - burn_in >= 1 << 14:
        eps = traj.epsilon[burn_in:]
        white = analysis.innovation_whiteness(eps, f_s=disc.f_s)
        summary["whiteness_fraction"] = white.fraction_in_band
        summary["whiteness_passed"] = white.passed
        summary["innovation_excess_kurtosis"] = analysis.gaussianity_check(eps, disc.f_s)
    if fp_cfg is not None:
        fp = filtering.FixedPointFilter(gains, fp_cfg)
        run = fp.run(traj.zeta)
        summary["fixed_point"] = {
            "overflow_count": run.overflow_count,
            "input_clips": run.input_clips,
            "u_rms_ratio_vs_float": float(
                np.sqrt(np.mean(run.u**2) / max(np.mean(traj.u**2), 1e-300))
            ),
        }
    if stride > 0:
        traj.to_csv(out.path("trajectory.csv"))
        if bool(section.get("binary", False)):
            traj.save_binary(out.path("trajectory.bin"))
    out.write_json("summary.json", _jsonable(summary))
    n_txt = f"{summary.get('n_simulated', float('nan')):.4f}"
    return f"simulate: {steps} steps, n_simulated = {n_txt} (model {gains.n_predicted:.4f})"


def _scenario_reheat(config, seed, out: _ArtifactDir) -> str:
    pars, budget, disc, loop = _build_loop(config)
    section = dict(config.get("reheat", {}))
    n0 = float(section.get("n0", 1.0))
    period = _TWO_PI / pars.omega_z
    duration = float(section.get("duration_s", 60.0 * period))
    ensemble = int(section.get("ensemble", 100))
    result = sim.simulate_reheating(disc, n0, duration, ensemble, seed)
    p = out.path("reheat.csv")
    np.savetxt(
        p,
        np.column_stack([result.window_times, result.mean_energy]),
        fmt="%.17g",
        delimiter=",",
        header="time_s,mean_energy_quanta",
        comments="",
    )
    out.write_json("reheat.json", _jsonable({
        "rate_quanta_per_s": result.rate_quanta_per_s,
        "rate_stderr": result.rate_stderr,
        "r_squared": result.r_squared,
        "model_gamma_tot_rad_s": budget.gamma_tot_rate,
        "model_gamma_tot_quanta_per_s": budget.gamma_tot_rate,
        "ensemble": ensemble,
        "windows": len(result.window_times),
    }))
    return (
        f"reheat: fitted {result.rate_quanta_per_s:.4g} quanta/s "
        f"(model {budget.gamma_tot_rate:.4g}), r^2 = {result.r_squared:.4f}"
    )


def _scenario_thermometry(config, seed, out: _ArtifactDir) -> str:
    pars, budget, disc, loop = _build_loop(config)
    section = dict(config.get("thermometry", {}))
    n_true = float(section.get("n_occupation", 0.7))
    gamma_eff = _TWO_PI * float(section.get("gamma_eff_hz", 20e3))
    floors = analysis.HeterodyneFloors(
        f_het=float(section.get("f_het_hz", 1.5e6)),
        shot_level=float(section.get("shot_level", 1.0)),
        dark_detector=float(section.get("dark_detector", 0.15)),
        dark_analyzer=float(section.get("dark_analyzer", 0.05)),
        signal_gain=float(section.get("signal_gain", 2e5)),
        one_over_f_knee=float(section.get("one_over_f_knee", 50.0)),
        detector_cutoff=float(section.get("detector_cutoff_hz", 75e6)),
    )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    record = analysis.synth_heterodyne_psd(
        n_true, pars.omega_z, gamma_eff, floors,
        n_averages=int(section.get("n_averages", 400)), rng=rng,
    )
    fit = analysis.fit_sidebands(record, floors, pars.omega_z)
    record.to_csv(out.path("heterodyne_psd.csv"))
    out.write_json("thermometry.json", _jsonable({
        "n_true": n_true,
        "n_fitted": fit.n_occupation,
        "sideband_ratio": fit.sideband_ratio,
        "gamma_eff_true_rad_s": gamma_eff,
        "gamma_eff_fitted_rad_s": fit.gamma_eff,
        "residual_rms": fit.residual_rms,
    }))
    return (
        f"thermometry: n = {fit.n_occupation:.4f} from ratio "
        f"{fit.sideband_ratio:.4f} (truth {n_true:.4f})"
    )


def _scenario_sql(config, seed, out: _ArtifactDir) -> str:
    pars = _build_params(config)
    budget = params.decoherence_rates(pars)
    section = dict(config.get("sql", {}))
    if "gamma_eff_hz" in section:
        gamma_eff = _TWO_PI * float(section["gamma_eff_hz"])
    else:
        gamma_eff = analysis.balanced_linewidth(budget)
    record = analysis.sql_curves(budget, pars.omega_z, gamma_eff)
    record.to_csv(out.path("sql_curves.csv"))
    out.write_json("sql.json", _jsonable(dict(record.meta)))
    return (
        f"sql: min total/sql = {record.meta['min_ratio']:.4f} at "
        f"{record.meta['min_ratio_freq_hz'] / 1e3:.2f} kHz"
    )


def _scenario_optics(config, seed, out: _ArtifactDir) -> str:
    pars = _build_params(config)
    section = dict(config.get("optics", {}))
    n_pts = int(section.get("na_points", 40))
    grid = np.linspace(0.05, 0.995, n_pts)
    rows = []
    for na in grid:
        eff = optics.collection_efficiencies(na, pars.gouy_a)
        rows.append([na, eff.eta_photon, eff.eta_info])
    p = out.path("collection_vs_na.csv")
    np.savetxt(p, np.asarray(rows), fmt="%.17g", delimiter=",",
               header="na,eta_photon,eta_info", comments="")
    here = optics.collection_efficiencies(pars.na, pars.gouy_a)
    out.write_json("optics.json", _jsonable({
        "na": pars.na,
        "gouy_a": pars.gouy_a,
        "eta_photon": here.eta_photon,
        "eta_info": here.eta_info,
        "info_factor": here.info_factor,
        "imprecision_psd_m2_hz": optics.imprecision_psd(
            pars.p_scatt, pars.gouy_a, pars.wavelength
        ),
    }))
    return (
        f"optics: NA {pars.na:.3f} collects eta_photon = {here.eta_photon:.4f}, "
        f"eta_info = {here.eta_info:.4f}"
    )


def _scenario_calibrate(config, seed, out: _ArtifactDir) -> str:
    """Run both transduction calibrations on synthetic end-to-end data.

    The force leg drives a simulated loop with tones whose amplitudes come
    from an assumed volts-to-newtons constant, demodulates the response,
    converts it back to a force through the model susceptibility and checks
    the constant is recovered. The position leg builds voltage variances
    from an assumed meters-per-volt constant plus a noise floor and fits
    them back out.
    """

    pars, budget, disc, loop = _build_loop(config)
    section = dict(config.get("calibrate", {}))
    # Calibration tones must clear the cooled linewidth by 10x, so this
    # scenario runs at a soft gain regardless of the loop section.
    g_cal = _TWO_PI * float(section.get("gain_hz", 1e3))
    gains = lqg.synthesize_gains(disc, g_cal)
    offsets = section.get("drive_offsets_hz", [-30e3, 45e3])
    volts = section.get("drive_voltages", [0.5, 1.0, 2.0])
    c_nv_true = float(section.get("newtons_per_volt", 1.98e-15))
    steps = int(section.get("steps", 1 << 18))
    root2 = math.sqrt(2.0)
    results = []
    for off in offsets:
        omega_d = pars.omega_z + _TWO_PI * float(off)
        model = abs(sim.drive_response_gain(disc, gains, omega_d))
        for volt in volts:
            force = c_nv_true * float(volt)
            cfg = sim.SimConfig(seed=seed, steps=steps, burn_in=steps // 4)
            resp = sim.simulate_drive_response(
                disc, gains, omega_d, pars.force_to_rate(force), cfg
            )
            force_rec = resp.amplitude / model * root2 * pars.p_zpf
            results.append((omega_d, float(volt) / root2, force_rec / root2))
    force_cal = analysis.calibrate_force(results)

    c_mv_true = float(section.get("meters_per_volt", 8.0e-9))
    floor_m2 = float(section.get("noise_floor_m2", 5.4e-21))
    occupations = [float(n) for n in section.get("occupations", [0.3, 1.0, 3.0, 8.3, 30.0])]
    z2 = pars.z_zpf**2
    pairs = [((z2 * (2.0 * n + 1.0) + floor_m2) / c_mv_true**2, n) for n in occupations]
    pos_cal = analysis.calibrate_position(pairs, pars.z_zpf)

    out.write_json("calibrate.json", _jsonable({
        "force": {
            "newtons_per_volt_true": c_nv_true,
            "newtons_per_volt": force_cal.newtons_per_volt,
            "stderr": force_cal.stderr,
            "per_frequency": {f"{w:.6g}": v for w, v in force_cal.per_frequency.items()},
            "tones": [[r[0], r[1], r[2]] for r in results],
        },
        "position": {
            "meters_per_volt_true": c_mv_true,
            "meters_per_volt": pos_cal.meters_per_volt,
            "noise_floor_m2_true": floor_m2,
            "noise_floor_m2": pos_cal.noise_floor_m2,
            "r_squared": pos_cal.r_squared,
        },
    }))
    return (
        f"calibrate: force {force_cal.newtons_per_volt:.4g} N/V "
        f"(true {c_nv_true:.4g}), position {pos_cal.meters_per_volt:.4g} m/V "
        f"(true {c_mv_true:.4g})"
    )


def _scenario_verify(config, seed, out: _ArtifactDir) -> str:
    """Recompute headline numbers and compare against their pinned values."""
    pars, budget, disc, loop = _build_loop(config)
    gains = lqg.synthesize_gains(disc, _TWO_PI * 110e3)
    sz, sp = gains.conditional_std_zpf()
    checks = [
        ("gamma_meas_hz", budget.gamma_meas / _TWO_PI, 6264.0, 0.05),
        ("gamma_ba_hz", budget.gamma_ba_rate / _TWO_PI, 17350.0, 0.05),
        ("eta_total", budget.eta, 0.347, 0.05),
        ("n_min", budget.n_min, 0.349, 0.08),
        ("sigma_z_zpf", sz, 1.30, 0.08),
        ("sigma_p_zpf", sp, 1.35, 0.08),
        ("n_predicted_110k", gains.n_predicted, 0.71, 0.15),
    ]
    lines = []
    all_ok = True
    for name, got, want, tol in checks:
        ok = abs(got - want) <= tol * abs(want)
        all_ok &= ok
        lines.append({"check": name, "value": got, "expected": want,
                      "rel_tol": tol, "passed": bool(ok)})
    out.write_json("verify.json", _jsonable({"checks": lines, "passed": bool(all_ok)}))
    for row in lines:
        status = "ok" if row["passed"] else "FAIL"
        print(f"  [{status}] {row['check']}: {row['value']:.5g} vs {row['expected']:.5g}")
    if not all_ok:
        raise _VerifyFailure("one or more verification checks failed")
    return "verify: all checks passed"


class _VerifyFailure(Exception):
    pass


_SCENARIOS = {
    "budget": _scenario_budget,
    "gains": _scenario_gains,
    "sweep": _scenario_sweep,
    "simulate": _scenario_simulate,
    "reheat": _scenario_reheat,
    "thermometry": _scenario_thermometry,
    "sql": _scenario_sql,
    "optics": _scenario_optics,
    "calibrate": _scenario_calibrate,
    "verify": _scenario_verify,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="levikal",
        description="Feedback-cooling design and simulation toolkit",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("scenario", choices=sorted(_SCENARIOS))
    p.add_argument("--config", type=Path, default=None,
                   help="JSON configuration file (defaults apply without one)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed from the configuration (default 0)")
    p.add_argument("--out", type=Path, default=Path("."),
                   help="directory for artifacts (created if missing)")
    p.add_argument("--strict", action="store_true",
                   help="reject unknown configuration keys")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config is not None:
            try:
                with open(args.config) as fh:
                    config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"could not parse {args.config}: {exc}") from exc
        else:
            config = {}
        for warning in validate_config(config, strict=args.strict):
            print(f"warning: {warning}", file=sys.stderr)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        if seed < 0:
            raise ConfigError("seed must be >= 0")
        args.out.mkdir(parents=True, exist_ok=True)
        out = _ArtifactDir(args.out, seed=seed, config=config)

        def write_manifest() -> None:
            # No timestamps or durations here: rerunning a scenario with the
            # same config and seed must reproduce every byte.
            manifest = {
                "scenario": args.scenario,
                "version": __version__,
                "artifacts": out.checksums(),
            }
            out.write_json("manifest.json", _jsonable(manifest))

        try:
            message = _SCENARIOS[args.scenario](config, seed, out)
            write_manifest()
        except _VerifyFailure:
            # Keep the report of what failed; the exit code carries the news.
            write_manifest()
            print("verify: FAILED", file=sys.stderr)
            return 1
        except BaseException:
            out.cleanup()
            raise
        print(message)
        return 0
    except (ConfigError, InvalidParameter, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, FitError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

"""Parity between the compiled stepping kernels and the pure fallback.

The two backends share semantics but not floating-point summation order, so
float comparisons use tight tolerances rather than bit equality; the integer
kernel must agree exactly.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from levikal import _kernels, filtering, sim
from levikal._kernels import _py

try:
    from levikal._kernels import _core
except ImportError:
    _core = None

needs_compiled = pytest.mark.skipif(
    _core is None, reason="compiled extension not built"
)


def test_compiled_backend_is_active():
    # the build must not silently fall back to the slow path
    assert _core is not None
    assert _kernels.USING_COMPILED


def _closed_loop_inputs(steps=50_000, seed=42):
    rng = np.random.default_rng(seed)
    n = 2
    a_t = (np.eye(n) + 0.001 * rng.standard_normal((n, n))) * 0.9999
    inputs = dict(
        a_t=np.ascontiguousarray(a_t),
        b_t=rng.standard_normal(n),
        cq=np.ascontiguousarray(1e-3 * rng.standard_normal((n, n))),
        c_t=rng.standard_normal(n),
        sr=0.5,
        a_f=np.ascontiguousarray(a_t * 0.999),
        b_f=rng.standard_normal(n),
        c_f=rng.standard_normal(n),
        kk=1e-2 * rng.standard_normal(n),
        kl=1e-2 * rng.standard_normal(n),
        u_max=5.0,
        wn=rng.standard_normal((steps, n)),
        vn=rng.standard_normal(steps),
        drive=0.1 * np.sin(0.01 * np.arange(steps)),
        fb=(np.arange(steps) % 3 != 0).astype(np.uint8),
    )
    return n, steps, inputs


def _run_closed_loop(impl, n, steps, inputs, stride=7, phase=3):
    rows = sum(1 for i in range(steps) if (phase + i) % stride == 0)
    x = np.array([0.3, -0.2])
    xh = np.zeros(n)
    rec = np.zeros((rows, 7))
    mom = np.zeros(1 + 2 * n + (2 * n) ** 2)
    got = impl.closed_loop_chunk(
        inputs["a_t"], inputs["b_t"], inputs["cq"], inputs["c_t"], inputs["sr"],
        inputs["a_f"], inputs["b_f"], inputs["c_f"], inputs["kk"], inputs["kl"],
        inputs["u_max"], x, xh, inputs["wn"], inputs["vn"], inputs["drive"],
        inputs["fb"], rec, stride, phase, mom, 1,
    )
    return got, x, xh, rec, mom


@needs_compiled
def test_closed_loop_chunk_parity():
    n, steps, inputs = _closed_loop_inputs()
    rows_c, x_c, xh_c, rec_c, mom_c = _run_closed_loop(_core, n, steps, inputs)
    rows_p, x_p, xh_p, rec_p, mom_p = _run_closed_loop(_py, n, steps, inputs)
    assert rows_c == rows_p == rec_c.shape[0]
    np.testing.assert_allclose(x_c, x_p, rtol=1e-10, atol=0)
    np.testing.assert_allclose(xh_c, xh_p, rtol=1e-10, atol=0)
    np.testing.assert_allclose(rec_c, rec_p, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(mom_c, mom_p, rtol=1e-9, atol=0)


@needs_compiled
def test_filter_chunk_parity():
    rng = np.random.default_rng(9)
    m = 2
    a_f = (np.eye(m) + 0.01 * rng.standard_normal((m, m))) * 0.99
    b_f = rng.standard_normal(m)
    c_f = rng.standard_normal(m)
    kk = 0.05 * rng.standard_normal(m)
    kl = 0.05 * rng.standard_normal(m)
    zeta = rng.standard_normal(20_000)

    def run(impl):
        xh = np.zeros(m)
        u = np.empty_like(zeta)
        eps = np.empty_like(zeta)
        impl.filter_chunk(
            np.ascontiguousarray(a_f), b_f, c_f, kk, kl, 2.0, xh, zeta, u, eps
        )
        return xh, u, eps

    xh_c, u_c, eps_c = run(_core)
    xh_p, u_p, eps_p = run(_py)
    np.testing.assert_allclose(xh_c, xh_p, rtol=1e-10, atol=0)
    np.testing.assert_allclose(u_c, u_p, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(eps_c, eps_p, rtol=1e-8, atol=1e-12)


@needs_compiled
def test_fixed_point_chunk_parity_is_exact():
    rng = np.random.default_rng(31)
    m = 2
    frac, io_bits, word_bits = 24, 14, 32
    word_max = (1 << (word_bits - 1)) - 1

    def coeffs(scale):
        return (scale * rng.standard_normal(m) * 2.0**frac).astype(np.int64)

    a_raw = np.ascontiguousarray(
        (0.99 * np.eye(m) * 2.0**frac).astype(np.int64)
        + rng.integers(-1000, 1000, (m, m))
    )
    kin, bu, ky = coeffs(0.01), coeffs(0.02), coeffs(0.5)
    zeta = rng.integers(-(1 << 20), 1 << 20, 30_000).astype(np.int64)

    def run(impl):
        x = np.array([123, -456], dtype=np.int64)
        y = np.zeros(zeta.shape[0], dtype=np.int64)
        overflow, first = impl.fixed_point_chunk(
            a_raw, kin, bu, ky, x, zeta, y, frac, io_bits, word_max
        )
        return overflow, first, x, y

    of_c, fi_c, x_c, y_c = run(_core)
    of_p, fi_p, x_p, y_p = run(_py)
    assert (of_c, fi_c) == (of_p, fi_p)
    np.testing.assert_array_equal(x_c, x_p)
    np.testing.assert_array_equal(y_c, y_p)


def test_kernels_reject_oversize_state():
    big = 9
    with pytest.raises(ValueError, match="dimension"):
        _kernels.closed_loop_chunk(
            np.eye(big), np.zeros(big), np.eye(big), np.zeros(big), 1.0,
            np.eye(big), np.zeros(big), np.zeros(big), np.zeros(big),
            np.zeros(big), 1.0, np.zeros(big), np.zeros(big),
            np.zeros((4, big)), np.zeros(4), np.zeros(4),
            np.zeros(4, dtype=np.uint8), np.zeros((4, 7)), 5, 0,
            np.zeros(1 + 2 * big + 4 * big * big), 0,
        )
    with pytest.raises(ValueError, match="dimension"):
        _kernels.filter_chunk(
            np.eye(big), np.zeros(big), np.zeros(big), np.zeros(big),
            np.zeros(big), 1.0, np.zeros(big), np.zeros(4), np.zeros(4),
            np.zeros(4),
        )
    with pytest.raises(ValueError, match="dimension"):
        _kernels.fixed_point_chunk(
            np.zeros((big, big), dtype=np.int64), np.zeros(big, dtype=np.int64),
            np.zeros(big, dtype=np.int64), np.zeros(big, dtype=np.int64),
            np.zeros(big, dtype=np.int64), np.zeros(4, dtype=np.int64),
            np.zeros(4, dtype=np.int64), 24, 14, (1 << 31) - 1,
        )


@needs_compiled
def test_simulation_agrees_across_backends(tmp_path, disc, gains_soft):
    """A full seeded run in a pure-Python subprocess tracks the compiled one."""
    cfg = sim.SimConfig(seed=77, steps=20_000, burn_in=1 << 12)
    traj = sim.simulate_closed_loop(disc, gains_soft, cfg)
    out = tmp_path / "pure.json"
    script = (
        "import json, sys, numpy as np\n"
        "from levikal import params, statespace, lqg, sim, _kernels\n"
        "pars = params.reference_params()\n"
        "budget = params.decoherence_rates(pars)\n"
        "cont = statespace.build_continuous(budget, pars.omega_z, budget.gamma_th)\n"
        "disc = statespace.discretize(cont, 1.0 / 31.25e6)\n"
        "gains = lqg.synthesize_gains(disc, 2.0 * np.pi * 10e3)\n"
        "traj = sim.simulate_closed_loop(disc, gains, sim.SimConfig(seed=77, "
        "steps=20_000, burn_in=1 << 12))\n"
        "json.dump({'compiled': _kernels.USING_COMPILED,"
        " 'z_tail': traj.z_true[-64:].tolist(),"
        " 'occ': traj.moments.occupation}, open(sys.argv[1], 'w'))\n"
    )
    env = dict(os.environ, LEVIKAL_PURE_PYTHON="1")
    subprocess.run(
        [sys.executable, "-c", script, str(out)], check=True, env=env, timeout=300
    )
    got = json.loads(out.read_text())
    assert got["compiled"] is False
    np.testing.assert_allclose(got["z_tail"], traj.z_true[-64:], rtol=1e-7, atol=1e-12)
    assert got["occ"] == pytest.approx(traj.moments.occupation, rel=1e-7)


@needs_compiled
def test_fixed_point_filter_agrees_across_backends(gains_rated):
    """The integer filter is backend-independent down to the last bit."""
    cfg = filtering.FixedPointConfig(
        word_bits=32,
        frac_bits=24,
        io_bits=14,
        input_full_scale=80.0,
        output_full_scale=1.7e6,
    )
    rng = np.random.default_rng(8)
    zeta = 20.0 * rng.standard_normal(5_000)

    fp = filtering.FixedPointFilter(gains_rated, cfg)
    run_c = fp.run(zeta)

    monkey = pytest.MonkeyPatch()
    try:
        monkey.setattr(filtering._kernels, "fixed_point_chunk", _py.fixed_point_chunk)
        fp2 = filtering.FixedPointFilter(gains_rated, cfg)
        run_p = fp2.run(zeta)
    finally:
        monkey.undo()
    np.testing.assert_array_equal(run_c.y_code, run_p.y_code)
    np.testing.assert_array_equal(run_c.u, run_p.u)
    assert run_c.overflow_count == run_p.overflow_count
    assert run_c.first_overflow == run_p.first_overflow

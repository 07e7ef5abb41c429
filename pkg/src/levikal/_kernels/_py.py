"""Pure-Python reference kernels.

These mirror the compiled versions in ``_core.pyx`` operation for operation.
They are the fallback when the extension is unavailable and the ground truth
for the parity tests. All hot loops are serial by nature (state recursions),
so this backend is 50-100x slower; correctness is identical up to float
reduction order.
"""

from __future__ import annotations

import numpy as np


_MAX_DIM = 8


def backend_name() -> str:
    return "python"


def _check_dim(*dims: int) -> None:
    # same cap as the compiled kernels, which use stack-allocated scratch
    if any(d > _MAX_DIM for d in dims):
        raise ValueError("state dimension exceeds kernel limit")


def closed_loop_chunk(
    a_t,
    b_t,
    cq,
    c_t,
    sr,
    a_f,
    b_f,
    c_f,
    kk,
    kl,
    u_max,
    x,
    xh,
    wn,
    vn,
    drive,
    fb,
    rec,
    stride,
    phase,
    mom,
    mom_on,
):
    """Advance the coupled plant/estimator recursion over one chunk.

    Plant: ``x+ = a_t x + b_t u + cq @ wn[i]``, measurement
    ``zeta = c_t x + sr vn[i]``. Estimator: ``xh+ = a_f xh + b_f u + kk eps``
    with ``eps = zeta - c_f xh``. Control ``u = drive + (-kl xh if fb)``,
    clipped to ``+-u_max``. Rows ``(x0, x1, zeta, xh0, xh1, u, eps)`` are
    recorded at steps where ``(phase + i) % stride == 0``. If ``mom_on``,
    first and second moments of the stacked ``(x, xh)`` vector are
    accumulated into ``mom``. Returns the number of recorded rows.
    """

    n = x.shape[0]
    m = xh.shape[0]
    _check_dim(n, m)
    nm = n + m
    steps = vn.shape[0]
    row = 0
    for i in range(steps):
        zeta = float(c_t @ x) + sr * vn[i]
        eps = zeta - float(c_f @ xh)
        u = drive[i]
        if fb[i]:
            u -= float(kl @ xh)
        if u > u_max:
            u = u_max
        elif u < -u_max:
            u = -u_max
        if (phase + i) % stride == 0:
            rec[row, 0] = x[0]
            rec[row, 1] = x[1] if n > 1 else 0.0
            rec[row, 2] = zeta
            rec[row, 3] = xh[0]
            rec[row, 4] = xh[1] if m > 1 else 0.0
            rec[row, 5] = u
            rec[row, 6] = eps
            row += 1
        if mom_on:
            mom[0] += 1.0
            for j in range(n):
                mom[1 + j] += x[j]
            for j in range(m):
                mom[1 + n + j] += xh[j]
            base = 1 + nm
            for j in range(n):
                vj = x[j]
                for l in range(n):
                    mom[base + j * nm + l] += vj * x[l]
                for l in range(m):
                    mom[base + j * nm + n + l] += vj * xh[l]
            for j in range(m):
                vj = xh[j]
                for l in range(n):
                    mom[base + (n + j) * nm + l] += vj * x[l]
                for l in range(m):
                    mom[base + (n + j) * nm + n + l] += vj * xh[l]
        x_new = a_t @ x + b_t * u + cq @ wn[i]
        xh_new = a_f @ xh + b_f * u + kk * eps
        x[:] = x_new
        xh[:] = xh_new
    return row


def filter_chunk(a_f, b_f, c_f, kk, kl, u_max, xh, zeta, u_out, eps_out):
    """Replay the estimator/controller over a recorded measurement."""
    _check_dim(xh.shape[0])
    steps = zeta.shape[0]
    for i in range(steps):
        eps = zeta[i] - float(c_f @ xh)
        u = -float(kl @ xh)
        if u > u_max:
            u = u_max
        elif u < -u_max:
            u = -u_max
        u_out[i] = u
        eps_out[i] = eps
        xh[:] = a_f @ xh + b_f * u + kk * eps
    return steps


def _trunc_mul(a: int, b: int, frac: int) -> int:
    # Arithmetic right shift floors toward -inf, matching C on int64.
    return (a * b) >> frac


def _round_shift(a: int, s: int) -> int:
    if s <= 0:
        return a << (-s)
    return (a + (1 << (s - 1))) >> s


def fixed_point_chunk(
    a_raw,
    kin_raw,
    bu_raw,
    ky_raw,
    x_raw,
    zeta_raw,
    y_code,
    frac_bits,
    io_bits,
    word_max,
):
    """Integer-arithmetic filter step over a chunk.

    All coefficients and states are two's-complement fixed point with
    ``frac_bits`` fractional bits, stored in int64. Multiplies truncate
    (arithmetic shift); the output is quantized to ``io_bits`` over the
    normalized full scale +-1.0 and saturates there (DAC clip); state rows
    saturate at the word range. Returns ``(overflow_count, first_overflow)``
    with ``first_overflow = -1`` when the flag never asserted.
    """

    m = x_raw.shape[0]
    _check_dim(m)
    steps = zeta_raw.shape[0]
    word_min = -word_max - 1
    code_max = (1 << (io_bits - 1)) - 1
    code_min = -(1 << (io_bits - 1))
    overflow = 0
    first = -1
    x_new = [0] * m
    for i in range(steps):
        z = int(zeta_raw[i])
        acc = 0
        for j in range(m):
            acc += _trunc_mul(int(ky_raw[j]), int(x_raw[j]), frac_bits)
        if acc > word_max:
            acc = word_max
            overflow += 1
            if first < 0:
                first = i
        elif acc < word_min:
            acc = word_min
            overflow += 1
            if first < 0:
                first = i
        code = _round_shift(acc, frac_bits + 1 - io_bits)
        if code > code_max:
            code = code_max
            overflow += 1
            if first < 0:
                first = i
        elif code < code_min:
            code = code_min
            overflow += 1
            if first < 0:
                first = i
        y_raw = _round_shift(code, io_bits - frac_bits - 1)
        y_code[i] = code
        for row in range(m):
            acc = _trunc_mul(int(kin_raw[row]), z, frac_bits)
            acc += _trunc_mul(int(bu_raw[row]), y_raw, frac_bits)
            for j in range(m):
                acc += _trunc_mul(int(a_raw[row, j]), int(x_raw[j]), frac_bits)
            if acc > word_max:
                acc = word_max
                overflow += 1
                if first < 0:
                    first = i
            elif acc < word_min:
                acc = word_min
                overflow += 1
                if first < 0:
                    first = i
            x_new[row] = acc
        for row in range(m):
            x_raw[row] = x_new[row]
    return overflow, first

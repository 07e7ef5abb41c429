# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stepping kernels.

Operation-for-operation mirror of ``_py.py``. The float kernels release the
GIL so ensemble runs can fan out across threads; the integer kernel relies on
arithmetic right shift on int64, which gcc and clang implement as
sign-extending (the pure backend's ``>>`` floors identically).
"""

import numpy as np

cimport cython
from libc.stdint cimport int64_t, uint8_t

DEF MAX_DIM = 8


def backend_name():
    return "cython"


@cython.boundscheck(False)
@cython.wraparound(False)
def closed_loop_chunk(
    double[:, ::1] a_t,
    double[::1] b_t,
    double[:, ::1] cq,
    double[::1] c_t,
    double sr,
    double[:, ::1] a_f,
    double[::1] b_f,
    double[::1] c_f,
    double[::1] kk,
    double[::1] kl,
    double u_max,
    double[::1] x,
    double[::1] xh,
    double[:, ::1] wn,
    double[::1] vn,
    double[::1] drive,
    uint8_t[::1] fb,
    double[:, ::1] rec,
    Py_ssize_t stride,
    Py_ssize_t phase,
    double[::1] mom,
    int mom_on,
):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = xh.shape[0]
    cdef Py_ssize_t nm = n + m
    cdef Py_ssize_t steps = vn.shape[0]
    cdef Py_ssize_t row = 0
    cdef Py_ssize_t i, j, l, base
    cdef double zeta, eps, u, vj
    cdef double x_new[MAX_DIM]
    cdef double xh_new[MAX_DIM]
    if n > MAX_DIM or m > MAX_DIM:
        raise ValueError("state dimension exceeds kernel limit")
    with nogil:
        for i in range(steps):
            zeta = sr * vn[i]
            for j in range(n):
                zeta += c_t[j] * x[j]
            eps = zeta
            for j in range(m):
                eps -= c_f[j] * xh[j]
            u = drive[i]
            if fb[i]:
                for j in range(m):
                    u -= kl[j] * xh[j]
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
            for j in range(n):
                x_new[j] = b_t[j] * u
                for l in range(n):
                    x_new[j] += a_t[j, l] * x[l] + cq[j, l] * wn[i, l]
            for j in range(m):
                xh_new[j] = b_f[j] * u + kk[j] * eps
                for l in range(m):
                    xh_new[j] += a_f[j, l] * xh[l]
            for j in range(n):
                x[j] = x_new[j]
            for j in range(m):
                xh[j] = xh_new[j]
    return row


@cython.boundscheck(False)
@cython.wraparound(False)
def filter_chunk(
    double[:, ::1] a_f,
    double[::1] b_f,
    double[::1] c_f,
    double[::1] kk,
    double[::1] kl,
    double u_max,
    double[::1] xh,
    double[::1] zeta,
    double[::1] u_out,
    double[::1] eps_out,
):
    cdef Py_ssize_t m = xh.shape[0]
    cdef Py_ssize_t steps = zeta.shape[0]
    cdef Py_ssize_t i, j, l
    cdef double eps, u
    cdef double xh_new[MAX_DIM]
    if m > MAX_DIM:
        raise ValueError("state dimension exceeds kernel limit")
    with nogil:
        for i in range(steps):
            eps = zeta[i]
            u = 0.0
            for j in range(m):
                eps -= c_f[j] * xh[j]
                u -= kl[j] * xh[j]
            if u > u_max:
                u = u_max
            elif u < -u_max:
                u = -u_max
            u_out[i] = u
            eps_out[i] = eps
            for j in range(m):
                xh_new[j] = b_f[j] * u + kk[j] * eps
                for l in range(m):
                    xh_new[j] += a_f[j, l] * xh[l]
            for j in range(m):
                xh[j] = xh_new[j]
    return steps


cdef inline int64_t _trunc_mul(int64_t a, int64_t b, int frac) nogil:
    return (a * b) >> frac


cdef inline int64_t _round_shift(int64_t a, int s) nogil:
    if s <= 0:
        return a << (-s)
    return (a + (<int64_t> 1 << (s - 1))) >> s


@cython.boundscheck(False)
@cython.wraparound(False)
def fixed_point_chunk(
    int64_t[:, ::1] a_raw,
    int64_t[::1] kin_raw,
    int64_t[::1] bu_raw,
    int64_t[::1] ky_raw,
    int64_t[::1] x_raw,
    int64_t[::1] zeta_raw,
    int64_t[::1] y_code,
    int frac_bits,
    int io_bits,
    int64_t word_max,
):
    cdef Py_ssize_t m = x_raw.shape[0]
    cdef Py_ssize_t steps = zeta_raw.shape[0]
    cdef int64_t word_min = -word_max - 1
    cdef int64_t code_max = (<int64_t> 1 << (io_bits - 1)) - 1
    cdef int64_t code_min = -(<int64_t> 1 << (io_bits - 1))
    cdef long overflow = 0
    cdef Py_ssize_t first = -1
    cdef Py_ssize_t i, j, row
    cdef int64_t z, acc, code, y_raw
    cdef int64_t x_new[MAX_DIM]
    if m > MAX_DIM:
        raise ValueError("state dimension exceeds kernel limit")
    with nogil:
        for i in range(steps):
            z = zeta_raw[i]
            acc = 0
            for j in range(m):
                acc += _trunc_mul(ky_raw[j], x_raw[j], frac_bits)
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
                acc = _trunc_mul(kin_raw[row], z, frac_bits)
                acc += _trunc_mul(bu_raw[row], y_raw, frac_bits)
                for j in range(m):
                    acc += _trunc_mul(a_raw[row, j], x_raw[j], frac_bits)
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

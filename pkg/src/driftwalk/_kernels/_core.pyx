# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stepping kernels.

Semantics, noise-consumption order, and operation order mirror
``_fallback`` exactly; see that module for the reference documentation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow, sqrt

from ..errors import ChainBlowUpError, SimulationOverflowError
from ._fallback import BLOCK as _PY_BLOCK
from ._fallback import _clamp_factor, draw_block

BLOCK = _PY_BLOCK


def run_walk_batch(
    S,
    n0,
    n1,
    *,
    linear,
    A,
    rho,
    alpha,
    beta,
    Sigma,
    L0,
    L0inv,
    strict,
    gaussian,
    gens,
    checkpoints=None,
    out_checks=None,
    noise_scale=1.0,
):
    cdef double[:, ::1] Sv = S
    cdef Py_ssize_t B = Sv.shape[0]
    cdef Py_ssize_t d = Sv.shape[1]
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] L0v = np.ascontiguousarray(L0, dtype=np.float64)
    cdef double[:, ::1] L0iv = np.ascontiguousarray(L0inv, dtype=np.float64)
    Sigma_np = np.ascontiguousarray(Sigma, dtype=np.float64)

    cps_np = np.asarray(checkpoints if checkpoints is not None else [], dtype=np.int64)
    cdef cnp.int64_t[::1] cps = cps_np
    cdef Py_ssize_t n_cps = cps.shape[0]
    dummy = np.empty((B, max(n_cps, 1), d), dtype=np.float64)
    cdef double[:, :, ::1] ocv = out_checks if out_checks is not None else dummy

    clamps_np = np.zeros(B, dtype=np.int64)
    cdef cnp.int64_t[::1] clamps = clamps_np

    cdef bint c_linear = bool(linear)
    cdef bint c_strict = bool(strict)
    cdef double c_rho = float(rho)
    cdef double c_alpha = float(alpha)
    cdef double c_beta = float(beta)
    cdef double ns = float(noise_scale)
    cdef long long start = int(n0)
    cdef long long stop = int(n1)

    scratch = np.zeros((4, d), dtype=np.float64)
    cdef double[:, ::1] work = scratch  # rows: mu, w, v, U
    cdef double[:, ::1] buf
    cdef Py_ssize_t b, t, i, j, cp0, cp_idx
    cdef long long m, n, take
    cdef double acc, nrm2, nrm, fac, w2, w2c, theta, q, tq, x, worst

    cp0 = int(np.searchsorted(cps_np, start, side="right"))

    for b in range(B):
        gen = gens[b]
        n = start
        cp_idx = cp0
        while n < stop:
            take = stop - n
            if take > BLOCK:
                take = BLOCK
            block = draw_block(gen, gaussian, (int(take), int(d)))
            buf = np.ascontiguousarray(block, dtype=np.float64)
            for t in range(take):
                m = n + t
                # drift
                if m == 0:
                    for i in range(d):
                        work[0, i] = 0.0
                elif c_linear:
                    for i in range(d):
                        acc = Av[i, 0] * Sv[b, 0]
                        for j in range(1, d):
                            acc = acc + Av[i, j] * Sv[b, j]
                        work[0, i] = acc / m
                else:
                    nrm2 = Sv[b, 0] * Sv[b, 0]
                    for j in range(1, d):
                        nrm2 = nrm2 + Sv[b, j] * Sv[b, j]
                    nrm = sqrt(nrm2)
                    if nrm > 0.0:
                        fac = c_rho * pow(<double> m, -c_beta) * pow(nrm, c_alpha - 1.0)
                    else:
                        fac = 0.0
                    for i in range(d):
                        work[0, i] = fac * Sv[b, i]

                # innovation
                if c_strict and m >= 1:
                    for i in range(d):
                        acc = L0iv[i, 0] * work[0, 0]
                        for j in range(1, d):
                            acc = acc + L0iv[i, j] * work[0, j]
                        work[1, i] = acc
                    w2 = work[1, 0] * work[1, 0]
                    for j in range(1, d):
                        w2 = w2 + work[1, j] * work[1, j]
                    if w2 > 1.0:
                        w2c = 1.0
                    else:
                        w2c = w2
                    if w2c > 0.0:
                        theta = (1.0 - sqrt(1.0 - w2c)) / w2c
                    else:
                        theta = 0.0
                    q = work[1, 0] * buf[t, 0]
                    for j in range(1, d):
                        q = q + work[1, j] * buf[t, j]
                    tq = theta * q
                    for i in range(d):
                        work[2, i] = buf[t, i] - tq * work[1, i]
                    for i in range(d):
                        acc = L0v[i, 0] * work[2, 0]
                        for j in range(1, d):
                            acc = acc + L0v[i, j] * work[2, j]
                        work[3, i] = acc
                    if w2 > 1.0:
                        F = _clamp_factor(Sigma_np, np.asarray(work[0]).copy())
                        U_clamp = F @ np.asarray(buf[t]).copy()
                        for i in range(d):
                            work[3, i] = U_clamp[i]
                        clamps[b] += 1
                else:
                    for i in range(d):
                        acc = L0v[i, 0] * buf[t, 0]
                        for j in range(1, d):
                            acc = acc + L0v[i, j] * buf[t, j]
                        work[3, i] = acc

                for i in range(d):
                    x = work[0, i] + ns * work[3, i]
                    Sv[b, i] = Sv[b, i] + x
                if cp_idx < n_cps and m + 1 == cps[cp_idx]:
                    for i in range(d):
                        ocv[b, cp_idx, i] = Sv[b, i]
                    cp_idx += 1
            n += take
            worst = 0.0
            for i in range(d):
                x = Sv[b, i]
                if x < 0.0:
                    x = -x
                if x > worst or x != x:
                    worst = x
            if worst != worst or worst > 1e280:
                raise SimulationOverflowError(
                    f"walk state left the float range before step {n}", step=int(n)
                )
    return clamps_np


def run_em_batch(X, n_steps, *, alpha, dt, Ldt, gens, noise_scale=1.0, guard=1e6):
    cdef double[:, ::1] Xv = X
    cdef Py_ssize_t B = Xv.shape[0]
    cdef Py_ssize_t d = Xv.shape[1]
    cdef double[:, ::1] Lv = np.ascontiguousarray(Ldt, dtype=np.float64)
    cdef double c_alpha = float(alpha)
    cdef double c_dt = float(dt)
    cdef double ns = float(noise_scale)
    cdef double c_guard = float(guard)
    cdef long long total = int(n_steps)

    cdef double[:, ::1] buf
    cdef Py_ssize_t b, t, i, j
    cdef long long done, take
    cdef double nrm2, nrm, hfac, acc, x, worst

    for b in range(B):
        gen = gens[b]
        done = 0
        while done < total:
            take = total - done
            if take > BLOCK:
                take = BLOCK
            block = draw_block(gen, True, (int(take), int(d)))
            buf = np.ascontiguousarray(block, dtype=np.float64)
            for t in range(take):
                nrm2 = Xv[b, 0] * Xv[b, 0]
                for j in range(1, d):
                    nrm2 = nrm2 + Xv[b, j] * Xv[b, j]
                nrm = sqrt(nrm2)
                if nrm > 0.0:
                    hfac = pow(nrm, c_alpha - 1.0)
                else:
                    hfac = 0.0
                for i in range(d):
                    acc = Lv[i, 0] * buf[t, 0]
                    for j in range(1, d):
                        acc = acc + Lv[i, j] * buf[t, j]
                    x = c_dt * (-0.5 * Xv[b, i] + hfac * Xv[b, i]) + ns * acc
                    Xv[b, i] = Xv[b, i] + x
            done += take
            worst = 0.0
            for i in range(d):
                x = Xv[b, i]
                if x < 0.0:
                    x = -x
                if x > worst or x != x:
                    worst = x
            if worst != worst or worst > c_guard:
                raise ChainBlowUpError(
                    f"chain escaped the divergence guard (|x| > {guard:g})"
                )
    return np.asarray(Xv)

# cython: language_level=3
# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path-sampling kernel.

Same algorithm and draw sequence as ``_pathkernel_py``: exact propagator
marching on a coarse bracket grid, dyadic bisection of the jump time
inside a bracketing step, cumulative channel inversion.  Scalar complex
arithmetic on small matrices keeps the inner loop allocation-free.
"""

import numpy as np

from libc.math cimport ldexp

BACKEND = "cython"
DRAW_CHUNK = 256


cdef class _Draws:
    cdef object gen
    cdef double[::1] buf
    cdef Py_ssize_t i
    cdef Py_ssize_t size

    def __init__(self, gen):
        self.gen = gen
        self.buf = np.empty(0)
        self.i = 0
        self.size = 0

    cdef double next_unit(self):
        cdef double u
        while True:
            if self.i >= self.size:
                arr = self.gen.random(DRAW_CHUNK)
                self.buf = arr
                self.size = arr.shape[0]
                self.i = 0
            u = self.buf[self.i]
            self.i += 1
            if u > 0.0:
                return u


cdef inline void _matmul(double complex[:, ::1] a, double complex[:, ::1] b,
                         double complex[:, ::1] out, int n) noexcept:
    cdef int i, j, k
    cdef double complex acc
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc


cdef inline void _copy(double complex[:, ::1] src, double complex[:, ::1] dst, int n) noexcept:
    cdef int i, j
    for i in range(n):
        for j in range(n):
            dst[i, j] = src[i, j]


cdef inline void _eye(double complex[:, ::1] dst, int n) noexcept:
    cdef int i, j
    for i in range(n):
        for j in range(n):
            dst[i, j] = 1.0 if i == j else 0.0


cdef inline double _trace_real(double complex[:, ::1] m, int n) noexcept:
    cdef double s = 0.0
    cdef int i
    for i in range(n):
        s += m[i, i].real
    return s


cdef inline void _congr(double complex[:, ::1] f, double complex[:, ::1] sig,
                        double complex[:, ::1] tmp, double complex[:, ::1] out, int n) noexcept:
    # out = f sig f^dag
    cdef int i, j, k
    cdef double complex acc
    _matmul(f, sig, tmp, n)
    for i in range(n):
        for j in range(n):
            acc = 0
            for k in range(n):
                acc = acc + tmp[i, k] * f[j, k].conjugate()
            out[i, j] = acc


cdef inline double _surv(double complex[:, ::1] f, double complex[:, ::1] sig,
                         double complex[:, ::1] tmp, int n) noexcept:
    # Tr(f sig f^dag)
    cdef int i, j
    cdef double s = 0.0
    _matmul(f, sig, tmp, n)
    for i in range(n):
        for j in range(n):
            s += (tmp[i, j] * f[i, j].conjugate()).real
    return s


cdef void _compose(double complex[:, :, ::1] ladder, double frac,
                   double complex[:, ::1] f, double complex[:, ::1] tmp, int n) noexcept:
    # f := exp(frac * bracket_dt * d0) composed from dyadic ladder bits
    cdef double rest = frac
    cdef double w
    cdef Py_ssize_t m
    _eye(f, n)
    for m in range(1, ladder.shape[0]):
        w = ldexp(1.0, -<int> m)
        if rest >= w:
            _matmul(f, ladder[m], tmp, n)
            _copy(tmp, f, n)
            rest -= w
        if rest <= 0.0:
            break


cdef double _bisect(double complex[:, :, ::1] ladder, double bracket_dt,
                    double complex[:, ::1] sig, double u, double time_tol,
                    double complex[:, ::1] f_lo, double complex[:, ::1] f_cand,
                    double complex[:, ::1] tmp, int n) noexcept:
    cdef double lo = 0.0
    cdef double step
    cdef Py_ssize_t m
    _eye(f_lo, n)
    for m in range(1, ladder.shape[0]):
        step = bracket_dt * ldexp(1.0, -<int> m)
        if step < 0.5 * time_tol:
            break
        _matmul(f_lo, ladder[m], f_cand, n)
        if _surv(f_cand, sig, tmp, n) > u:
            _copy(f_cand, f_lo, n)
            lo += step
    return lo


def simulate_path(ladder_in, double bracket_dt, jump_ops_in, disps_in, rate_op_in,
                  rho0_in, x0_in, double t_max, double time_tol, checkpoints_in,
                  gen, bint record_events):
    """Sample one path; same contract as ``_pathkernel_py.simulate_path``."""
    cdef double complex[:, :, ::1] ladder = np.ascontiguousarray(ladder_in, dtype=np.complex128)
    cdef double complex[:, :, ::1] jump_ops = np.ascontiguousarray(jump_ops_in, dtype=np.complex128)
    cdef long long[:, ::1] disps = np.ascontiguousarray(disps_in, dtype=np.int64)
    cdef double complex[:, ::1] rate_op = np.ascontiguousarray(rate_op_in, dtype=np.complex128)
    cdef double[::1] checkpoints = np.ascontiguousarray(checkpoints_in, dtype=np.float64)

    cdef int n = <int> ladder.shape[1]
    cdef int n_ch = <int> jump_ops.shape[0]
    cdef int d = <int> disps.shape[1]
    cdef Py_ssize_t ncp = checkpoints.shape[0]

    sigma_arr = np.array(rho0_in, dtype=np.complex128, order="C")
    occ_arr = np.zeros((n, n), dtype=np.complex128)
    tmp_arr = np.empty((n, n), dtype=np.complex128)
    buf1_arr = np.empty((n, n), dtype=np.complex128)
    buf2_arr = np.empty((n, n), dtype=np.complex128)
    buf3_arr = np.empty((n, n), dtype=np.complex128)
    x_arr = np.array(x0_in, dtype=np.int64)
    cp_arr = np.zeros((max(ncp, 1), d), dtype=np.int64)
    jc_arr = np.zeros(n_ch, dtype=np.int64)
    rates_arr = np.empty(n_ch, dtype=np.float64)

    cdef double complex[:, ::1] sigma = sigma_arr
    cdef double complex[:, ::1] occ = occ_arr
    cdef double complex[:, ::1] tmp = tmp_arr
    cdef double complex[:, ::1] buf1 = buf1_arr
    cdef double complex[:, ::1] buf2 = buf2_arr
    cdef double complex[:, ::1] buf3 = buf3_arr
    cdef long long[::1] x = x_arr
    cdef long long[:, ::1] cp_out = cp_arr
    cdef long long[::1] jump_counts = jc_arr
    cdef double[::1] rates = rates_arr

    cdef _Draws draws = _Draws(gen)
    cdef double surv = _trace_real(sigma, n)
    cdef double t_node = 0.0
    cdef Py_ssize_t ci = 0
    cdef double u, v, remaining, s_next, tau_local, s_tau, h, total, target, acc, w
    cdef int i, j, r, pick, last_pos

    ev_t = []
    ev_c = []
    ev_x = []
    ev_s = []

    if t_max > 0.0:
        u = draws.next_unit()
        while True:
            remaining = t_max - t_node
            if remaining <= 0.0:
                break
            if bracket_dt <= remaining:
                _congr(ladder[0], sigma, tmp, buf1, n)   # buf1 = sigma at next node
                s_next = _trace_real(buf1, n)
                if s_next > u:
                    h = bracket_dt
                    for i in range(n):
                        for j in range(n):
                            occ[i, j] = occ[i, j] + (h / 2.0) * (sigma[i, j] / surv + buf1[i, j] / s_next)
                    _copy(buf1, sigma, n)
                    surv = s_next
                    t_node += bracket_dt
                    continue
            else:
                _compose(ladder, remaining / bracket_dt, buf2, tmp, n)
                _congr(buf2, sigma, tmp, buf1, n)
                s_next = _trace_real(buf1, n)
                if s_next > u:
                    h = remaining
                    for i in range(n):
                        for j in range(n):
                            occ[i, j] = occ[i, j] + (h / 2.0) * (sigma[i, j] / surv + buf1[i, j] / s_next)
                    _copy(buf1, sigma, n)
                    surv = s_next
                    break

            # the jump lands in this bracket: refine, select, apply
            tau_local = _bisect(ladder, bracket_dt, sigma, u, time_tol, buf2, buf3, tmp, n)
            if tau_local <= 0.0:
                tau_local = time_tol if time_tol < remaining else remaining
            _congr(buf2, sigma, tmp, buf1, n)            # buf1 = sigma at jump time
            s_tau = _trace_real(buf1, n)
            for i in range(n):
                for j in range(n):
                    occ[i, j] = occ[i, j] + (tau_local / 2.0) * (sigma[i, j] / surv + buf1[i, j] / s_tau)
                    buf1[i, j] = buf1[i, j] / s_tau      # buf1 = normalized pre-jump state
            t_node = t_node + tau_local
            if t_node > t_max:
                t_node = t_max
            while ci < ncp and checkpoints[ci] < t_node:
                for j in range(d):
                    cp_out[ci, j] = x[j]
                ci += 1
            v = draws.next_unit()
            total = 0.0
            for r in range(n_ch):
                w = _surv(jump_ops[r], buf1, tmp, n)
                if w < 0.0:
                    w = 0.0
                rates[r] = w
                total += w
            if total <= 1e-14:
                raise ArithmeticError("total jump rate vanished; no channel can fire")
            target = v * total
            acc = 0.0
            pick = 0
            last_pos = 0
            for r in range(n_ch):
                if rates[r] > 0.0:
                    last_pos = r
                acc += rates[r]
                if target < acc:
                    pick = r
                    break
            else:
                pick = last_pos
            _congr(jump_ops[pick], buf1, tmp, buf2, n)   # buf2 = unnormalized post state
            s_next = _trace_real(buf2, n)
            for i in range(n):
                for j in range(n):
                    buf2[i, j] = buf2[i, j] / s_next
            for i in range(n):
                for j in range(n):
                    sigma[i, j] = (buf2[i, j] + buf2[j, i].conjugate()) / 2.0
            surv = _trace_real(sigma, n)
            for j in range(d):
                x[j] = x[j] + disps[pick, j]
            jump_counts[pick] += 1
            if record_events:
                ev_t.append(t_node)
                ev_c.append(pick + 1)
                ev_x.append(x_arr.copy())
                ev_s.append(sigma_arr.copy())
            u = draws.next_unit()

    rho_final = sigma_arr / surv
    rho_final = (rho_final + rho_final.conj().T) / 2.0
    while ci < ncp and checkpoints[ci] <= t_max:
        for j in range(d):
            cp_out[ci, j] = x[j]
        ci += 1
    absorbed = bool(np.trace(np.asarray(rate_op_in) @ rho_final).real <= 1e-14)

    events = None
    if record_events:
        events = (
            np.array(ev_t, dtype=float),
            np.array(ev_c, dtype=np.int64),
            np.array(ev_x, dtype=np.int64).reshape(len(ev_x), d),
            np.array(ev_s, dtype=complex).reshape(len(ev_s), n, n),
        )
    return rho_final, x_arr, occ_arr, cp_arr[:ncp], jc_arr, absorbed, events

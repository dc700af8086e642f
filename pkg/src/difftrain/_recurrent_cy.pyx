# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled gated-recurrence kernels; contract identical to _recurrent_np."""

import numpy as np

from libc.math cimport tanh


cdef inline double _sigmoid(double x) noexcept nogil:
    return 0.5 * (tanh(0.5 * x) + 1.0)


cdef void _matvec_t(const double[:, ::1] m, const double* v, double* out,
                    Py_ssize_t n) noexcept nogil:
    # out = m.T @ v; accumulation form (no reduction) so the compiler can
    # vectorize without reassociating float sums
    cdef Py_ssize_t i, j
    cdef double vi
    for j in range(n):
        out[j] = 0.0
    for i in range(n):
        vi = v[i]
        for j in range(n):
            out[j] += m[i, j] * vi


def gru_forward_scan(const double[:, ::1] gx, uz, ur, uc,
                     const double[::1] h0):
    cdef Py_ssize_t t_len = gx.shape[0]
    cdef Py_ssize_t h_dim = gx.shape[1] // 3
    # transposed copies turn every recurrent matvec into the accumulation
    # form; the one-off cost is tiny next to the scan itself
    cdef double[:, ::1] uz_t = np.ascontiguousarray(np.asarray(uz).T)
    cdef double[:, ::1] ur_t = np.ascontiguousarray(np.asarray(ur).T)
    cdef double[:, ::1] uc_t = np.ascontiguousarray(np.asarray(uc).T)
    h_arr = np.empty((t_len, h_dim))
    z_arr = np.empty((t_len, h_dim))
    r_arr = np.empty((t_len, h_dim))
    c_arr = np.empty((t_len, h_dim))
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] r = r_arr
    cdef double[:, ::1] c = c_arr
    scratch = np.empty(4 * h_dim)
    cdef double[::1] buf = scratch
    cdef double* h_prev = &buf[0]
    cdef double* az = &buf[h_dim]
    cdef double* ar = &buf[2 * h_dim]
    cdef double* ac = &buf[3 * h_dim]
    cdef Py_ssize_t t, i, j
    cdef double z_tj, r_tj, c_tj, hv
    with nogil:
        for j in range(h_dim):
            h_prev[j] = h0[j]
        for t in range(t_len):
            for j in range(h_dim):
                az[j] = gx[t, j]
                ar[j] = gx[t, h_dim + j]
            for i in range(h_dim):
                hv = h_prev[i]
                for j in range(h_dim):
                    az[j] += uz_t[i, j] * hv
                for j in range(h_dim):
                    ar[j] += ur_t[i, j] * hv
            for j in range(h_dim):
                z[t, j] = _sigmoid(az[j])
                r_tj = _sigmoid(ar[j])
                r[t, j] = r_tj
                ar[j] = r_tj * h_prev[j]      # reuse as r * h_prev
                ac[j] = gx[t, 2 * h_dim + j]
            for i in range(h_dim):
                hv = ar[i]
                for j in range(h_dim):
                    ac[j] += uc_t[i, j] * hv
            for j in range(h_dim):
                c_tj = tanh(ac[j])
                c[t, j] = c_tj
                z_tj = z[t, j]
                h[t, j] = (1.0 - z_tj) * h_prev[j] + z_tj * c_tj
            for j in range(h_dim):
                h_prev[j] = h[t, j]
    return h_arr, z_arr, r_arr, c_arr


def gru_backward_scan(const double[:, ::1] dh, const double[:, ::1] z,
                      const double[:, ::1] r, const double[:, ::1] c,
                      const double[:, ::1] h, const double[::1] h0,
                      const double[:, ::1] uz, const double[:, ::1] ur,
                      const double[:, ::1] uc):
    cdef Py_ssize_t t_len = dh.shape[0]
    cdef Py_ssize_t h_dim = dh.shape[1]
    dg_arr = np.empty((t_len, 3 * h_dim))
    cdef double[:, ::1] dg = dg_arr
    scratch = np.empty(6 * h_dim)
    cdef double[::1] buf = scratch
    cdef double* carry = &buf[0]
    cdef double* total = &buf[h_dim]
    cdef double* through_c = &buf[2 * h_dim]
    cdef double* tz = &buf[3 * h_dim]
    cdef double* tr = &buf[4 * h_dim]
    cdef double* dgz = &buf[5 * h_dim]
    cdef Py_ssize_t t, j
    cdef double h_prev_j, z_tj, r_tj, c_tj, dgz_j, dgr_j, dgc_j
    with nogil:
        for j in range(h_dim):
            carry[j] = 0.0
        for t in range(t_len - 1, -1, -1):
            for j in range(h_dim):
                total[j] = dh[t, j] + carry[j]
            for j in range(h_dim):
                h_prev_j = h[t - 1, j] if t > 0 else h0[j]
                z_tj = z[t, j]
                c_tj = c[t, j]
                dgz_j = total[j] * (c_tj - h_prev_j) * z_tj * (1.0 - z_tj)
                dgc_j = total[j] * z_tj * (1.0 - c_tj * c_tj)
                dg[t, j] = dgz_j
                dg[t, 2 * h_dim + j] = dgc_j
                dgz[j] = dgc_j  # reuse as dgc buffer for the transposed matvec
            _matvec_t(uc, dgz, through_c, h_dim)
            for j in range(h_dim):
                h_prev_j = h[t - 1, j] if t > 0 else h0[j]
                r_tj = r[t, j]
                dgr_j = through_c[j] * h_prev_j * r_tj * (1.0 - r_tj)
                dg[t, h_dim + j] = dgr_j
                carry[j] = total[j] * (1.0 - z[t, j]) + through_c[j] * r_tj
            for j in range(h_dim):
                dgz[j] = dg[t, j]
            _matvec_t(uz, dgz, tz, h_dim)
            for j in range(h_dim):
                dgz[j] = dg[t, h_dim + j]
            _matvec_t(ur, dgz, tr, h_dim)
            for j in range(h_dim):
                carry[j] += tz[j] + tr[j]
    return dg_arr

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled machine kernels; same contract as ``_pykernels``."""
import numpy as np
from libc.math cimport sin, cos, exp, sqrt, M_PI
from scipy.linalg.cython_blas cimport dgemv

cdef double OMEGA_BASE = 120.0 * M_PI

# parameter columns, must match netmodel.PARAM_NAMES
cdef enum:
    H = 0
    D = 1
    XD = 2
    XQ = 3
    XD_P = 4
    XQ_P = 5
    RA = 6
    TDO_P = 7
    TQO_P = 8
    TCH = 9
    TGV = 10
    R_GOV = 11
    KA = 12
    TA = 13
    KF = 14
    TF = 15
    KE = 16
    TE = 17
    AE = 18
    BE = 19


cdef inline void _current(const double[::1] x, const double[::1] theta, const double[::1] vb,
                          const double[:, ::1] g, const double[:, ::1] b,
                          const double[:, ::1] gb, const double[:, ::1] bb,
                          Py_ssize_t i, double* i_d, double* i_q) noexcept nogil:
    cdef Py_ssize_t j, ng = x.shape[0] // 9, nb = theta.shape[0]
    cdef double di = x[9 * i], phi, c, s, a, bm, ed, eq, sd = 0.0, sq = 0.0
    for j in range(ng):
        phi = di - x[9 * j]
        c = cos(phi)
        s = sin(phi)
        a = g[i, j] * c + b[i, j] * s
        bm = g[i, j] * s - b[i, j] * c
        ed = x[9 * j + 6]
        eq = x[9 * j + 7]
        sd += ed * a + eq * bm
        sq += eq * a - ed * bm
    for j in range(nb):
        phi = di - theta[j]
        c = cos(phi)
        s = sin(phi)
        sd += vb[j] * (gb[i, j] * s - bb[i, j] * c)
        sq += vb[j] * (gb[i, j] * c + bb[i, j] * s)
    i_d[0] = sd
    i_q[0] = sq


cdef void _rhs_rows(const double[::1] x, const double[::1] theta, const double[::1] vb,
                    const double[:, ::1] g, const double[:, ::1] b,
                    const double[:, ::1] gb, const double[:, ::1] bb,
                    const double[:, ::1] p, const double[::1] pref, const double[::1] vref,
                    const Py_ssize_t[::1] rows, double[::1] out) noexcept nogil:
    cdef Py_ssize_t r, i, o
    cdef double i_d, i_q, dw, vd, vq, vt
    cdef double pm, pgv, vr, rf, efd, ed, eq
    for r in range(rows.shape[0]):
        i = rows[r]
        o = 9 * r
        _current(x, theta, vb, g, b, gb, bb, i, &i_d, &i_q)
        pm = x[9 * i + 1]
        pgv = x[9 * i + 2]
        vr = x[9 * i + 3]
        rf = x[9 * i + 4]
        efd = x[9 * i + 5]
        ed = x[9 * i + 6]
        eq = x[9 * i + 7]
        dw = x[9 * i + 8] - 1.0
        vd = ed - p[i, RA] * i_d + p[i, XD_P] * i_q
        vq = eq - p[i, RA] * i_q - p[i, XD_P] * i_d
        vt = sqrt(vd * vd + vq * vq)
        out[o] = OMEGA_BASE * dw
        out[o + 1] = (pgv - pm) / p[i, TCH]
        out[o + 2] = (pref[i] - pgv - dw / p[i, R_GOV]) / p[i, TGV]
        out[o + 3] = (-vr + p[i, KA] * rf - p[i, KA] * p[i, KF] / p[i, TF] * efd
                      + p[i, KA] * (vref[i] - vt)) / p[i, TA]
        out[o + 4] = (-rf + p[i, KF] / p[i, TF] * efd) / p[i, TF]
        out[o + 5] = (-(p[i, KE] + p[i, AE] * exp(p[i, BE] * efd)) * efd + vr) / p[i, TE]
        out[o + 6] = (-ed + (p[i, XQ] - p[i, XQ_P]) * i_q) / p[i, TQO_P]
        out[o + 7] = (-eq - (p[i, XD] - p[i, XD_P]) * i_d + efd) / p[i, TDO_P]
        out[o + 8] = (pm - ed * i_d - eq * i_q - p[i, D] * dw) / (2.0 * p[i, H])


def currents(const double[::1] x, const double[::1] theta, const double[::1] vb,
             const double[:, ::1] g, const double[:, ::1] b,
             const double[:, ::1] gb, const double[:, ::1] bb, rows):
    cdef const Py_ssize_t[::1] r = np.ascontiguousarray(rows, dtype=np.intp)
    cdef Py_ssize_t k, n = r.shape[0]
    i_d = np.empty(n)
    i_q = np.empty(n)
    cdef double[::1] vd = i_d, vq = i_q
    with nogil:
        for k in range(n):
            _current(x, theta, vb, g, b, gb, bb, r[k], &vd[k], &vq[k])
    return i_d, i_q


def rhs_rows(const double[::1] x, const double[::1] theta, const double[::1] vb,
             const double[:, ::1] g, const double[:, ::1] b,
             const double[:, ::1] gb, const double[:, ::1] bb,
             const double[:, ::1] params, const double[::1] pref, const double[::1] vref, rows):
    cdef const Py_ssize_t[::1] r = np.ascontiguousarray(rows, dtype=np.intp)
    out = np.empty(9 * r.shape[0])
    cdef double[::1] o = out
    with nogil:
        _rhs_rows(x, theta, vb, g, b, gb, bb, params, pref, vref, r, o)
    return out


def rhs_all(const double[::1] x, const double[::1] theta, const double[::1] vb,
            const double[:, ::1] g, const double[:, ::1] b,
            const double[:, ::1] gb, const double[:, ::1] bb,
            const double[:, ::1] params, const double[::1] pref, const double[::1] vref):
    rows = np.arange(x.shape[0] // 9, dtype=np.intp)
    return rhs_rows(x, theta, vb, g, b, gb, bb, params, pref, vref, rows)


def rk4_step(const double[::1] x, const double[::1] theta, const double[::1] vb,
             const double[:, ::1] g, const double[:, ::1] b,
             const double[:, ::1] gb, const double[:, ::1] bb,
             const double[:, ::1] params, const double[::1] pref, const double[::1] vref,
             double h):
    return rk4_step_staged(x, theta, vb, theta, vb, theta, vb, g, b, gb, bb,
                           params, pref, vref, h)


def rk4_step_staged(const double[::1] x,
                    const double[::1] th1, const double[::1] vb1,
                    const double[::1] th2, const double[::1] vb2,
                    const double[::1] th4, const double[::1] vb4,
                    const double[:, ::1] g, const double[:, ::1] b,
                    const double[:, ::1] gb, const double[:, ::1] bb,
                    const double[:, ::1] params, const double[::1] pref, const double[::1] vref,
                    double h):
    cdef Py_ssize_t n = x.shape[0], k
    rows_arr = np.arange(n // 9, dtype=np.intp)
    cdef const Py_ssize_t[::1] rows = rows_arr
    work = np.empty((5, n))
    out = np.empty(n)
    cdef double[:, ::1] w = work
    cdef double[::1] xn = out
    cdef double[::1] k1 = w[0], k2 = w[1], k3 = w[2], k4 = w[3], xt = w[4]
    with nogil:
        _rhs_rows(x, th1, vb1, g, b, gb, bb, params, pref, vref, rows, k1)
        for k in range(n):
            xt[k] = x[k] + 0.5 * h * k1[k]
        _rhs_rows(xt, th2, vb2, g, b, gb, bb, params, pref, vref, rows, k2)
        for k in range(n):
            xt[k] = x[k] + 0.5 * h * k2[k]
        _rhs_rows(xt, th2, vb2, g, b, gb, bb, params, pref, vref, rows, k3)
        for k in range(n):
            xt[k] = x[k] + h * k3[k]
        _rhs_rows(xt, th4, vb4, g, b, gb, bb, params, pref, vref, rows, k4)
        for k in range(n):
            xn[k] = x[k] + (h / 6.0) * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
    return out


cdef void _affine_rhs(const double[::1] x, const double[::1] x0,
                      const Py_ssize_t[::1] exact, const Py_ssize_t[::1] lin_pos,
                      const double[:, ::1] g_l, const double[:, :, ::1] m_l,
                      const double[:, ::1] f0_l,
                      const double[::1] theta, const double[::1] vb,
                      const double[:, ::1] g, const double[:, ::1] b,
                      const double[:, ::1] gb, const double[:, ::1] bb,
                      const double[:, ::1] p, const double[::1] pref, const double[::1] vref,
                      double[::1] dnet, double[::1] di, double[::1] tmp,
                      double[::1] out) noexcept nogil:
    cdef Py_ssize_t ng = x.shape[0] // 9, nl = lin_pos.shape[0], ne = exact.shape[0]
    cdef Py_ssize_t j, r, c, l, i, a
    cdef double s, one = 1.0, zero = 0.0
    cdef int m, nrow, inc = 1
    cdef char trans = b'T'
    if nl:
        for j in range(ng):
            dnet[3 * j] = x[9 * j] - x0[9 * j]
            dnet[3 * j + 1] = x[9 * j + 6] - x0[9 * j + 6]
            dnet[3 * j + 2] = x[9 * j + 7] - x0[9 * j + 7]
        # di = g_l @ dnet; the C-ordered g_l is the transpose in BLAS terms
        m = 3 * ng
        nrow = 2 * nl
        dgemv(&trans, &m, &nrow, &one, &g_l[0, 0], &m, &dnet[0], &inc, &zero, &di[0], &inc)
        for l in range(nl):
            i = lin_pos[l]
            for a in range(9):
                s = f0_l[l, a] + m_l[l, a, 9] * di[2 * l] + m_l[l, a, 10] * di[2 * l + 1]
                for c in range(9):
                    s += m_l[l, a, c] * (x[9 * i + c] - x0[9 * i + c])
                out[9 * i + a] = s
    if ne:
        _rhs_rows(x, theta, vb, g, b, gb, bb, p, pref, vref, exact, tmp)
        for r in range(ne):
            i = exact[r]
            for a in range(9):
                out[9 * i + a] = tmp[9 * r + a]


def affine_rk4_step(const double[::1] x, const double[::1] x0, exact, lin_pos,
                    const double[:, ::1] g_l, const double[:, :, ::1] m_l,
                    const double[:, ::1] f0_l,
                    const double[::1] theta, const double[::1] vb,
                    const double[:, ::1] g, const double[:, ::1] b,
                    const double[:, ::1] gb, const double[:, ::1] bb,
                    const double[:, ::1] params, const double[::1] pref, const double[::1] vref,
                    double h):
    cdef const Py_ssize_t[::1] ex = np.ascontiguousarray(exact, dtype=np.intp)
    cdef const Py_ssize_t[::1] lp = np.ascontiguousarray(lin_pos, dtype=np.intp)
    cdef Py_ssize_t n = x.shape[0], ng = n // 9, k
    work = np.empty((5, n))
    scratch = np.empty(3 * ng + 2 * lp.shape[0] + 9 * ex.shape[0] + 3)
    out = np.empty(n)
    cdef double[:, ::1] w = work
    cdef double[::1] sc = scratch
    cdef double[::1] dnet = sc[:3 * ng + 1]
    cdef double[::1] di = sc[3 * ng + 1:3 * ng + 2 * lp.shape[0] + 2]
    cdef double[::1] tmp = sc[3 * ng + 2 * lp.shape[0] + 2:]
    cdef double[::1] xn = out
    cdef double[::1] k1 = w[0], k2 = w[1], k3 = w[2], k4 = w[3], xt = w[4]
    with nogil:
        _affine_rhs(x, x0, ex, lp, g_l, m_l, f0_l, theta, vb, g, b, gb, bb,
                    params, pref, vref, dnet, di, tmp, k1)
        for k in range(n):
            xt[k] = x[k] + 0.5 * h * k1[k]
        _affine_rhs(xt, x0, ex, lp, g_l, m_l, f0_l, theta, vb, g, b, gb, bb,
                    params, pref, vref, dnet, di, tmp, k2)
        for k in range(n):
            xt[k] = x[k] + 0.5 * h * k2[k]
        _affine_rhs(xt, x0, ex, lp, g_l, m_l, f0_l, theta, vb, g, b, gb, bb,
                    params, pref, vref, dnet, di, tmp, k3)
        for k in range(n):
            xt[k] = x[k] + h * k3[k]
        _affine_rhs(xt, x0, ex, lp, g_l, m_l, f0_l, theta, vb, g, b, gb, bb,
                    params, pref, vref, dnet, di, tmp, k4)
        for k in range(n):
            xn[k] = x[k] + (h / 6.0) * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
    return out

"""Pure-numpy machine kernels (fallback when the compiled module is absent).

State layout is machine-major: ``x[9*i + k]`` with
``k = (delta, pm, pgv, vr, rf, efd, ed_p, eq_p, omega)``.  ``params`` is an
``(ng, 20)`` array whose columns follow ``netmodel.PARAM_NAMES``.
"""
import numpy as np

OMEGA_BASE = 120.0 * np.pi

(H, D, XD, XQ, XD_P, XQ_P, RA, TDO_P, TQO_P, TCH, TGV, R_GOV,
 KA, TA, KF, TF, KE, TE, AE, BE) = range(20)


def currents(x, theta, vb, g, b, gb, bb, rows):
    """d/q-axis currents of the machines in ``rows`` (pairwise trig sums)."""
    xm = x.reshape(-1, 9)
    d = xm[:, 0]
    ed = xm[:, 6]
    eq = xm[:, 7]
    dr = d[rows]
    phi = dr[:, None] - d[None, :]
    c = np.cos(phi)
    s = np.sin(phi)
    gr = g[rows]
    br = b[rows]
    a = gr * c + br * s
    bm = gr * s - br * c
    i_d = a @ ed + bm @ eq
    i_q = a @ eq - bm @ ed
    if theta.shape[0]:
        psi = dr[:, None] - theta[None, :]
        cb = np.cos(psi)
        sb = np.sin(psi)
        gbr = gb[rows]
        bbr = bb[rows]
        i_d += (gbr * sb - bbr * cb) @ vb
        i_q += (gbr * cb + bbr * sb) @ vb
    return i_d, i_q


def rhs_rows(x, theta, vb, g, b, gb, bb, params, pref, vref, rows):
    """Derivatives of every state of the machines in ``rows`` (machine-major)."""
    xm = x.reshape(-1, 9)[rows]
    p = params[rows]
    i_d, i_q = currents(x, theta, vb, g, b, gb, bb, rows)
    delta, pm, pgv, vr, rf, efd, ed, eq, w = xm.T
    dw = w - 1.0
    vd = ed - p[:, RA] * i_d + p[:, XD_P] * i_q
    vq = eq - p[:, RA] * i_q - p[:, XD_P] * i_d
    vt = np.sqrt(vd * vd + vq * vq)
    out = np.empty_like(xm)
    out[:, 0] = OMEGA_BASE * dw
    out[:, 1] = (pgv - pm) / p[:, TCH]
    out[:, 2] = (pref[rows] - pgv - dw / p[:, R_GOV]) / p[:, TGV]
    out[:, 3] = (-vr + p[:, KA] * rf - p[:, KA] * p[:, KF] / p[:, TF] * efd
                 + p[:, KA] * (vref[rows] - vt)) / p[:, TA]
    out[:, 4] = (-rf + p[:, KF] / p[:, TF] * efd) / p[:, TF]
    out[:, 5] = (-(p[:, KE] + p[:, AE] * np.exp(p[:, BE] * efd)) * efd + vr) / p[:, TE]
    out[:, 6] = (-ed + (p[:, XQ] - p[:, XQ_P]) * i_q) / p[:, TQO_P]
    out[:, 7] = (-eq - (p[:, XD] - p[:, XD_P]) * i_d + efd) / p[:, TDO_P]
    out[:, 8] = (pm - ed * i_d - eq * i_q - p[:, D] * dw) / (2.0 * p[:, H])
    return out.reshape(-1)


def rhs_all(x, theta, vb, g, b, gb, bb, params, pref, vref):
    rows = np.arange(x.shape[0] // 9)
    return rhs_rows(x, theta, vb, g, b, gb, bb, params, pref, vref, rows)


def rk4_step(x, theta, vb, g, b, gb, bb, params, pref, vref, h):
    """One classical RK4 step of the complete machine set with frozen inputs."""
    args = (theta, vb, g, b, gb, bb, params, pref, vref)
    k1 = rhs_all(x, *args)
    k2 = rhs_all(x + 0.5 * h * k1, *args)
    k3 = rhs_all(x + 0.5 * h * k2, *args)
    k4 = rhs_all(x + h * k3, *args)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_staged(x, th1, vb1, th2, vb2, th4, vb4, g, b, gb, bb, params, pref, vref, h):
    """RK4 step whose boundary inputs differ per stage (start, midpoint, end)."""
    net = (g, b, gb, bb, params, pref, vref)
    k1 = rhs_all(x, th1, vb1, *net)
    k2 = rhs_all(x + 0.5 * h * k1, th2, vb2, *net)
    k3 = rhs_all(x + 0.5 * h * k2, th2, vb2, *net)
    k4 = rhs_all(x + h * k3, th4, vb4, *net)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def affine_rhs(x, x0, exact, lin_pos, g_l, m_l, f0_l, theta, vb, g, b, gb, bb, params, pref, vref):
    """Exact rows for machines in ``exact``, factored first-order rows for ``lin_pos``.

    Linear machine ``l`` gets ``m_l[l] @ [dx_l; dI_l] + f0_l[l]`` where
    ``dI = g_l @ dx_net`` stacks the (Id, Iq) deviations and ``dx_net`` the
    (delta, E'd, E'q) deviations of every machine.
    """
    ng = x.shape[0] // 9
    out = np.empty((ng, 9))
    if len(lin_pos):
        dx = (x - x0).reshape(ng, 9)
        di = (g_l @ dx[:, [0, 6, 7]].reshape(-1)).reshape(-1, 2)
        z = np.concatenate([dx[lin_pos], di], axis=1)
        out[lin_pos] = np.matmul(m_l, z[:, :, None])[:, :, 0] + f0_l
    if len(exact):
        out[exact] = rhs_rows(x, theta, vb, g, b, gb, bb, params, pref, vref, exact).reshape(-1, 9)
    return out.reshape(-1)


def affine_rk4_step(x, x0, exact, lin_pos, g_l, m_l, f0_l, theta, vb, g, b, gb, bb,
                    params, pref, vref, h):
    args = (x0, exact, lin_pos, g_l, m_l, f0_l, theta, vb, g, b, gb, bb, params, pref, vref)
    k1 = affine_rhs(x, *args)
    k2 = affine_rhs(x + 0.5 * h * k1, *args)
    k3 = affine_rhs(x + 0.5 * h * k2, *args)
    k4 = affine_rhs(x + h * k3, *args)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

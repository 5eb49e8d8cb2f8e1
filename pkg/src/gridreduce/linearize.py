"""Closed-form Jacobians of the machine vector field.

``A = df/dx`` and ``B = df/du`` with ``u = (theta_1..theta_Nb, V_1..V_Nb)``.
The output matrix is the identity, so a :class:`LinearModel` carries only
``A``, ``B`` and the expansion point.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import (DELTA, ED, EFD, EQ, NSTATE, OMEGA, OMEGA_BASE, PGV, PM, RF, VR,
                       BoundaryInput, Plant, SystemState)
from .netmodel import GeneratorParams, ReducedYMatrix

(H, D, XD, XQ, XD_P, XQ_P, RA, TDO_P, TQO_P, TCH, TGV, R_GOV,
 KA, TA, KF, TF, KE, TE, AE, BE) = range(20)


@dataclass(frozen=True)
class LinearModel:
    a: np.ndarray
    b: np.ndarray
    x0: np.ndarray
    u0: np.ndarray
    # vector field at the expansion point; zero at an equilibrium
    f0: np.ndarray
    # factored network coupling, see ``coupling_factors``
    coupling: tuple | None = None

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def c(self) -> np.ndarray:
        return np.eye(self.n)


def current_gradients(plant: Plant, x: np.ndarray, u: np.ndarray):
    """Partials of every machine's ``Id`` and ``Iq``.

    Returns ``(did_dx, diq_dx, did_du, diq_du)`` of shapes ``(ng, n)`` and
    ``(ng, m)``.
    """
    ng, nb = plant.ng, plant.nb
    xm = x.reshape(ng, NSTATE)
    d, ed, eq = xm[:, DELTA], xm[:, ED], xm[:, EQ]
    th, vb = plant.split_input(u)
    phi = d[:, None] - d[None, :]
    c, s = np.cos(phi), np.sin(phi)
    a = plant.g * c + plant.b * s
    bm = plant.g * s - plant.b * c

    did_dd = ed[None, :] * bm - eq[None, :] * a
    diq_dd = ed[None, :] * a + eq[None, :] * bm
    np.fill_diagonal(did_dd, 0.0)
    np.fill_diagonal(diq_dd, 0.0)
    diag_id = -did_dd.sum(axis=1)
    diag_iq = -diq_dd.sum(axis=1)

    did_du = np.zeros((ng, 2 * nb))
    diq_du = np.zeros((ng, 2 * nb))
    if nb:
        psi = d[:, None] - th[None, :]
        cb, sb = np.cos(psi), np.sin(psi)
        p = plant.gb * cb + plant.bb * sb      # d/dpsi of the Id boundary term / V
        q = plant.gb * sb - plant.bb * cb      # Id boundary coefficient / V
        diag_id += (vb[None, :] * p).sum(axis=1)
        diag_iq += (-vb[None, :] * q).sum(axis=1)
        did_du[:, :nb] = -vb[None, :] * p
        diq_du[:, :nb] = vb[None, :] * q
        did_du[:, nb:] = q
        diq_du[:, nb:] = p
    did_dd[np.diag_indices(ng)] = diag_id
    diq_dd[np.diag_indices(ng)] = diag_iq

    n = NSTATE * ng
    did_dx = np.zeros((ng, n))
    diq_dx = np.zeros((ng, n))
    did_dx[:, DELTA::NSTATE] = did_dd
    diq_dx[:, DELTA::NSTATE] = diq_dd
    did_dx[:, ED::NSTATE] = a
    did_dx[:, EQ::NSTATE] = bm
    diq_dx[:, ED::NSTATE] = -bm
    diq_dx[:, EQ::NSTATE] = a
    return did_dx, diq_dx, did_du, diq_du


def jacobians(plant: Plant, x, u, check_equilibrium: bool = False) -> LinearModel:
    """Analytic ``A`` and ``B`` of the plant at ``(x, u)``."""
    x = np.ascontiguousarray(x, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    ng, n, m = plant.ng, plant.n, 2 * plant.nb
    p = plant.p
    f0 = plant.rhs(x, u)
    if check_equilibrium and np.abs(f0).max() > 1e-6:
        warnings.warn(f"linearizing away from equilibrium (|f| = {np.abs(f0).max():.2e})",
                      RuntimeWarning, stacklevel=2)
    xm = x.reshape(ng, NSTATE)
    i_d, i_q = plant.currents(x, u)
    did_dx, diq_dx, did_du, diq_du = current_gradients(plant, x, u)

    a = np.zeros((n, n))
    b = np.zeros((n, m))
    idx = NSTATE * np.arange(ng)

    def col(k):
        return idx + k

    def row(k):
        return idx + k

    a[row(DELTA), col(OMEGA)] = OMEGA_BASE
    a[row(PM), col(PM)] = -1.0 / p[:, TCH]
    a[row(PM), col(PGV)] = 1.0 / p[:, TCH]
    a[row(PGV), col(PGV)] = -1.0 / p[:, TGV]
    a[row(PGV), col(OMEGA)] = -1.0 / (p[:, R_GOV] * p[:, TGV])

    # regulator: terminal-voltage feedback through the network currents
    ed, eq = xm[:, ED], xm[:, EQ]
    vd = ed - p[:, RA] * i_d + p[:, XD_P] * i_q
    vq = eq - p[:, RA] * i_q - p[:, XD_P] * i_d
    vt = np.hypot(vd, vq)
    wd, wq = vd / vt, vq / vt
    cid = -(wd * p[:, RA] + wq * p[:, XD_P])      # dVt/dId
    ciq = wd * p[:, XD_P] - wq * p[:, RA]         # dVt/dIq
    gain = -p[:, KA] / p[:, TA]
    a[row(VR)] = (gain * cid)[:, None] * did_dx + (gain * ciq)[:, None] * diq_dx
    b[row(VR)] = (gain * cid)[:, None] * did_du + (gain * ciq)[:, None] * diq_du
    a[row(VR), col(ED)] += gain * wd
    a[row(VR), col(EQ)] += gain * wq
    a[row(VR), col(VR)] += -1.0 / p[:, TA]
    a[row(VR), col(RF)] += p[:, KA] / p[:, TA]
    a[row(VR), col(EFD)] += -p[:, KA] * p[:, KF] / (p[:, TF] * p[:, TA])

    a[row(RF), col(RF)] = -1.0 / p[:, TF]
    a[row(RF), col(EFD)] = p[:, KF] / p[:, TF] ** 2

    efd = xm[:, EFD]
    sat = p[:, AE] * np.exp(p[:, BE] * efd)
    a[row(EFD), col(EFD)] = -(p[:, KE] + sat * (1.0 + p[:, BE] * efd)) / p[:, TE]
    a[row(EFD), col(VR)] = 1.0 / p[:, TE]

    kq = ((p[:, XQ] - p[:, XQ_P]) / p[:, TQO_P])[:, None]
    a[row(ED)] = kq * diq_dx
    b[row(ED)] = kq * diq_du
    a[row(ED), col(ED)] += -1.0 / p[:, TQO_P]

    kd = (-(p[:, XD] - p[:, XD_P]) / p[:, TDO_P])[:, None]
    a[row(EQ)] = kd * did_dx
    b[row(EQ)] = kd * did_du
    a[row(EQ), col(EQ)] += -1.0 / p[:, TDO_P]
    a[row(EQ), col(EFD)] += 1.0 / p[:, TDO_P]

    inv2h = (0.5 / p[:, H])[:, None]
    a[row(OMEGA)] = -inv2h * (ed[:, None] * did_dx + eq[:, None] * diq_dx)
    b[row(OMEGA)] = -inv2h * (ed[:, None] * did_du + eq[:, None] * diq_du)
    a[row(OMEGA), col(PM)] += inv2h[:, 0]
    a[row(OMEGA), col(ED)] += -inv2h[:, 0] * i_d
    a[row(OMEGA), col(EQ)] += -inv2h[:, 0] * i_q
    a[row(OMEGA), col(OMEGA)] += -inv2h[:, 0] * p[:, D]

    # rows depend on remote machines only through (Id, Iq): A = L + C G
    coef = np.zeros((ng, NSTATE, 2))
    coef[:, VR] = np.stack([gain * cid, gain * ciq], axis=1)
    coef[:, ED, 1] = kq[:, 0]
    coef[:, EQ, 0] = kd[:, 0]
    coef[:, OMEGA] = -inv2h * np.stack([ed, eq], axis=1)
    grad_x = np.stack([did_dx, diq_dx], axis=1)
    grad_u = np.stack([did_du, diq_du], axis=1)
    return LinearModel(a=a, b=b, x0=x.copy(), u0=u.copy(), f0=f0,
                       coupling=(coef, grad_x, grad_u))


def coupling_factors(lin: LinearModel):
    """Split ``A`` into machine-local blocks and a low-rank network part.

    Returns ``(local, coef, grad)`` with ``local`` of shape ``(ng, 9, 9)``,
    ``coef`` ``(ng, 9, 2)`` and ``grad`` ``(ng, 2, 3*ng)`` so that the rows
    of machine ``k`` are ``local[k] @ dx_k + coef[k] @ (grad[k] @ dx_net)``
    where ``dx_net`` stacks the angle, ``E'd`` and ``E'q`` deviations of
    every machine (machine-major).
    """
    if lin.coupling is None:
        raise ValueError("linear model carries no coupling factors")
    coef, grad_x, _ = lin.coupling
    ng = coef.shape[0]
    cols = net_columns(ng)
    grad = grad_x[:, :, cols]
    local = np.empty((ng, NSTATE, NSTATE))
    for k in range(ng):
        own = slice(NSTATE * k, NSTATE * (k + 1))
        local[k] = lin.a[own, own] - coef[k] @ grad_x[k][:, own]
    return local, coef, grad


def net_columns(ng: int) -> np.ndarray:
    """State indices of (delta, E'd, E'q) for every machine, machine-major."""
    base = NSTATE * np.arange(ng)[:, None]
    return (base + np.array([DELTA, ED, EQ])[None, :]).reshape(-1)


def _plant(u0: BoundaryInput, y: ReducedYMatrix, params) -> Plant:
    return Plant(y, params, u0.p_ref, u0.v_ref)


def jacobian_a(x0: SystemState, u0: BoundaryInput, y: ReducedYMatrix,
               params: Sequence[GeneratorParams]) -> np.ndarray:
    return jacobians(_plant(u0, y, params), x0.vector, u0.vector, check_equilibrium=True).a


def jacobian_b(x0: SystemState, u0: BoundaryInput, y: ReducedYMatrix,
               params: Sequence[GeneratorParams]) -> np.ndarray:
    return jacobians(_plant(u0, y, params), x0.vector, u0.vector, check_equilibrium=True).b


def linearize(x0: SystemState, u0: BoundaryInput, y: ReducedYMatrix,
              params: Sequence[GeneratorParams]) -> LinearModel:
    return jacobians(_plant(u0, y, params), x0.vector, u0.vector, check_equilibrium=True)


def finite_difference(plant: Plant, x, u, step: float = 1e-6):
    """Central-difference ``(A, B)``; used for verification only."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    a = np.empty((x.size, x.size))
    b = np.empty((x.size, u.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        a[:, k] = (plant.rhs(x + e, u) - plant.rhs(x - e, u)) / (2 * step)
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = step
        b[:, k] = (plant.rhs(x, u + e) - plant.rhs(x, u - e)) / (2 * step)
    return a, b


class OperatingPointError(RuntimeError):
    """Newton iteration for a steady operating condition did not converge."""


def operating_point(plant: Plant, x, u=(), tol: float = 1e-10, maxiter: int = 40):
    """Synchronous steady state of ``plant`` nearest to ``x``.

    Solves ``f(xs, u) = c * e_delta`` for ``xs`` and a common slip rate ``c``
    so that a network whose losses changed (a tripped line, say) still has
    a solution: all machines then turn at one shared frequency.  The first
    machine's angle is held at its starting value to remove the rotation
    freedom; its column in the Newton matrix is taken over by ``c``.
    Returns ``(xs, c)``.
    """
    xs = np.array(x, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    n = xs.size
    e_delta = np.zeros(n)
    e_delta[DELTA::NSTATE] = 1.0
    c = 0.0
    for _ in range(maxiter):
        lin = jacobians(plant, xs, u)
        res = lin.f0 - c * e_delta
        if np.abs(res).max() < tol:
            return xs, c
        jac = lin.a
        jac[:, DELTA] = -e_delta
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            break
        c += step[DELTA]
        step[DELTA] = 0.0
        xs += step
        if not np.all(np.isfinite(xs)):
            break
    raise OperatingPointError(f"no steady operating point within {maxiter} iterations")

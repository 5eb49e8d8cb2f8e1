"""Nine-state machine model and its network coupling.

Each generator carries rotor angle, turbine and governor powers, an IEEE
type 1 exciter (regulator, rate feedback, field voltage), two-axis transient
EMFs and speed.  Machines interact only through the d/q currents obtained
from the reduced admittance matrix; boundary buses of the opposite area
enter as fixed voltage sources.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import kernels
from .netmodel import (PARAM_NAMES, BusNetwork, GeneratorParams, NetworkError,
                       ReducedYMatrix)

__all__ = [
    "GeneratorParams", "MachineState", "SystemState", "BoundaryInput", "Plant",
    "OMEGA_BASE", "STATE_FIELDS", "machine_currents", "rhs_full", "init_equilibrium",
    "EquilibriumError", "param_matrix", "emf_phasors",
]

OMEGA_BASE = 120.0 * np.pi
NSTATE = 9
STATE_FIELDS = ("delta", "pm", "pgv", "vr", "rf", "efd", "ed_p", "eq_p", "omega")
DELTA, PM, PGV, VR, RF, EFD, ED, EQ, OMEGA = range(NSTATE)
# rows whose right-hand side is nonlinear in the states
NONLINEAR_FIELDS = (EFD, ED, EQ, OMEGA)


class EquilibriumError(NetworkError):
    """Initial conditions cannot be made consistent with the network."""


@dataclass(frozen=True)
class MachineState:
    delta: float
    pm: float
    pgv: float
    vr: float
    rf: float
    efd: float
    ed_p: float
    eq_p: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


class SystemState:
    """Stacked machine states, ``x[9*i + k]`` for machine ``i`` and field ``k``."""

    def __init__(self, vector):
        v = np.asarray(vector, dtype=float)
        if v.ndim != 1 or v.size % NSTATE:
            raise ValueError("state vector length must be a multiple of 9")
        self.vector = v

    @classmethod
    def from_machines(cls, machines: Sequence[MachineState]) -> "SystemState":
        return cls(np.concatenate([m.as_array() for m in machines]))

    @property
    def ng(self) -> int:
        return self.vector.size // NSTATE

    @property
    def machines(self) -> list[MachineState]:
        return [MachineState(*row) for row in self.vector.reshape(-1, NSTATE)]

    def field(self, name: str) -> np.ndarray:
        return self.vector[STATE_FIELDS.index(name)::NSTATE]

    def __len__(self) -> int:
        return self.vector.size


@dataclass
class BoundaryInput:
    """Opposite-area boundary voltages plus per-machine setpoints."""

    theta: np.ndarray
    v: np.ndarray
    p_ref: np.ndarray
    v_ref: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        """Input vector ``u = (theta, V)``."""
        return np.concatenate([self.theta, self.v])

    @property
    def m(self) -> int:
        return 2 * self.theta.size


def param_matrix(params: Sequence[GeneratorParams]) -> np.ndarray:
    return np.ascontiguousarray(
        [[getattr(p, name) for name in PARAM_NAMES] for p in params], dtype=float)


def emf_phasors(x: np.ndarray) -> np.ndarray:
    """Internal EMF phasors ``(E'd + jE'q) e^{j(delta - pi/2)}`` in the network frame."""
    xm = x.reshape(-1, NSTATE)
    return (xm[:, ED] + 1j * xm[:, EQ]) * np.exp(1j * (xm[:, DELTA] - np.pi / 2))


class Plant:
    """Evaluator for a set of machines coupled through a reduced admittance.

    Parameters
    ----------
    y : ReducedYMatrix
        Blocks between machine internal nodes (``y11``) and fictitious
        boundary sources (``y12``).
    params : sequence of GeneratorParams
        One entry per machine in ``y.gen_order``.
    p_ref, v_ref : array_like
        Governor and voltage-regulator setpoints.
    backend : str, optional
        Kernel backend name; the process default if omitted.
    """

    def __init__(self, y: ReducedYMatrix, params: Sequence[GeneratorParams],
                 p_ref, v_ref, backend: str | None = None):
        if len(params) != y.ng:
            raise ValueError(f"{len(params)} parameter sets for {y.ng} machines")
        self.y = y
        self.params = tuple(params)
        self.g = np.ascontiguousarray(y.y11.real)
        self.b = np.ascontiguousarray(y.y11.imag)
        self.gb = np.ascontiguousarray(y.y12.real).reshape(y.ng, y.nb)
        self.bb = np.ascontiguousarray(y.y12.imag).reshape(y.ng, y.nb)
        self.p = param_matrix(params)
        self.p_ref = np.ascontiguousarray(p_ref, dtype=float)
        self.v_ref = np.ascontiguousarray(v_ref, dtype=float)
        self.k = kernels.get(backend)
        self.ng = y.ng
        self.nb = y.nb
        self.n = NSTATE * y.ng
        self.all_rows = np.arange(y.ng, dtype=np.intp)

    def with_network(self, y: ReducedYMatrix) -> "Plant":
        """Same machines and setpoints on a different admittance."""
        if y.gen_order != self.y.gen_order:
            raise ValueError("generator order differs")
        return Plant(y, self.params, self.p_ref, self.v_ref,
                     backend=None if self.k is kernels.get() else _name_of(self.k))

    def split_input(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = np.ascontiguousarray(u, dtype=float)
        if u.size != 2 * self.nb:
            raise ValueError(f"input length {u.size} != 2*Nb = {2 * self.nb}")
        return u[:self.nb], u[self.nb:]

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=float)
        if x.size != self.n:
            raise ValueError(f"state length {x.size} != 9*Ng = {self.n}")
        return x

    def currents(self, x, u=(), rows=None):
        x = self._check(x)
        th, vb = self.split_input(np.asarray(u, dtype=float))
        rows = self.all_rows if rows is None else np.asarray(rows, dtype=np.intp)
        return self.k.currents(x, th, vb, self.g, self.b, self.gb, self.bb, rows)

    def rhs(self, x, u=()) -> np.ndarray:
        x = self._check(x)
        th, vb = self.split_input(np.asarray(u, dtype=float))
        return self.k.rhs_all(x, th, vb, self.g, self.b, self.gb, self.bb,
                              self.p, self.p_ref, self.v_ref)

    def rhs_rows(self, x, u, rows) -> np.ndarray:
        """Derivatives of all nine states of the machines at positions ``rows``."""
        th, vb = self.split_input(u)
        return self.k.rhs_rows(x, th, vb, self.g, self.b, self.gb, self.bb,
                               self.p, self.p_ref, self.v_ref, rows)

    def rk4(self, x, u, h: float) -> np.ndarray:
        th, vb = self.split_input(u)
        return self.k.rk4_step(x, th, vb, self.g, self.b, self.gb, self.bb,
                               self.p, self.p_ref, self.v_ref, h)

    def rk4_staged(self, x, u1, u2, u4, h: float) -> np.ndarray:
        """RK4 step with inputs ``u1`` at the start, ``u2`` at the midpoint, ``u4`` at the end."""
        t1, v1 = self.split_input(u1)
        t2, v2 = self.split_input(u2)
        t4, v4 = self.split_input(u4)
        return self.k.rk4_step_staged(x, t1, v1, t2, v2, t4, v4, self.g, self.b, self.gb, self.bb,
                                      self.p, self.p_ref, self.v_ref, h)

    def terminal_voltage(self, x, u=()) -> np.ndarray:
        """Terminal voltage magnitude from ``E' - (ra + j xd_p) I``."""
        x = self._check(x)
        i_d, i_q = self.currents(x, u)
        xm = x.reshape(-1, NSTATE)
        vd = xm[:, ED] - self.p[:, 6] * i_d + self.p[:, 4] * i_q
        vq = xm[:, EQ] - self.p[:, 6] * i_q - self.p[:, 4] * i_d
        return np.hypot(vd, vq)


def _name_of(mod) -> str:
    return "compiled" if mod is kernels._ckernels else "python"


def machine_currents(state: SystemState, y: ReducedYMatrix, u: BoundaryInput):
    """d/q currents of every machine; returns ``(id, iq)``."""
    if state.ng != y.ng or u.theta.size != y.nb:
        raise ValueError("state/input dimensions do not match the admittance")
    plant = Plant(y, [_dummy_params()] * y.ng, np.zeros(y.ng), np.ones(y.ng))
    return plant.currents(state.vector, u.vector)


def rhs_full(state: SystemState, y: ReducedYMatrix, u: BoundaryInput,
             params: Sequence[GeneratorParams]) -> np.ndarray:
    """Time derivative of every state."""
    return Plant(y, params, u.p_ref, u.v_ref).rhs(state.vector, u.vector)


def _dummy_params() -> GeneratorParams:
    return GeneratorParams(h=1, d=0, xd=1, xq=1, xd_p=1, xq_p=1, ra=0, tdo_p=1, tqo_p=1,
                           tch=1, tgv=1, r_gov=1, ka=1, ta=1, kf=1, tf=1, ke=1, te=1,
                           ae=0, be=0)


def init_equilibrium(net: BusNetwork, y: ReducedYMatrix, tol: float = 1e-6
                     ) -> tuple[SystemState, BoundaryInput]:
    """Steady state of every machine in ``y.gen_order`` from the power flow.

    The rotor angle is placed on the q-axis of ``V + (ra + j(xq - xq_p + xd_p)) I``,
    which is the standard two-axis construction for a machine represented in
    the network by ``xd_p`` on both axes.  Setpoints are back-solved so all
    derivatives vanish.  Boundary inputs are the solved voltages of the
    opposite-area boundary buses.
    """
    gens = [net.generator(i) for i in y.gen_order]
    x = np.zeros(NSTATE * len(gens))
    p_ref = np.zeros(len(gens))
    v_ref = np.zeros(len(gens))
    i_term = np.zeros(len(gens), dtype=complex)
    for k, g in enumerate(gens):
        p = g.params
        bus = net.bus(g.bus_id)
        v = bus.phasor
        s = complex(g.dispatch_p, g.dispatch_q)
        i = np.conj(s / v)
        i_term[k] = i
        q_axis = v + complex(p.ra, p.xq - p.xq_p + p.xd_p) * i
        delta = np.angle(q_axis)
        rot = np.exp(-1j * (delta - np.pi / 2))
        idq = i * rot
        e_p = (v + complex(p.ra, p.xd_p) * i) * rot
        i_d, i_q = idq.real, idq.imag
        ed, eq = e_p.real, e_p.imag
        efd = eq + (p.xd - p.xd_p) * i_d
        vr = (p.ke + p.ae * np.exp(p.be * efd)) * efd
        rf = p.kf / p.tf * efd
        vt = abs(v)
        pe = ed * i_d + eq * i_q
        x[NSTATE * k:NSTATE * (k + 1)] = (delta, pe, pe, vr, rf, efd, ed, eq, 1.0)
        p_ref[k] = pe
        v_ref[k] = vt + vr / p.ka
        if not np.all(np.isfinite(x[NSTATE * k:NSTATE * (k + 1)])):
            raise EquilibriumError(f"generator {g.id}: non-finite initial state")
    theta = np.array([net.bus(b).voltage_angle for b in y.boundary_order])
    vb = np.array([net.bus(b).voltage_magnitude for b in y.boundary_order])
    u = BoundaryInput(theta=theta, v=vb, p_ref=p_ref, v_ref=v_ref)
    # the admittance must reproduce the terminal currents implied by the dispatch
    plant = Plant(y, [g.params for g in gens], p_ref, v_ref)
    i_d, i_q = plant.currents(x, u.vector)
    xm = x.reshape(-1, NSTATE)
    i_net = (i_d + 1j * i_q) * np.exp(1j * (xm[:, DELTA] - np.pi / 2))
    mismatch = np.abs(i_net - i_term)
    worst = int(np.argmax(mismatch)) if mismatch.size else 0
    if mismatch.size and mismatch[worst] > tol * max(1.0, abs(i_term[worst])):
        raise EquilibriumError(
            f"generator {gens[worst].id}: dispatch inconsistent with the network "
            f"(current mismatch {mismatch[worst]:.3e} p.u.)")
    return SystemState(x), u

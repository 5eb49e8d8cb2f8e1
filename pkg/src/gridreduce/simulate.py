"""Fixed-step transient simulation with adaptive model switching.

Policies
--------
``full_only``
    Whole network, every machine exact.
``full_partitioned``
    Both areas exact, coupled through the lagged boundary exchange.
``linear_only``
    Study area exact, external area balanced-truncated linear throughout.
``adaptive_partitioned``
    Study area exact.  Before the fault the external area is linear; while
    the fault is on the whole network runs exact; after clearing the
    external area is hybrid while the largest study-area angle deviation
    exceeds ``delta_max`` and linear otherwise.
``hybrid_partitioned``
    As above but always hybrid after clearing.
``adaptive_unpartitioned``
    One network without boundary inputs or truncation.  Hybrid rows keep
    every study-area machine exact; the linear mode propagates ``A dx``.

Every policy shares one driver loop and the same RK4 step size; only the
per-step model differs.  Trajectories record the internal representation
of each step and are lifted to physical states in one batch at the end.
"""
from __future__ import annotations

import csv
import itertools
import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import _pykernels
from . import netmodel as nm
from .dynamics import DELTA, NSTATE, OMEGA, STATE_FIELDS, Plant, emf_phasors, init_equilibrium
from .hybrid import (FunctionSelection, build_hybrid, column_norms, reference_generator,
                     select_functions)
from .linearize import (LinearModel, OperatingPointError, coupling_factors, jacobians,
                        net_columns, operating_point)
from .mor import BalancedReduction, NotHurwitzError, reduce_linear

__all__ = [
    "Mode", "POLICIES", "SwitchState", "SimConfig", "Trajectory", "Prepared", "SimulationError",
    "step_rk4", "rk4_propagator", "rk4_staged_propagator", "stage_inputs", "joint_exchange_matrix", "switch_mode", "boundary_exchange", "relinearize",
    "run_simulation", "prepare",
]


class Mode(str, Enum):
    FULL = "FULL"
    HYBRID = "HYBRID"
    LINEAR = "LINEAR"


POLICIES = ("full_only", "full_partitioned", "linear_only", "adaptive_partitioned",
            "hybrid_partitioned", "adaptive_unpartitioned")
PARTITIONED_POLICIES = frozenset({"full_partitioned", "linear_only", "adaptive_partitioned",
                                  "hybrid_partitioned"})
DELTA_MAX_PARTITIONED = float(np.deg2rad(67.0))
DELTA_MAX_UNPARTITIONED = float(np.deg2rad(6.0))
OMEGA_LIMIT = 0.5
ANGLE_LIMIT = np.pi
_EMPTY = np.zeros(0)
EXCHANGES = ("extrapolated", "held", "jacobi")


class SimulationError(RuntimeError):
    """Integration produced non-finite values."""


# -- integration primitives ---------------------------------------------------

def step_rk4(rhs: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float,
             step_index: int | None = None) -> np.ndarray:
    """One classical Runge-Kutta step of ``x' = rhs(x)``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    x = np.asarray(x, dtype=float)
    k1 = _finite(rhs(x), step_index)
    k2 = _finite(rhs(x + 0.5 * h * k1), step_index)
    k3 = _finite(rhs(x + 0.5 * h * k2), step_index)
    k4 = _finite(rhs(x + h * k3), step_index)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _finite(v: np.ndarray, step_index) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        where = "" if step_index is None else f" at step {step_index}"
        raise SimulationError(f"non-finite derivative{where}")
    return v


def rk4_propagator(a: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``(Phi, Psi)`` with ``RK4(x' = A x + w) = Phi x + Psi w`` for constant ``w``.

    ``Phi = I + Z + Z^2/2 + Z^3/6 + Z^4/24`` and
    ``Psi = h (I + Z/2 + Z^2/6 + Z^3/24)`` with ``Z = hA``.
    """
    n = a.shape[0]
    eye = np.eye(n)
    z = h * a
    s = eye + z / 4.0
    s = eye + (z / 3.0) @ s
    s = eye + (z / 2.0) @ s
    return eye + z @ s, h * s


def rk4_staged_propagator(a: np.ndarray, h: float):
    """RK4 of ``x' = A x + v(t)`` as ``Phi x + G1 v1 + G2 v2 + G4 v4``.

    ``v1``, ``v2`` and ``v4`` are the forcing values at the start, midpoint
    and end of the step.  ``G1 + G2 + G4`` equals ``Psi`` of
    :func:`rk4_propagator`.
    """
    n = a.shape[0]
    eye, zero = np.eye(n), np.zeros((n, n))
    # each stage derivative as coefficient matrices on (x, v1, v2, v4)
    k1 = [a, eye, zero, zero]
    k2 = [a + 0.5 * h * a @ k1[0]] + [0.5 * h * a @ m for m in k1[1:]]
    k2[2] = k2[2] + eye
    k3 = [a + 0.5 * h * a @ k2[0]] + [0.5 * h * a @ m for m in k2[1:]]
    k3[2] = k3[2] + eye
    k4 = [a + h * a @ k3[0]] + [h * a @ m for m in k3[1:]]
    k4[3] = k4[3] + eye
    out = [(h / 6.0) * (p + 2.0 * q + 2.0 * r + s) for p, q, r, s in zip(k1, k2, k3, k4)]
    out[0] = out[0] + eye
    return tuple(out)


# -- switching -----------------------------------------------------------------

@dataclass(frozen=True)
class SwitchState:
    mode: Mode = Mode.LINEAR
    delta_max: float = DELTA_MAX_PARTITIONED
    t_th: float = 0.0
    t_th_max: float = 1.0
    reference_gen: int | None = None
    relinearize: bool = False


def switch_mode(sw: SwitchState, fault_active: bool, delta_dev: float, h: float) -> SwitchState:
    """Next switching state.

    FULL while the fault is on; otherwise HYBRID (accumulating the time spent
    above the threshold) when ``delta_dev > delta_max``, else LINEAR with the
    timer cleared.  ``relinearize`` is raised once the timer passes
    ``t_th_max``.
    """
    if fault_active:
        return replace(sw, mode=Mode.FULL, relinearize=False)
    if delta_dev > sw.delta_max:
        t_th = sw.t_th + h
        return replace(sw, mode=Mode.HYBRID, t_th=t_th, relinearize=t_th > sw.t_th_max)
    return replace(sw, mode=Mode.LINEAR, t_th=0.0, relinearize=False)


# -- configuration and results --------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    step: float = 0.01
    duration: float = 16.0
    fault: nm.FaultSpec | None = None
    policy: str = "full_only"
    threshold_pu: float = 1.0
    delta_max: float | None = None      # rad; policy default when None
    t_th_max: float = 1.0
    tol: float = 1e-5
    stop_on_instability: bool = True
    exchange: str = "extrapolated"      # or "held", "jacobi"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        f = self.fault
        if f is not None and not (0 <= f.t_on < f.t_clear <= self.duration):
            raise ValueError("fault times must satisfy 0 <= t_on < t_clear <= duration")
        if self.threshold_pu < 0:
            raise ValueError("threshold must be nonnegative")
        if not self.t_th_max > 0:
            raise ValueError("t_th_max must be positive")
        if self.exchange not in EXCHANGES:
            raise ValueError(f"unknown exchange {self.exchange!r}; choose from {EXCHANGES}")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step))

    @property
    def partitioned(self) -> bool:
        return self.policy in PARTITIONED_POLICIES

    @property
    def effective_delta_max(self) -> float:
        if self.delta_max is not None:
            return self.delta_max
        return DELTA_MAX_UNPARTITIONED if self.policy == "adaptive_unpartitioned" \
            else DELTA_MAX_PARTITIONED

    def fault_steps(self) -> tuple[int, int]:
        if self.fault is None:
            return self.n_steps + 1, self.n_steps + 1
        return int(round(self.fault.t_on / self.step)), int(round(self.fault.t_clear / self.step))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    gen_order: tuple[int, ...]
    mode_log: list[str]
    relinearization_events: list[float] = field(default_factory=list)
    switch_events: list[dict] = field(default_factory=list)
    stable: bool = True
    instability: str | None = None
    policy: str = ""
    # every angle deviation the switching logic compared against delta_max
    deviation_log: list[float] = field(default_factory=list)

    def column(self, gen_id: int, name: str) -> np.ndarray:
        k = self.gen_order.index(gen_id)
        return self.states[:, NSTATE * k + STATE_FIELDS.index(name)]

    def field(self, name: str) -> np.ndarray:
        """``(steps, ng)`` array of one state for every machine."""
        return self.states[:, STATE_FIELDS.index(name)::NSTATE]

    def write_csv(self, path: str | Path) -> None:
        header = ["time"] + [f"gen{g}_{f}" for g in self.gen_order for f in _CSV_FIELDS]
        cols = np.array([NSTATE * k + STATE_FIELDS.index(f)
                         for k in range(len(self.gen_order)) for f in _CSV_FIELDS])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.times, self.states[:, cols]):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def sidecar(self) -> dict:
        return {
            "policy": self.policy,
            "gen_order": list(self.gen_order),
            "step": float(self.times[1] - self.times[0]) if self.times.size > 1 else None,
            "mode_log": _run_length(self.mode_log),
            "relinearization_events": self.relinearization_events,
            "switch_events": self.switch_events,
            "stable": self.stable,
            "instability": self.instability,
        }

    def write_sidecar(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.sidecar(), indent=1))


# angle and speed lead each machine's block in the CSV
_CSV_FIELDS = ("delta", "omega") + tuple(f for f in STATE_FIELDS if f not in ("delta", "omega"))


def _run_length(log: list[str]) -> list[dict]:
    """Compress a per-step mode log into ``{"mode", "first_step", "steps"}`` runs."""
    out, k = [], 0
    for mode, grp in itertools.groupby(log):
        n = len(list(grp))
        out.append({"mode": mode, "first_step": k, "steps": n})
        k += n
    return out


# -- offline models -------------------------------------------------------------

class Prepared:
    """Equilibrium, plants and the initial balanced reduction of one network.

    Everything here is computed before a run starts and reused by every
    run on the same network; it corresponds to the offline part of the
    method.  Plants are cached per (fault bus, tripped branches).
    """

    def __init__(self, net: nm.BusNetwork, tol: float = 1e-5, backend: str | None = None):
        self.net = net
        self.tol = tol
        self.backend = backend
        part = net.partition
        self.part = part
        if part is not None:
            self.study = tuple(sorted(part.study_generators))
            self.external = tuple(sorted(part.external_generators))
        else:
            self.study, self.external = (), tuple(g.id for g in net.generators)
        self.gen_order = self.study + self.external
        self.ns = len(self.study)
        y = nm.reduced_full(net, gen_order=self.gen_order)
        state, u = init_equilibrium(net, y)
        self.x0 = state.vector
        self.p_ref = u.p_ref
        self.v_ref = u.v_ref
        self.params = [net.generator(g).params for g in self.gen_order]
        h_const = np.array([p.h for p in self.params])
        self.coi_weights = h_const / h_const.sum()
        self._mono: dict = {(None, ()): Plant(y, self.params, self.p_ref, self.v_ref, backend)}
        self._area: dict = {}
        self._ext: dict = {}
        self._unpart: dict = {}

    # plants ---------------------------------------------------------------
    @staticmethod
    def _key(fault: nm.FaultSpec | None, tripped) -> tuple:
        f = None if fault is None else (fault.bus, complex(fault.shunt))
        return f, tuple(sorted(tripped))

    def _topology(self, fault, tripped):
        net = self.net.with_branches_out(tripped) if tripped else self.net
        return net, fault

    def mono_plant(self, fault: nm.FaultSpec | None = None, tripped: tuple = ()) -> Plant:
        """Whole-network plant, optionally faulted and/or with branches out."""
        key = self._key(fault, tripped)
        if key not in self._mono:
            net, fault = self._topology(fault, tripped)
            y = nm.reduced_full(net, fault, gen_order=self.gen_order)
            self._mono[key] = Plant(y, self.params, self.p_ref, self.v_ref, self.backend)
        return self._mono[key]

    def area(self, name: str, fault: nm.FaultSpec | None = None, tripped: tuple = ()):
        """``(plant, voltage_recovery)`` of one area."""
        key = (name,) + self._key(fault, tripped)
        if key not in self._area:
            net, fault = self._topology(fault, tripped)
            y = nm.reduced_area(net, name, fault)
            sl = slice(0, self.ns) if name == "study" else slice(self.ns, None)
            plant = Plant(y, self.params[sl], self.p_ref[sl], self.v_ref[sl], self.backend)
            self._area[key] = (plant, nm.area_recovery(net, name, fault))
        return self._area[key]

    # external-area models -------------------------------------------------
    @property
    def x0_study(self) -> np.ndarray:
        return self.x0[:NSTATE * self.ns]

    @property
    def x0_external(self) -> np.ndarray:
        return self.x0[NSTATE * self.ns:]

    def boundary_phasors(self) -> tuple[np.ndarray, np.ndarray]:
        """Solved-power-flow phasors at the study and external boundary buses."""
        bb = self.part.boundary_buses
        vs = np.array([self.net.bus(b).phasor for b in bb["study"]])
        ve = np.array([self.net.bus(b).phasor for b in bb["external"]])
        return vs, ve

    def external_linear(self) -> LinearModel:
        if "lin" not in self._ext:
            plant, _ = self.area("external")
            vs, _ = self.boundary_phasors()
            self._ext["lin"] = jacobians(plant, self.x0_external, _polar(vs))
        return self._ext["lin"]

    def external_reduction(self) -> BalancedReduction:
        if "red" not in self._ext:
            self._ext["red"] = reduce_linear(self.external_linear(), self.tol)
        return self._ext["red"]

    @property
    def external_norms(self) -> np.ndarray:
        if "norms" not in self._ext:
            plant, _ = self.area("external")
            self._ext["norms"] = column_norms(plant.y.y21)
        return self._ext["norms"]

    @property
    def study_norms(self) -> np.ndarray:
        plant, _ = self.area("study")
        return column_norms(plant.y.y21)

    @property
    def reference_gen(self) -> int:
        return reference_generator(self.external_norms, self.external)

    def selection(self, threshold_pu: float, unpartitioned: bool = False) -> FunctionSelection:
        if not unpartitioned:
            return select_functions(self.external_norms, threshold_pu, self.external)
        norms = np.concatenate([self.study_norms, self.external_norms])
        return select_functions(norms, threshold_pu, self.gen_order, always_nonlinear=self.study)

    def unpartitioned_linear(self, tripped: tuple = ()) -> LinearModel:
        """Monolithic linearization at the pre-fault equilibrium on a given topology."""
        key = tuple(sorted(tripped))
        if key not in self._unpart:
            self._unpart[key] = jacobians(self.mono_plant(None, key), self.x0, _EMPTY)
        return self._unpart[key]


def prepare(net: nm.BusNetwork, tol: float = 1e-5, backend: str | None = None) -> Prepared:
    return Prepared(net, tol=tol, backend=backend)


def _polar(v: np.ndarray) -> np.ndarray:
    return np.concatenate([np.angle(v), np.abs(v)])


# -- boundary exchange -----------------------------------------------------------

def boundary_exchange(e_study: np.ndarray, e_external: np.ndarray,
                      v_study: np.ndarray, v_external: np.ndarray,
                      rec_study: nm.VoltageRecovery, rec_external: nm.VoltageRecovery,
                      lag: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """New boundary-bus phasors of both areas.

    ``v_study``/``v_external`` are the previous iteration's phasors, which
    drive the opposite area's fictitious sources when ``lag`` is set.  With
    ``lag=False`` both areas are solved jointly, which reproduces the
    monolithic network solution.
    """
    if lag:
        return rec_study(e_study, v_external), rec_external(e_external, v_study)
    ks, ke = rec_study, rec_external
    rhs = ks.k_gen @ e_study + ks.k_fict @ (ke.k_gen @ e_external)
    vs = np.linalg.solve(np.eye(len(rhs)) - ks.k_fict @ ke.k_fict, rhs)
    return vs, ke(e_external, vs)


def joint_exchange_matrix(rec_study: nm.VoltageRecovery, rec_external: nm.VoltageRecovery) -> np.ndarray:
    """Matrix ``J`` with ``[v_study; v_external] = J @ [e_study; e_external]``.

    Equivalent to ``boundary_exchange(..., lag=False)`` but precomputed.
    """
    ks, ke = rec_study, rec_external
    s_inv = np.linalg.inv(np.eye(ks.k_fict.shape[0]) - ks.k_fict @ ke.k_fict)
    top = np.hstack([s_inv @ ks.k_gen, s_inv @ ks.k_fict @ ke.k_gen])
    bottom = ke.k_fict @ top
    bottom[:, ks.k_gen.shape[1]:] += ke.k_gen
    return np.vstack([top, bottom])


# -- representations ---------------------------------------------------------------

class _Identity:
    """Lifter for records already in physical coordinates."""

    @staticmethod
    def lift(p: np.ndarray) -> np.ndarray:
        return p


_IDENTITY = _Identity()


class _MonoFull:
    """Whole network, exact equations."""

    def __init__(self, plant: Plant, x: np.ndarray):
        self.plant = plant
        self.x = np.ascontiguousarray(x, dtype=float)
        self.lifter = _IDENTITY

    def step(self, h: float) -> None:
        self.x = self.plant.rk4(self.x, _EMPTY, h)

    def physical(self) -> np.ndarray:
        return self.x

    def snapshot(self) -> np.ndarray:
        return self.x

    def angles(self, ns: int, ref_pos: int):
        return self.x[0:NSTATE * ns:NSTATE], self.x[NSTATE * ref_pos]

    def exact_check(self) -> np.ndarray:
        return self.x


class _AffineStepper:
    """Exact rows for the machines in ``exact_pos``, first-order rows elsewhere.

    The affine rows use the factored Jacobian (machine-local blocks plus the
    current gradients), which is much cheaper than a dense ``A`` product.
    """

    def __init__(self, plant: Plant, lin: LinearModel, exact_pos: np.ndarray):
        ng = plant.ng
        self.plant = plant
        self.x0 = lin.x0
        self.exact = np.ascontiguousarray(exact_pos, dtype=np.intp)
        self.lin_pos = np.ascontiguousarray(np.setdiff1d(np.arange(ng), self.exact), dtype=np.intp)
        local, coef, grad = coupling_factors(lin)
        lp = self.lin_pos
        self.g_l = np.ascontiguousarray(grad[lp].reshape(2 * lp.size, grad.shape[2]))
        self.m_l = np.ascontiguousarray(np.concatenate([local[lp], coef[lp]], axis=2))
        self.f0_l = np.ascontiguousarray(lin.f0.reshape(ng, NSTATE)[lp])
        self._args = (self.x0, self.exact, lp, self.g_l, self.m_l, self.f0_l, _EMPTY, _EMPTY,
                      plant.g, plant.b, plant.gb, plant.bb, plant.p, plant.p_ref, plant.v_ref)

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return _pykernels.affine_rhs(np.ascontiguousarray(x, dtype=float), *self._args)

    def step(self, x: np.ndarray, h: float) -> np.ndarray:
        return self.plant.k.affine_rk4_step(x, *self._args, h)


class _Unpartitioned:
    """Monolithic network under the hybrid or linear representation."""

    def __init__(self, plant: Plant, lin: LinearModel, selection: FunctionSelection | None,
                 x: np.ndarray, mode: Mode):
        self.plant = plant
        self.lin = lin
        self.selection = selection
        self.x = np.ascontiguousarray(x, dtype=float)
        self.lifter = _IDENTITY
        self._linear = _AffineStepper(plant, lin, np.zeros(0, dtype=np.intp))
        self._hybrid = None if selection is None else \
            _AffineStepper(plant, lin, selection.nonlinear_pos)
        self.mode = mode

    def step(self, h: float) -> None:
        stepper = self._linear if self.mode is Mode.LINEAR else self._hybrid
        self.x = stepper.step(self.x, h)

    def physical(self) -> np.ndarray:
        return self.x

    def snapshot(self) -> np.ndarray:
        return self.x

    def angles(self, ns: int, ref_pos: int):
        return self.x[0:NSTATE * ns:NSTATE], self.x[NSTATE * ref_pos]

    def exact_check(self) -> np.ndarray:
        return self.x


class _ReducedContext:
    """Balanced reduction of the external area plus everything a step needs."""

    def __init__(self, plant: Plant, lin: LinearModel, red: BalancedReduction,
                 selection: FunctionSelection | None, h: float, ns9: int):
        self.plant, self.lin, self.red = plant, lin, red
        self.ns9 = ns9
        ng = plant.ng
        self.net_rows = net_columns(ng)
        self.ti_net = np.ascontiguousarray(red.t_inv[self.net_rows])
        self.x0_net = lin.x0[self.net_rows]
        phi, g1, g2, g4 = rk4_staged_propagator(red.a_r, h)
        self.phi = phi
        self.g_u = (g1 @ red.b_r, g2 @ red.b_r, g4 @ red.b_r)
        self.g_0 = (g1 + g2 + g4) @ (red.t @ lin.f0)
        self.selection = selection
        if selection is not None:
            model = build_hybrid(lin, selection, red)
            self.model = model
            exact_rows = selection.exact_rows
            keep = np.union1d(self.net_rows, exact_rows)
            self.k_rows = keep
            self.ti_k = np.ascontiguousarray(red.t_inv[keep])
            self.x0_k = lin.x0[keep]
            self.t_n = np.ascontiguousarray(red.t[:, exact_rows])
            t_l = red.t[:, selection.affine_rows]
            self.m = t_l @ model.a_hat
            self.b_m = t_l @ model.b_hat
            self.c = t_l @ model.x_hat0
            self.exact_pos = selection.nonlinear_pos
            self.xbuf = lin.x0.copy()

    def project(self, x_e: np.ndarray) -> np.ndarray:
        return self.red.t @ (x_e - self.lin.x0)

    def lift_external(self, xr: np.ndarray) -> np.ndarray:
        return self.lin.x0 + self.red.t_inv @ xr

    def lift(self, p: np.ndarray) -> np.ndarray:
        xs = p[:, :self.ns9]
        xe = self.lin.x0[None, :] + p[:, self.ns9:] @ self.red.t_inv.T
        return np.hstack([xs, xe])


class _FullLifter:
    @staticmethod
    def lift(p: np.ndarray) -> np.ndarray:
        return p


def stage_inputs(v: np.ndarray, v_prev: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Polar inputs at the start, midpoint and end of a step.

    ``v`` is the most recent exchanged phasor vector and ``v_prev`` the one
    before; the step extrapolates linearly between them.  Without history
    (first step after a handoff) the input is held.  Returns angle and
    magnitude arrays of shape ``(3, len(v))``.
    """
    if v_prev is None:
        v3 = np.broadcast_to(v, (3, v.size))
    else:
        v3 = v[None, :] + _STAGE_FRACTIONS * (v - v_prev)[None, :]
    return np.angle(v3), np.abs(v3)


_STAGE_FRACTIONS = np.array([[0.0], [0.5], [1.0]])


class _Partitioned:
    """Study area exact, external area exact or reduced.

    Each step integrates both areas with the boundary phasors of the
    previous exchange (extrapolated over the step, see ``exchange``), then
    re-solves the boundary buses from every machine EMF.
    """

    def __init__(self, prep: Prepared, study: tuple[Plant, nm.VoltageRecovery],
                 x_s: np.ndarray, ext_plant: Plant, rec_e: nm.VoltageRecovery,
                 ctx: _ReducedContext | None, x_ext: np.ndarray, mode: Mode,
                 v_s: np.ndarray, v_e: np.ndarray, exchange: str = "extrapolated",
                 history: tuple | None = None):
        self.prep = prep
        self.plant_s, self.rec_s = study
        self.x_s = np.ascontiguousarray(x_s, dtype=float)
        self.plant_e, self.rec_e = ext_plant, rec_e
        self.ctx = ctx
        self.x_ext = np.ascontiguousarray(x_ext, dtype=float)
        self.mode = mode
        self.v_s, self.v_e = v_s, v_e
        self.nb = v_s.size
        self.exchange = exchange
        self.history = history if exchange == "extrapolated" else None
        self.lifter = ctx if ctx is not None else _FullLifter()
        self.ns9 = self.x_s.size
        self.joint = joint_exchange_matrix(self.rec_s, self.rec_e)
        pe, ps = self.plant_e, self.plant_s
        self._kargs = (pe.g, pe.b, pe.gb, pe.bb, pe.p, pe.p_ref, pe.v_ref)
        self._kargs_s = (ps.g, ps.b, ps.gb, ps.bb, ps.p, ps.p_ref, ps.v_ref)
        if ctx is not None:
            self._g_u = np.hstack(ctx.g_u)
            self._u0 = np.tile(ctx.lin.u0, 3)

    # stepping -------------------------------------------------------------
    def step(self, h: float) -> None:
        nb = self.nb
        v = np.concatenate([self.v_s, self.v_e])
        ang, mag = stage_inputs(v, None if self.history is None else self.history)
        # the study area is driven by the external-side phasors and vice versa
        th_e, vb_e = np.ascontiguousarray(ang[:, nb:]), np.ascontiguousarray(mag[:, nb:])
        self.x_s = self.plant_s.k.rk4_step_staged(self.x_s, th_e[0], vb_e[0], th_e[1], vb_e[1],
                                                  th_e[2], vb_e[2], *self._kargs_s, h)
        u_e = np.hstack([ang[:, :nb], mag[:, :nb]])
        if self.ctx is None:
            self.x_ext = self.plant_e.rk4_staged(self.x_ext, u_e[0], u_e[1], u_e[2], h)
        elif self.mode is Mode.HYBRID:
            self.x_ext = self._hybrid_step(self.x_ext, u_e, h)
        else:
            c = self.ctx
            self.x_ext = c.phi @ self.x_ext + self._g_u @ (u_e.reshape(-1) - self._u0) + c.g_0
        if self.exchange == "extrapolated":
            self.history = v
        if self.exchange == "jacobi":
            self.v_s, self.v_e = boundary_exchange(emf_phasors(self.x_s), self._ext_emf(),
                                                   self.v_s, self.v_e, self.rec_s, self.rec_e)
        else:
            v_new = self.joint @ np.concatenate([emf_phasors(self.x_s), self._ext_emf()])
            self.v_s, self.v_e = v_new[:nb], v_new[nb:]

    def _hybrid_rhs(self, xr, u, w):
        c = self.ctx
        out = c.m @ xr + w
        if c.exact_pos.size:
            xb = c.xbuf
            xb[c.k_rows] = c.x0_k + c.ti_k @ xr
            nb = self.nb
            f = self.plant_e.k.rhs_rows(xb, u[:nb], u[nb:], *self._kargs, c.exact_pos)
            out += c.t_n @ f
        return out

    def _hybrid_step(self, xr, u, h):
        c = self.ctx
        w = (u - c.lin.u0) @ c.b_m.T + c.c
        k1 = self._hybrid_rhs(xr, u[0], w[0])
        k2 = self._hybrid_rhs(xr + 0.5 * h * k1, u[1], w[1])
        k3 = self._hybrid_rhs(xr + 0.5 * h * k2, u[1], w[1])
        k4 = self._hybrid_rhs(xr + h * k3, u[2], w[2])
        return xr + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _ext_net(self) -> np.ndarray:
        if self.ctx is None:
            return self.x_ext.reshape(-1, NSTATE)[:, [DELTA, 6, 7]].reshape(-1)
        return self.ctx.x0_net + self.ctx.ti_net @ self.x_ext

    def _ext_emf(self) -> np.ndarray:
        z = self._ext_net().reshape(-1, 3)
        return (z[:, 1] + 1j * z[:, 2]) * np.exp(1j * (z[:, 0] - np.pi / 2))

    # views ----------------------------------------------------------------
    def external_state(self) -> np.ndarray:
        return self.x_ext if self.ctx is None else self.ctx.lift_external(self.x_ext)

    def physical(self) -> np.ndarray:
        return np.concatenate([self.x_s, self.external_state()])

    def snapshot(self) -> np.ndarray:
        return np.concatenate([self.x_s, self.x_ext])

    def angles(self, ns: int, ref_pos: int):
        k = ref_pos - ns
        return self.x_s[0::NSTATE], self._ext_net()[3 * k]

    def exact_check(self) -> np.ndarray:
        return self.x_s

    def external_input(self) -> np.ndarray:
        return _polar(self.v_s)


# -- relinearization -----------------------------------------------------------------

def relinearize(plant: Plant, x: np.ndarray, u: np.ndarray, tol: float = 1e-5,
                selection: FunctionSelection | None = None, reduce: bool = True):
    """New linear model, balanced reduction and hybrid model at ``(x, u)``.

    Raises :class:`NotHurwitzError` when the new state matrix is unstable
    and a reduction was requested.
    """
    lin = jacobians(plant, x, u)
    red = reduce_linear(lin, tol) if reduce else None
    hyb = build_hybrid(lin, selection, red) if selection is not None else None
    return lin, red, hyb


def _same_expansion(lin: LinearModel, x: np.ndarray, u: np.ndarray, nb: int,
                    tol: float = 1e-8) -> bool:
    """True when ``(x, u)`` equals the expansion point of ``lin`` up to a
    common rotation of every angle.

    The vector field depends on angle differences only, so such a model is
    already exact at the new point and rebuilding it would be wasted work.
    """
    shift = float(np.mean(x[DELTA::NSTATE] - lin.x0[DELTA::NSTATE]))
    dx = x - lin.x0
    dx[DELTA::NSTATE] -= shift
    du = u - lin.u0
    du[:nb] -= shift
    return bool(max(np.abs(dx).max(), np.abs(du).max() if du.size else 0.0) < tol)


# -- driver ---------------------------------------------------------------------------

def run_simulation(net: nm.BusNetwork | Prepared, cfg: SimConfig) -> Trajectory:
    """Simulate ``cfg.duration`` seconds under ``cfg.policy``.

    A blow-up (``|omega - 1| > 0.5``, a machine slipping more than pi
    relative to the inertia-weighted mean angle, or non-finite values)
    ends the run early with ``stable=False`` when ``stop_on_instability``.
    """
    prep = net if isinstance(net, Prepared) else Prepared(net, tol=cfg.tol)
    return _Runner(prep, cfg).run()


class _Runner:
    def __init__(self, prep: Prepared, cfg: SimConfig):
        self.prep, self.cfg = prep, cfg
        self.h = cfg.step
        self.fault = cfg.fault
        self.tripped = self.fault.tripped_branches(prep.net) if self.fault else ()
        if cfg.partitioned or cfg.policy == "adaptive_unpartitioned":
            if prep.part is None:
                raise nm.NetworkError(f"policy {cfg.policy} needs a partitioned network")
        if cfg.partitioned and self.fault is not None:
            part = prep.part
            if self.fault.bus not in part.study_buses:
                raise nm.NetworkError(f"fault bus {self.fault.bus} is outside the study area")
            ties = set(self.tripped) & set(part.tie_lines)
            if ties:
                raise nm.NetworkError(f"post-fault action trips tie-line(s) {sorted(ties)}; "
                                      "partitioned policies need a fixed boundary")
            ext_trip = [b for b in self.tripped
                        if prep.net.branch(b).from_bus in part.external_buses
                        or prep.net.branch(b).to_bus in part.external_buses]
            if ext_trip:
                raise nm.NetworkError(f"post-fault action trips external branches {ext_trip}")
        self.ns = prep.ns
        self.ref_gen = prep.reference_gen if prep.part is not None else None
        self.ref_pos = prep.gen_order.index(self.ref_gen) if self.ref_gen is not None else 0
        x0 = prep.x0
        self.baseline = x0[0:NSTATE * self.ns:NSTATE] - x0[NSTATE * self.ref_pos]
        self.coi0 = self._coi_rel(x0)
        self.op_point = x0
        self.mode_log: list[str] = []
        self.dev_log: list[float] = []
        self.relin: list[float] = []
        self.events: list[dict] = []
        self.records: list[tuple[object, np.ndarray]] = []
        self.ctx: _ReducedContext | None = None
        self.selection = None
        if cfg.policy in ("adaptive_partitioned", "hybrid_partitioned"):
            self.selection = prep.selection(cfg.threshold_pu)
        elif cfg.policy == "adaptive_unpartitioned":
            self.selection = prep.selection(cfg.threshold_pu, unpartitioned=True)

    # helpers ------------------------------------------------------------
    def _coi_rel(self, x: np.ndarray) -> np.ndarray:
        d = x[DELTA::NSTATE]
        return d - self.prep.coi_weights @ d

    def _phase(self, k: int, k_on: int, k_clear: int) -> str:
        if k < k_on:
            return "pre"
        return "on" if k < k_clear else "post"

    @staticmethod
    def _capture(seg) -> tuple:
        """Physical state plus, for a reduced segment, its reduction and reduced state."""
        red = (seg.ctx, seg.x_ext.copy()) if isinstance(seg, _Partitioned) and seg.ctx else None
        return seg.physical().copy(), red

    def _log_switch(self, k: int, captured: tuple, seg, what: str, frm: str, to: str) -> None:
        before, prev_red = captured
        after = seg.physical()
        lifted = None
        if isinstance(seg, _Partitioned) and seg.ctx is not None:
            # compare in the coordinates the new segment integrates; the lifted
            # comparison also carries the round-off of T T_inv, scaled by |T|
            ns9 = seg.ns9
            if prev_red is not None and prev_red[0] is seg.ctx:
                ext = seg.x_ext - prev_red[1]
            else:
                ext = seg.x_ext - seg.ctx.project(before[ns9:])
            diff = np.concatenate([seg.x_s - before[:ns9], ext])
            lifted = float(np.abs(seg.ctx.red.t @ (after[ns9:] - before[ns9:])).max())
        else:
            diff = after - before
        ev = {"t": round(k * self.h, 12), "step": k, "event": what, "from": frm, "to": to,
              "continuity": float(np.abs(diff).max()) if diff.size else 0.0}
        if lifted is not None:
            ev["lifted_residual"] = lifted
        self.events.append(ev)

    # segment construction ---------------------------------------------------
    def _partitioned(self, x: np.ndarray, study_key: tuple, mode: Mode, reduced: bool,
                     ctx: _ReducedContext | None = None) -> _Partitioned:
        prep = self.prep
        ns9 = NSTATE * self.ns
        study = prep.area("study", *study_key)
        plant_e, rec_e = prep.area("external")
        x_s, x_e = x[:ns9], x[ns9:]
        if reduced:
            if ctx is None:
                ctx = self._context(plant_e, prep.external_linear(), prep.external_reduction())
            x_ext = ctx.project(x_e)
        else:
            x_ext = x_e
        # consistent boundary phasors from a joint solve at the handoff
        e = emf_phasors(x)
        vs, ve = boundary_exchange(e[:self.ns], e[self.ns:], None, None, study[1], rec_e, lag=False)
        return _Partitioned(prep, study, x_s, plant_e, rec_e, ctx if reduced else None,
                            x_ext, mode, vs, ve, exchange=self.cfg.exchange)

    def _context(self, plant_e, lin, red) -> _ReducedContext:
        return _ReducedContext(plant_e, lin, red, self.selection, self.h, NSTATE * self.ns)

    def _unpartitioned(self, x: np.ndarray, mode: Mode, lin: LinearModel | None = None):
        prep = self.prep
        plant = prep.mono_plant(None, self.post_key[1]) if self.phase == "post" else prep.mono_plant()
        if lin is None:
            lin = prep.unpartitioned_linear(self.post_key[1] if self.phase == "post" else ())
        return _Unpartitioned(plant, lin, self.selection, x, mode)

    def _segment(self, phase: str, x: np.ndarray, k: int):
        cfg, prep = self.cfg, self.prep
        pol = cfg.policy
        self.phase = phase
        key = {"pre": (None, ()), "on": (self.fault, ()), "post": self.post_key}[phase]
        if pol == "full_only":
            return _MonoFull(prep.mono_plant(*key), x), Mode.FULL
        if pol == "full_partitioned":
            return self._partitioned(x, key, Mode.FULL, reduced=False), Mode.FULL
        if pol == "linear_only":
            return self._partitioned(x, key, Mode.LINEAR, reduced=True, ctx=self.ctx), Mode.LINEAR
        if phase == "on":
            return _MonoFull(prep.mono_plant(*key), x), Mode.FULL
        if pol == "adaptive_unpartitioned":
            return self._unpartitioned(x, Mode.LINEAR), Mode.LINEAR
        mode = Mode.HYBRID if (pol == "hybrid_partitioned" and phase == "post") else Mode.LINEAR
        return self._partitioned(x, key, mode, reduced=True, ctx=self.ctx), mode

    # main loop ----------------------------------------------------------------
    def run(self) -> Trajectory:
        cfg, prep, h = self.cfg, self.prep, self.h
        n_steps = cfg.n_steps
        k_on, k_clear = cfg.fault_steps()
        self.post_key = (None, tuple(sorted(self.tripped)))
        adaptive = cfg.policy in ("adaptive_partitioned", "adaptive_unpartitioned")
        sw = SwitchState(mode=Mode.LINEAR, delta_max=cfg.effective_delta_max,
                         t_th_max=cfg.t_th_max, reference_gen=self.ref_gen)
        phase = self._phase(0, k_on, k_clear)
        seg, mode = self._segment(phase, prep.x0.copy(), 0)
        if isinstance(seg, _Partitioned):
            self.ctx = seg.ctx
        self.records.append((seg.lifter, seg.snapshot().copy()))
        stable, reason = True, None
        for k in range(n_steps):
            new_phase = self._phase(k, k_on, k_clear)
            if new_phase != phase:
                captured = self._capture(seg)
                before = captured[0]
                phase = new_phase
                seg, mode_new = self._segment(phase, before, k)
                if isinstance(seg, _Partitioned) and seg.ctx is not None:
                    self.ctx = seg.ctx
                self._log_switch(k, captured, seg, "handoff", mode.value, mode_new.value)
                mode = mode_new
            if adaptive:
                d_s, d_ref = seg.angles(self.ns, self.ref_pos)
                dev = float(np.abs(d_s - d_ref - self.baseline).max()) if self.ns else 0.0
                self.dev_log.append(dev)
                sw = switch_mode(sw, phase == "on", dev, h)
                if sw.relinearize:
                    seg = self._relinearize(seg, k)
                    sw = replace(sw, t_th=0.0, relinearize=False)
                    d_s, d_ref = seg.angles(self.ns, self.ref_pos)
                    dev = float(np.abs(d_s - d_ref - self.baseline).max())
                    self.dev_log.append(dev)
                    sw = switch_mode(sw, False, dev, h)
                if sw.mode is not mode and phase != "on":
                    captured = self._capture(seg)
                    seg.mode = sw.mode
                    self._log_switch(k, captured, seg, "switch", mode.value, sw.mode.value)
                    mode = sw.mode
            self.mode_log.append(mode.value)
            seg.step(h)
            snap = seg.snapshot()
            self.records.append((seg.lifter, snap))
            exact = seg.exact_check()
            if not np.all(np.isfinite(snap)):
                stable, reason = False, f"non-finite state at t={(k + 1) * h:.4f}s"
            elif np.abs(exact[OMEGA::NSTATE] - 1.0).max() > OMEGA_LIMIT:
                stable, reason = False, f"speed deviation above {OMEGA_LIMIT} p.u. at t={(k + 1) * h:.4f}s"
            elif exact.size == prep.x0.size and \
                    np.abs(self._coi_rel(exact) - self.coi0).max() > ANGLE_LIMIT:
                stable, reason = False, f"angle separation above pi at t={(k + 1) * h:.4f}s"
            if not stable and cfg.stop_on_instability:
                break
        states = self._lift_all()
        if stable:
            stable, reason, cut = self._verdict(states)
            if not stable and cfg.stop_on_instability:
                states = states[:cut + 1]
                self.mode_log = self.mode_log[:cut]
        times = h * np.arange(states.shape[0])
        return Trajectory(times=times, states=states, gen_order=prep.gen_order,
                          mode_log=self.mode_log, relinearization_events=self.relin,
                          switch_events=self.events, stable=stable, instability=reason,
                          policy=cfg.policy, deviation_log=self.dev_log)

    def _relinearize(self, seg, k: int):
        prep, cfg = self.prep, self.cfg
        t = round(k * self.h, 12)
        captured = self._capture(seg)
        before = captured[0]
        key = self.post_key if self.phase == "post" else (None, ())
        plant = seg.plant if isinstance(seg, _Unpartitioned) else prep.mono_plant(*key)
        try:
            # expand about the steady operating condition of the present network,
            # continued from the previous one; starting from the swinging state
            # instead can land on an unstable equilibrium
            xs, _ = operating_point(plant, self.op_point)
            if isinstance(seg, _Unpartitioned):
                new = _Unpartitioned(plant, jacobians(plant, xs, _EMPTY), self.selection,
                                     seg.x, seg.mode)
            else:
                ns9 = NSTATE * self.ns
                e = emf_phasors(xs)
                v_s, _ = boundary_exchange(e[:self.ns], e[self.ns:], None, None,
                                           seg.rec_s, seg.rec_e, lag=False)
                u_s = _polar(v_s)
                ctx = seg.ctx
                if not _same_expansion(ctx.lin, xs[ns9:], u_s, seg.plant_e.nb):
                    lin, red, _ = relinearize(seg.plant_e, xs[ns9:], u_s, cfg.tol)
                    ctx = self._context(seg.plant_e, lin, red)
                new = _Partitioned(prep, (seg.plant_s, seg.rec_s), seg.x_s, seg.plant_e,
                                   seg.rec_e, ctx, ctx.project(before[ns9:]), seg.mode,
                                   seg.v_s, seg.v_e, exchange=seg.exchange, history=seg.history)
        except (OperatingPointError, NotHurwitzError) as exc:
            warnings.warn(f"relinearization at t={t}s skipped: {exc}",
                          RuntimeWarning, stacklevel=2)
            self.events.append({"t": t, "step": k, "event": "relinearization_failed",
                                "reason": str(exc)})
            return seg
        if isinstance(new, _Partitioned):
            self.ctx = new.ctx
        self.op_point = xs
        self.relin.append(t)
        self.baseline = xs[0:NSTATE * self.ns:NSTATE] - xs[NSTATE * self.ref_pos]
        self._log_switch(k, captured, new, "relinearization", seg.mode.value, new.mode.value)
        return new

    def _lift_all(self) -> np.ndarray:
        out = []
        for lifter, grp in itertools.groupby(self.records, key=lambda r: r[0]):
            block = np.vstack([p for _, p in grp])
            out.append(lifter.lift(block))
        return np.vstack(out)

    def _verdict(self, states: np.ndarray):
        w = states[:, OMEGA::NSTATE]
        d = states[:, DELTA::NSTATE]
        rel = d - (d @ self.prep.coi_weights)[:, None]
        bad_w = np.abs(w - 1.0).max(axis=1) > OMEGA_LIMIT
        bad_d = np.abs(rel - self.coi0[None, :]).max(axis=1) > ANGLE_LIMIT
        bad_f = ~np.all(np.isfinite(states), axis=1)
        bad = bad_w | bad_d | bad_f
        if not bad.any():
            return True, None, states.shape[0] - 1
        j = int(np.argmax(bad))
        t = j * self.h
        if bad_f[j]:
            why = f"non-finite state at t={t:.4f}s"
        elif bad_w[j]:
            why = f"speed deviation above {OMEGA_LIMIT} p.u. at t={t:.4f}s"
        else:
            why = f"angle separation above pi at t={t:.4f}s"
        return False, why, j

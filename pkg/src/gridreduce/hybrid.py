"""Partially linearized models.

Machines electrically close to the boundary (large admittance column norm)
keep their exact equations; the others are replaced by their first-order
Taylor expansion.  The partitioned form works in balanced reduced
coordinates, the unpartitioned form in the original states.

Conventions shared by every function here:

* reduced coordinates are deviations, ``x = x0 + T_inv @ xr``;
* the affine rows are ``A (x - x0) + B (u - u0) + f(x0, u0)``, the exact
  first-order expansion also away from equilibrium;
* every state row of a nonlinear machine is evaluated exactly, including
  its five structurally linear rows.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import NONLINEAR_FIELDS, NSTATE, Plant
from .linearize import LinearModel
from .mor import BalancedReduction

V_BASE_KV = 20.0


def column_norms(y21: np.ndarray) -> np.ndarray:
    """Euclidean norm of each column's magnitudes (one value per machine)."""
    y21 = np.atleast_2d(np.asarray(y21))
    return np.sqrt((np.abs(y21) ** 2).sum(axis=0))


def threshold_to_pu(threshold_siemens: float, s_base: float, v_base: float = V_BASE_KV) -> float:
    """Admittance in siemens to per unit: ``Y_pu = Y_S * V_base^2 / S_base``."""
    if not (s_base > 0 and v_base > 0):
        raise ValueError("base power and voltage must be positive")
    return threshold_siemens * v_base ** 2 / s_base


def threshold_to_siemens(threshold_pu: float, s_base: float, v_base: float = V_BASE_KV) -> float:
    if not (s_base > 0 and v_base > 0):
        raise ValueError("base power and voltage must be positive")
    return threshold_pu * s_base / v_base ** 2


_THRESHOLD_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|inf)\s*(pu|p\.u\.|S)\s*$")


def parse_threshold(text: str, s_base: float, v_base: float = V_BASE_KV) -> float:
    """``"1.0pu"`` or ``"0.25S"`` to a per-unit threshold; a unit is mandatory."""
    m = _THRESHOLD_RE.match(text)
    if not m:
        raise ValueError(f"threshold {text!r} must be a number followed by 'pu' or 'S'")
    value = float(m.group(1))
    if value < 0:
        raise ValueError("threshold must be nonnegative")
    return value if m.group(2) != "S" else threshold_to_pu(value, s_base, v_base)


@dataclass(frozen=True)
class FunctionSelection:
    """Which machines keep exact equations.

    ``q`` counts the retained nonlinear scalar functions (four per nonlinear
    machine).  ``exact_rows`` holds every state row of those machines and
    ``p_hat`` selects the complementary affine rows.
    """

    gen_order: tuple[int, ...]
    norms: np.ndarray
    threshold_pu: float
    nonlinear_gens: frozenset[int]
    linear_gens: frozenset[int]

    @property
    def nonlinear_pos(self) -> np.ndarray:
        return np.array([k for k, g in enumerate(self.gen_order) if g in self.nonlinear_gens],
                        dtype=np.intp)

    @property
    def linear_pos(self) -> np.ndarray:
        return np.array([k for k, g in enumerate(self.gen_order) if g in self.linear_gens],
                        dtype=np.intp)

    @property
    def q(self) -> int:
        return len(NONLINEAR_FIELDS) * len(self.nonlinear_gens)

    @property
    def n(self) -> int:
        return NSTATE * len(self.gen_order)

    @property
    def exact_rows(self) -> np.ndarray:
        return _machine_rows(self.nonlinear_pos)

    @property
    def affine_rows(self) -> np.ndarray:
        return _machine_rows(self.linear_pos)

    @property
    def p_hat(self) -> np.ndarray:
        return np.eye(self.n)[self.affine_rows]

    def to_dict(self) -> dict:
        return {
            "threshold_pu": self.threshold_pu,
            "norms": {str(g): float(v) for g, v in zip(self.gen_order, self.norms)},
            "nonlinear_gens": sorted(self.nonlinear_gens),
            "linear_gens": sorted(self.linear_gens),
            "q": self.q,
            "linearized_functions": len(NONLINEAR_FIELDS) * len(self.linear_gens),
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _machine_rows(pos: np.ndarray) -> np.ndarray:
    pos = np.asarray(pos, dtype=np.intp)
    return (NSTATE * pos[:, None] + np.arange(NSTATE)[None, :]).reshape(-1)


def select_functions(norms, threshold_pu: float, gen_order: Sequence[int],
                     always_nonlinear: Iterable[int] = ()) -> FunctionSelection:
    """Keep machine ``i`` exact iff ``norms[i] >= threshold_pu`` or it is forced."""
    norms = np.asarray(norms, dtype=float)
    if len(norms) != len(gen_order):
        raise ValueError("one norm per generator required")
    if not threshold_pu >= 0:
        raise ValueError("threshold must be nonnegative")
    forced = set(always_nonlinear)
    keep = {g for g, v in zip(gen_order, norms) if v >= threshold_pu or g in forced}
    return FunctionSelection(gen_order=tuple(gen_order), norms=norms, threshold_pu=float(threshold_pu),
                             nonlinear_gens=frozenset(keep),
                             linear_gens=frozenset(gen_order) - frozenset(keep))


def reference_generator(norms, gen_order: Sequence[int]) -> int:
    """Machine with the smallest column norm; ties go to the lowest id."""
    return min(zip(norms, gen_order))[1]


@dataclass(frozen=True)
class HybridModel:
    selection: FunctionSelection
    lin: LinearModel
    reduction: BalancedReduction | None
    a_hat: np.ndarray          # affine rows w.r.t. the (reduced) deviation
    b_hat: np.ndarray | None
    x_hat0: np.ndarray         # affine rows of f(x0, u0)

    @property
    def partitioned(self) -> bool:
        return self.reduction is not None


def build_hybrid(lin: LinearModel, selection: FunctionSelection,
                 reduction: BalancedReduction | None = None) -> HybridModel:
    """Affine blocks ``P A T_inv`` and ``P B`` (partitioned) or ``P A`` (unpartitioned)."""
    rows = selection.affine_rows
    if selection.n != lin.n:
        raise ValueError("selection and linear model sizes differ")
    a_rows = lin.a[rows]
    if reduction is not None:
        return HybridModel(selection, lin, reduction, a_hat=a_rows @ reduction.t_inv,
                           b_hat=lin.b[rows], x_hat0=lin.f0[rows])
    return HybridModel(selection, lin, None, a_hat=a_rows, b_hat=None, x_hat0=lin.f0[rows])


def _splice(model: HybridModel, exact: np.ndarray, affine: np.ndarray) -> np.ndarray:
    out = np.empty(model.lin.n)
    out[model.selection.exact_rows] = exact
    out[model.selection.affine_rows] = affine
    return out


def rhs_hybrid(x_r: np.ndarray, u: np.ndarray, model: HybridModel, plant: Plant) -> np.ndarray:
    """Reduced derivative ``T [f_exact(x, u); A_hat xr + B_hat du + x_hat0]``."""
    red = model.reduction
    if red is None:
        raise ValueError("model was built for the unpartitioned variant")
    x_r = np.asarray(x_r, dtype=float)
    if x_r.size != red.r:
        raise ValueError(f"reduced state length {x_r.size} != r = {red.r}")
    x = model.lin.x0 + red.t_inv @ x_r
    u = np.asarray(u, dtype=float)
    exact = plant.rhs_rows(x, u, model.selection.nonlinear_pos)
    affine = model.a_hat @ x_r + model.b_hat @ (u - model.lin.u0) + model.x_hat0
    return red.t @ _splice(model, exact, affine)


def rhs_hybrid_unpartitioned(x: np.ndarray, model: HybridModel, plant: Plant) -> np.ndarray:
    """Full-length derivative with exact rows for nonlinear machines."""
    if model.reduction is not None:
        raise ValueError("model was built for the partitioned variant")
    x = np.asarray(x, dtype=float)
    if x.size != model.lin.n:
        raise ValueError(f"state length {x.size} != n = {model.lin.n}")
    exact = plant.rhs_rows(x, model.lin.u0, model.selection.nonlinear_pos)
    affine = model.a_hat @ (x - model.lin.x0) + model.x_hat0
    return _splice(model, exact, affine)


def rhs_nonlinear_reduced(x_r: np.ndarray, u: np.ndarray, lin: LinearModel,
                          red: BalancedReduction, plant: Plant) -> np.ndarray:
    """Projection of the exact vector field, ``T f(x0 + T_inv xr, u)``."""
    return red.t @ plant.rhs(lin.x0 + red.t_inv @ x_r, u)


def rhs_linear_reduced(x_r: np.ndarray, u: np.ndarray, lin: LinearModel,
                       red: BalancedReduction) -> np.ndarray:
    """Balanced-truncated linear model, ``A_r xr + B_r du + T f0``."""
    return red.a_r @ x_r + red.b_r @ (np.asarray(u) - lin.u0) + red.t @ lin.f0


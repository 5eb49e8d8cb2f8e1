"""Balanced truncation of a stable linear model.

Gramians come from a complex-Schur Bartels-Stewart solver; the balancing
transform uses the square-root method so nearly rank-deficient Gramians are
never multiplied together.  All quantities act on deviations from the
linearization point.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import schur, solve_triangular
from scipy.linalg.lapack import dtrsyl

from .linearize import LinearModel

SIGMA_FLOOR = 1e-14
TIE_RTOL = 1e-12


class NotHurwitzError(np.linalg.LinAlgError):
    """The state matrix has eigenvalues with nonnegative real part."""

    def __init__(self, eigenvalues: np.ndarray):
        self.eigenvalues = np.asarray(eigenvalues)
        shown = ", ".join(f"{z:.4g}" for z in self.eigenvalues[:8])
        more = "" if self.eigenvalues.size <= 8 else f" (+{self.eigenvalues.size - 8} more)"
        super().__init__(f"matrix is not Hurwitz; offending eigenvalues: {shown}{more}")


class _RealSchur:
    """Real Schur form ``A = U T U^T`` shared by ``A`` and ``A^T`` solves."""

    def __init__(self, a: np.ndarray):
        t, u, sdim = schur(a, output="real", sort="lhp")
        if sdim < a.shape[0]:
            eig = np.linalg.eigvals(a)
            raise NotHurwitzError(eig[eig.real >= 0])
        self.t, self.u = t, u

    def solve(self, q: np.ndarray, transpose: bool) -> np.ndarray:
        """``op(A) W + W op(A)^T + Q = 0`` with ``op`` the identity or transpose."""
        u = self.u
        qt = u.T @ q @ u
        if transpose:
            y, scale, info = dtrsyl(self.t, self.t, -qt, trana="T", tranb="N")
        else:
            y, scale, info = dtrsyl(self.t, self.t, -qt, trana="N", tranb="T")
        if info < 0:
            raise np.linalg.LinAlgError(f"trsyl argument {-info} invalid")
        w = u @ (y / scale) @ u.T
        return 0.5 * (w + w.T)


def _schur_solve_columns(r, u, q):
    """Column-by-column back-substitution of the same triangular equation.

    Column ``k`` solves ``(R + conj(R_kk) I) y_k = -q_k - sum_{l>k} conj(R_kl) y_l``.
    Kept as an independent check of the LAPACK path.
    """
    n = r.shape[0]
    qt = u.conj().T @ q @ u
    y = np.zeros((n, n), dtype=complex)
    rh = r.conj()
    eig = np.diag(r).copy()
    work = r.copy()
    diag = np.diag_indices(n)
    for k in range(n - 1, -1, -1):
        rhs = -qt[:, k]
        if k + 1 < n:
            rhs = rhs - y[:, k + 1:] @ rh[k, k + 1:]
        work[diag] = eig + rh[k, k]
        y[:, k] = solve_triangular(work, rhs)
    w = (u @ y @ u.conj().T).real
    return 0.5 * (w + w.T)


def solve_lyapunov(a: np.ndarray, q: np.ndarray, refine: int = 3,
                   method: str = "lapack") -> np.ndarray:
    """Solve ``A W + W A^T + Q = 0`` for Hurwitz ``A``.

    Bartels-Stewart: reduce ``A`` to Schur form, solve the triangular
    equation, transform back.  ``method="lapack"`` uses the real Schur form
    and LAPACK's triangular Sylvester solver; ``method="columns"`` uses the
    complex Schur form and explicit column back-substitution.  Poorly
    scaled ``A`` leaves a residual above round-off, so up to ``refine``
    correction solves reuse the same factorization.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise ValueError("a and q must be square and of equal size")
    if method == "lapack":
        fac = _RealSchur(a)
        return _refined(a, q, lambda rhs: fac.solve(rhs, transpose=False), refine)
    if method != "columns":
        raise ValueError(f"unknown method {method!r}")
    r, u = schur(a.astype(complex), output="complex")
    eig = np.diag(r)
    bad = eig[eig.real >= 0]
    if bad.size:
        raise NotHurwitzError(bad)
    return _refined(a, q, lambda rhs: _schur_solve_columns(r, u, rhs), refine)


def _refined(a, q, step, refine):
    w = step(q)
    qn = np.linalg.norm(q)
    for _ in range(refine):
        res = a @ w + w @ a.T + q
        if np.linalg.norm(res) <= 1e-13 * qn:
            break
        w = w + step(res)
    return w


def gramians(a: np.ndarray, b: np.ndarray, c: np.ndarray | None = None, refine: int = 3):
    """Controllability and observability Gramians; ``c`` defaults to the identity."""
    a = np.asarray(a, dtype=float)
    fac = _RealSchur(a)
    wc = _refined(a, b @ b.T, lambda rhs: fac.solve(rhs, transpose=False), refine)
    cc = np.eye(a.shape[0]) if c is None else c.T @ c
    wo = _refined(a.T, cc, lambda rhs: fac.solve(rhs, transpose=True), refine)
    return wc, wo


def _psd_factor(w: np.ndarray) -> np.ndarray:
    lam, v = np.linalg.eigh(0.5 * (w + w.T))
    lam = np.clip(lam, 0.0, None)
    return v * np.sqrt(lam)


def balance_transform(wc: np.ndarray, wo: np.ndarray):
    """Square-root balancing.

    Returns ``(t, t_inv, hankel, flagged)`` where ``t @ wc @ t.T`` and
    ``t_inv.T @ wo @ t_inv`` both equal ``diag(hankel)`` and ``flagged``
    lists the indices whose Hankel value is below ``SIGMA_FLOOR``.  Those
    directions are numerically meaningless and are scaled with the floor.
    """
    lc = _psd_factor(wc)
    lo = _psd_factor(wo)
    uu, sig, vt = np.linalg.svd(lo.T @ lc)
    flagged = np.flatnonzero(sig < SIGMA_FLOOR)
    s = np.maximum(sig, SIGMA_FLOOR) ** -0.5
    t = s[:, None] * (uu.T @ lo.T)
    t_inv = (lc @ vt.T) * s[None, :]
    return t, t_inv, sig, flagged


def select_order(hankel, tol: float) -> int:
    """Smallest ``r`` with ``2 * sum(hankel[r:]) <= tol``, never splitting a tie."""
    sig = np.asarray(hankel, dtype=float)
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    tails = 2.0 * np.concatenate([np.cumsum(sig[::-1])[::-1], [0.0]])
    r = int(np.flatnonzero(tails <= tol)[0])
    while 0 < r < sig.size and abs(sig[r - 1] - sig[r]) <= TIE_RTOL * max(abs(sig[r - 1]), 1e-300):
        r += 1
    return r


@dataclass(frozen=True)
class BalancedReduction:
    t: np.ndarray          # r x n
    t_inv: np.ndarray      # n x r
    hankel: np.ndarray     # all n values, nonincreasing
    r: int
    a_r: np.ndarray
    b_r: np.ndarray
    flagged: np.ndarray
    error_bound: float

    @property
    def c_r(self) -> np.ndarray:
        return self.t_inv

    @property
    def n(self) -> int:
        return self.t.shape[1]


def reduce_linear(lin: LinearModel, tol: float = 1e-5, r: int | None = None) -> BalancedReduction:
    """Balance ``lin`` and keep the leading states (``r`` fixed or chosen from ``tol``)."""
    wc, wo = gramians(lin.a, lin.b)
    t_full, ti_full, sig, flagged = balance_transform(wc, wo)
    if r is None:
        r = select_order(sig, tol)
    if not 0 <= r <= sig.size:
        raise ValueError(f"order {r} outside [0, {sig.size}]")
    t = t_full[:r]
    t_inv = ti_full[:, :r]
    if r:
        # remove the round-off left in T T_inv so projecting a lifted state is exact
        t_inv = np.linalg.solve((t @ t_inv).T, t_inv.T).T
    return BalancedReduction(t=t, t_inv=t_inv, hankel=sig, r=r,
                             a_r=t @ lin.a @ t_inv, b_r=t @ lin.b,
                             flagged=flagged, error_bound=float(2.0 * sig[r:].sum()))


def write_hankel_csv(path: str | Path, hankel, r: int | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "sigma", "retained"])
        for k, s in enumerate(hankel, start=1):
            w.writerow([k, repr(float(s)), int(r is None or k <= r)])


def frequency_response(a, b, c, freqs) -> np.ndarray:
    """``G(jw) = C (jwI - A)^-1 B`` for every frequency in ``freqs``."""
    n = a.shape[0]
    eye = np.eye(n)
    return np.array([c @ np.linalg.solve(1j * w * eye - a, b) for w in freqs])

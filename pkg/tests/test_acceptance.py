"""End-to-end acceptance checks, one test per criterion.

Every test prints a single PASS/FAIL line (collected again in the terminal
summary).  The synth48 ones integrate 16 s trajectories and are marked slow.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as sl

from gridreduce import fixture_path
from gridreduce import harness as H
from gridreduce import hybrid as hy
from gridreduce import netmodel as nm
from gridreduce.linearize import jacobians
from gridreduce.mor import frequency_response, gramians, select_order, solve_lyapunov
from gridreduce.simulate import POLICIES, SimConfig, run_simulation, step_rk4

from jacobian_oracles import central_difference_rel, complex_step_rel

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture(scope="module")
def tuned(prep48):
    """Threshold and switching angle picked by the two sweeps over the bundled fault list."""
    faults = H.load_faults(fixture_path("synth48_faults.json"))
    refs: dict = {}
    thr = H.threshold_sweep(prep48, faults, error_limit=6.0, references=refs)
    dm = H.delta_max_sweep(prep48, faults, thr.chosen, error_limit=6.0, references=refs)
    return thr, dm


def _tuned_overrides(tuned):
    thr, dm = tuned
    return {"threshold_pu": thr.chosen, "delta_max": math.radians(dm.chosen)}


# 1 --------------------------------------------------------------------------------------

@pytest.mark.slow
def test_01_no_fault_rest(prep48, verdict):
    worst_dev, worst_t = 0.0, 0.0
    for pol in POLICIES:
        t0 = time.perf_counter()
        tr = run_simulation(prep48, SimConfig(policy=pol, duration=16.0))
        worst_t = max(worst_t, time.perf_counter() - t0)
        worst_dev = max(worst_dev, float(np.abs(tr.states - prep48.x0).max()))
    verdict(1, "no-fault 16 s rest, all policies", worst_dev < 1e-6 and worst_t < 5.0,
            f"max |x-x0| = {worst_dev:.2e} (< 1e-6), slowest run {worst_t:.2f} s (< 5 s)")


# 2 --------------------------------------------------------------------------------------

@pytest.mark.slow
def test_02_jacobians_vs_differences(prep48, verdict):
    rng = np.random.default_rng(2)
    mono = prep48.mono_plant()
    plant_e, _ = prep48.area("external")
    vs, _ = prep48.boundary_phasors()
    u_e0 = np.concatenate([np.angle(vs), np.abs(vs)])
    fd = cs = 0.0
    for _ in range(10):
        x = prep48.x0 + 1e-2 * rng.standard_normal(prep48.x0.size)
        lin = jacobians(mono, x, ())
        fd = max(fd, central_difference_rel(mono, lin, x, np.zeros(0)))
        cs = max(cs, complex_step_rel(mono, lin, x, np.zeros(0)))
    for _ in range(10):
        x = prep48.x0_external + 1e-2 * rng.standard_normal(prep48.x0_external.size)
        u = u_e0 + 1e-2 * rng.standard_normal(u_e0.size)
        lin = jacobians(plant_e, x, u)
        fd = max(fd, central_difference_rel(plant_e, lin, x, u))
        cs = max(cs, complex_step_rel(plant_e, lin, x, u))
    verdict(2, "analytic A, B on 20 random states", fd < 1e-6 and cs < 1e-6,
            f"central-difference rel err {fd:.1e}, complex-step rel err {cs:.1e} (< 1e-6)")


# 3 --------------------------------------------------------------------------------------

def test_03_gramians_and_balancing(prep6, prep48, verdict):
    lin = prep48.external_linear()
    a, b = lin.a, lin.b
    q = b @ b.T
    w = solve_lyapunov(a, q)
    res_c = np.linalg.norm(a @ w + w @ a.T + q) / np.linalg.norm(q)
    wo = solve_lyapunov(a.T, np.eye(a.shape[0]))
    res_o = np.linalg.norm(a.T @ wo + wo @ a + np.eye(a.shape[0])) / math.sqrt(a.shape[0])
    lin6 = prep6.external_linear()
    red6 = prep6.external_reduction()
    wc6, wo6 = gramians(lin6.a, lin6.b)
    t, ti = red6.t, red6.t_inv
    sig = np.diag(red6.hankel[:red6.r])
    bal = max(np.abs(t @ wc6 @ t.T - sig).max(), np.abs(ti.T @ wo6 @ ti - sig).max())
    sv = prep48.external_reduction().hankel
    mono = bool(np.all(np.diff(sv) <= 0) and np.all(np.diff(red6.hankel) <= 0))
    ok = res_c < 1e-10 and res_o < 1e-10 and bal < 1e-8 and mono
    verdict(3, "Lyapunov residual, balanced Gramians, Hankel order", ok,
            f"residuals {res_c:.1e}/{res_o:.1e} x |Q|_F, small6 balance {bal:.1e}, "
            f"Hankel nonincreasing={mono}")


# 4 --------------------------------------------------------------------------------------

def test_04_error_bound(prep48, verdict):
    lin = prep48.external_linear()
    red = prep48.external_reduction()
    assert red.r == select_order(red.hankel, 1e-5)
    freqs = np.logspace(-2, 3, 200)
    g = frequency_response(lin.a, lin.b, lin.c, freqs)
    gr = frequency_response(red.a_r, red.b_r, red.c_r, freqs)
    err = max(np.linalg.norm(g[k] - gr[k], 2) for k in range(freqs.size))
    bound = 2.0 * red.hankel[red.r:].sum()
    verdict(4, "H-infinity error bound", err <= bound + 1e-9,
            f"r = {red.r} of {red.n}, max ||G-Gr||_2 = {err:.3e} <= 2*sum(tail) = {bound:.3e}")


# 5 --------------------------------------------------------------------------------------

def test_05_degenerate_equivalences(prep48, verdict):
    lin = prep48.external_linear()
    red = prep48.external_reduction()
    plant_e, _ = prep48.area("external")
    rng = np.random.default_rng(5)
    # kick the external machines' speeds and integrate with the boundary held
    dx = np.zeros(lin.n)
    dx[8::9] = 2e-3 * rng.standard_normal(lin.n // 9)
    xr0 = red.t @ dx
    u = lin.u0
    h, steps = 0.01, 1600

    m0 = hy.build_hybrid(lin, prep48.selection(0.0), red)
    a_x = b_x = xr0.copy()
    d0 = 0.0
    for _ in range(steps):
        a_x = step_rk4(lambda v: hy.rhs_hybrid(v, u, m0, plant_e), a_x, h)
        b_x = step_rk4(lambda v: hy.rhs_nonlinear_reduced(v, u, lin, red, plant_e), b_x, h)
        d0 = max(d0, float(np.abs(a_x - b_x).max()))

    minf = hy.build_hybrid(lin, prep48.selection(math.inf), red)
    a_x = b_x = xr0.copy()
    dinf = 0.0
    for _ in range(steps):
        a_x = step_rk4(lambda v: hy.rhs_hybrid(v, u, minf, plant_e), a_x, h)
        b_x = step_rk4(lambda v: hy.rhs_linear_reduced(v, u, lin, red), b_x, h)
        dinf = max(dinf, float(np.abs(red.t_inv @ (a_x - b_x)).max()))

    full = prep48.mono_plant()
    ulin = prep48.unpartitioned_linear()
    mq = hy.build_hybrid(ulin, prep48.selection(0.0, unpartitioned=True))
    dq = 0.0
    for _ in range(20):
        x = prep48.x0 + 0.05 * rng.standard_normal(prep48.x0.size)
        dq = max(dq, float(np.abs(hy.rhs_hybrid_unpartitioned(x, mq, full) - full.rhs(x)).max()))
    ok = d0 < 1e-10 and dinf < 1e-8 and dq < 1e-14
    verdict(5, "degenerate thresholds", ok,
            f"q=n reduced 16 s {d0:.1e} (< 1e-10), all-linear 16 s lifted {dinf:.1e} (< 1e-8), "
            f"unpartitioned q=n per call {dq:.1e} (< 1e-14)")


# 6 --------------------------------------------------------------------------------------

def test_06_threshold_units(verdict):
    s = hy.threshold_to_siemens(1.0, 100.0, 20.0)
    pu = hy.threshold_to_pu(0.25, 100.0, 20.0)
    ok = s == 0.25 and pu == 1.0 and hy.parse_threshold("0.25S", 100.0) == 1.0
    verdict(6, "1 pu <-> 0.25 S at 100 MVA / 20 kV", ok, f"1 pu -> {s!r} S, 0.25 S -> {pu!r} pu")


# 7 --------------------------------------------------------------------------------------

@pytest.mark.slow
def test_07_adaptive_accuracy(prep48, tuned, verdict):
    thr, dm = tuned
    rep = H.run_scenario(SCENARIOS / "synth48_bus1.json", net=prep48, repeats=1,
                         policies=["linear_only", "adaptive_partitioned", "adaptive_unpartitioned"],
                         overrides={"threshold_pu": thr.chosen}, gnuplot=False)
    lin = rep.policies["linear_only"].worst_delta_rmse_deg
    ap = rep.policies["adaptive_partitioned"].worst_delta_rmse_deg
    au = rep.policies["adaptive_unpartitioned"].worst_delta_rmse_deg
    ok = thr.met and dm.met and ap < lin and ap < 6.0 and au < lin and au < 6.0
    verdict(7, "largest near-CCT fault (bus 1)", ok,
            f"sweeps chose {thr.chosen} pu / {dm.chosen} deg; worst RMSE adaptive_partitioned "
            f"{ap:.2f} deg, adaptive_unpartitioned {au:.2f} deg, linear_only {lin:.2f} deg")


# 8 --------------------------------------------------------------------------------------

@pytest.mark.slow
def test_08_runtime_ordering(prep48, tuned, verdict):
    thr, _ = tuned
    rep = H.run_scenario(SCENARIOS / "synth48_bus1.json", net=prep48, repeats=5,
                         policies=["full_only", "adaptive_unpartitioned", "adaptive_partitioned"],
                         overrides={"threshold_pu": thr.chosen}, gnuplot=False)
    tu = rep.policies["adaptive_unpartitioned"].seconds
    tp = rep.policies["adaptive_partitioned"].seconds
    tf = rep.policies["full_only"].seconds
    verdict(8, "median-of-5 runtimes", tu < tp < tf,
            f"adaptive_unpartitioned {tu:.3f} s < adaptive_partitioned {tp:.3f} s "
            f"< full_only {tf:.3f} s")


# 9 --------------------------------------------------------------------------------------

@pytest.mark.slow
def test_09_mode_sequence(prep48, verdict):
    f = nm.FaultSpec(bus=1, t_on=0.1, t_clear=0.42)
    cfg = SimConfig(fault=f, policy="adaptive_partitioned", stop_on_instability=False)
    tr = run_simulation(prep48, cfg)
    k_on, k_clear = cfg.fault_steps()
    log = tr.mode_log
    fault_full = all(m == "FULL" for m in log[k_on:k_clear])
    full_elsewhere = any(m == "FULL" for m in log[:k_on] + log[k_clear:])
    first_post = log[k_clear]
    hybrid_run = first_post == "HYBRID"
    settled = log[-1] == "LINEAR"
    cont = max(e["continuity"] for e in tr.switch_events if "continuity" in e)
    ok = fault_full and not full_elsewhere and hybrid_run and settled and cont < 1e-12
    verdict(9, "FULL -> HYBRID -> LINEAR with continuous handoffs", ok,
            f"FULL exactly on steps [{k_on}, {k_clear}), first post-fault mode {first_post}, "
            f"final mode {log[-1]}, max continuity {cont:.1e} (< 1e-12)")


# 10 -------------------------------------------------------------------------------------

@pytest.mark.slow
def test_10_permanent_topology_changes(prep48, verdict):
    worst = {}
    failures = 0
    actions = {"temporary": "none", "bus trip": "trip_bus", "line trip": ("trip_line", 13)}
    for label, post in actions.items():
        f = nm.FaultSpec(bus=10, t_on=0.1, t_clear=0.6, post_action=post)
        ref = run_simulation(prep48, SimConfig(fault=f))
        for pol, dm in (("adaptive_partitioned", 180.0), ("adaptive_unpartitioned", 6.0)):
            tr = run_simulation(prep48, SimConfig(fault=f, policy=pol, threshold_pu=10.0,
                                                  delta_max=math.radians(dm),
                                                  stop_on_instability=False))
            failures += sum(e["event"] == "relinearization_failed" for e in tr.switch_events)
            worst[label, pol] = H.worst_generator(ref, tr, prep48.study)[1]
    ok = failures == 0
    parts = []
    for pol in ("adaptive_partitioned", "adaptive_unpartitioned"):
        base = worst["temporary", pol]
        ok = ok and all(worst[lab, pol] < 1.2 * base for lab in ("bus trip", "line trip"))
        parts.append(f"{pol} " + ", ".join(f"{lab} {worst[lab, pol]:.2f}" for lab in actions))
    verdict(10, "line and bus trips (bus 10)", ok,
            f"{failures} failed relinearizations; worst RMSE deg: " + "; ".join(parts))


# 11 -------------------------------------------------------------------------------------

def test_11_rk4_order(prep6, verdict):
    a = prep6.external_linear().a
    x0 = 1e-2 * np.random.default_rng(11).standard_normal(a.shape[0])
    horizon = 2.0
    exact = sl.expm(a * horizon) @ x0
    errs = []
    for h in (0.02, 0.01, 0.005):
        x = x0.copy()
        for _ in range(int(round(horizon / h))):
            x = step_rk4(lambda v: a @ v, x, h)
        errs.append(float(np.abs(x - exact).max()))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    verdict(11, "RK4 convergence order", min(orders) >= 3.8,
            f"errors {', '.join(f'{e:.2e}' for e in errs)}, observed orders "
            f"{orders[0]:.2f}, {orders[1]:.2f} (>= 3.8)")

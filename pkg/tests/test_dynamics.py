import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from gridreduce import kernels
from gridreduce import netmodel as nm
from gridreduce.dynamics import (NSTATE, OMEGA_BASE, BoundaryInput, MachineState, Plant,
                                 SystemState, emf_phasors, init_equilibrium, machine_currents,
                                 rhs_full)

from conftest import two_bus_doc


def _plant6(net, area=None):
    y = nm.reduced_full(net) if area is None else nm.reduced_area(net, area)
    s, u = init_equilibrium(net, y)
    plant = Plant(y, [net.generator(g).params for g in y.gen_order], u.p_ref, u.v_ref)
    return plant, s, u


def _random_state(rng, x0, scale=0.05):
    x = x0 + scale * rng.standard_normal(x0.size)
    x[8::NSTATE] = 1.0 + 0.01 * rng.standard_normal(x0.size // NSTATE)
    return x


# -- currents ------------------------------------------------------------------------

def test_single_machine_closed_form():
    xdp = 0.3
    y = nm.ReducedYMatrix(y11=np.array([[-1j / xdp]]), y12=np.zeros((1, 0)),
                          y21=np.zeros((0, 1)), y22=np.zeros((0, 0)), gen_order=(1,))
    st_ = SystemState.from_machines([MachineState(delta=0.4, pm=0, pgv=0, vr=0, rf=0, efd=0,
                                                  ed_p=0.0, eq_p=1.0, omega=1.0)])
    i_d, i_q = machine_currents(st_, y, BoundaryInput(np.zeros(0), np.zeros(0),
                                                      np.zeros(1), np.ones(1)))
    b11 = -1 / xdp
    assert i_d[0] == pytest.approx(-b11 * 1.0, abs=1e-15)
    assert i_q[0] == pytest.approx(0.0, abs=1e-15)


def test_identical_machines_share_currents():
    y11 = np.array([[1 - 5j, -0.5 + 2j], [-0.5 + 2j, 1 - 5j]])
    y = nm.ReducedYMatrix(y11, np.zeros((2, 0)), np.zeros((0, 2)), np.zeros((0, 0)), (1, 2))
    m = MachineState(delta=0.2, pm=0, pgv=0, vr=0, rf=0, efd=0, ed_p=0.1, eq_p=1.05, omega=1)
    i_d, i_q = machine_currents(SystemState.from_machines([m, m]), y,
                                BoundaryInput(np.zeros(0), np.zeros(0), np.zeros(2), np.ones(2)))
    assert i_d[0] == i_d[1] and i_q[0] == i_q[1]


def _naive_currents(x, y11, y12, theta, vb):
    ng = y11.shape[0]
    i_d, i_q = np.zeros(ng), np.zeros(ng)
    for i in range(ng):
        di = x[NSTATE * i]
        for j in range(ng):
            dj, edj, eqj = x[NSTATE * j], x[NSTATE * j + 6], x[NSTATE * j + 7]
            g, b = y11[i, j].real, y11[i, j].imag
            c, s = math.cos(di - dj), math.sin(di - dj)
            i_d[i] += edj * (g * c + b * s) + eqj * (g * s - b * c)
            i_q[i] += eqj * (g * c + b * s) - edj * (g * s - b * c)
        for k in range(len(theta)):
            g, b = y12[i, k].real, y12[i, k].imag
            c, s = math.cos(di - theta[k]), math.sin(di - theta[k])
            i_d[i] += vb[k] * (g * s - b * c)
            i_q[i] += vb[k] * (g * c + b * s)
    return i_d, i_q


@pytest.mark.parametrize("area", [None, "external"])
def test_currents_match_naive_loops(small6, rng, area):
    plant, s, u = _plant6(small6, area)
    x = _random_state(rng, s.vector, 0.3)
    uu = u.vector + 0.05 * rng.standard_normal(u.vector.size)
    th, vb = uu[:plant.nb], uu[plant.nb:]
    i_d, i_q = plant.currents(x, uu)
    ref_d, ref_q = _naive_currents(x, plant.y.y11, plant.y.y12, th, vb)
    np.testing.assert_allclose(i_d, ref_d, rtol=0, atol=1e-14 * max(1, np.abs(ref_d).max()))
    np.testing.assert_allclose(i_q, ref_q, rtol=0, atol=1e-14 * max(1, np.abs(ref_q).max()))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.1, 5.0))
def test_currents_bilinear_in_sources(small6, seed, scale):
    plant, s, u = _plant6(small6, "external")
    rng = np.random.default_rng(seed)
    x = _random_state(rng, s.vector, 0.5)
    uu = u.vector.copy()
    i_d, i_q = plant.currents(x, uu)
    x2 = x.copy()
    x2[6::NSTATE] *= scale
    x2[7::NSTATE] *= scale
    uu2 = uu.copy()
    uu2[plant.nb:] *= scale
    j_d, j_q = plant.currents(x2, uu2)
    np.testing.assert_allclose(j_d, scale * i_d, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(j_q, scale * i_q, rtol=1e-12, atol=1e-13)


# -- vector field -------------------------------------------------------------------

def _naive_rhs(x, plant, u):
    """Term-by-term evaluation of the nine machine equations."""
    th, vb = u[:plant.nb], u[plant.nb:]
    i_d, i_q = _naive_currents(x, plant.y.y11, plant.y.y12, th, vb)
    out = np.zeros_like(x)
    for i, p in enumerate(plant.params):
        d, pm, pgv, vr, rf, efd, ed, eq, w = x[NSTATE * i:NSTATE * (i + 1)]
        vd = ed - p.ra * i_d[i] + p.xd_p * i_q[i]
        vq = eq - p.ra * i_q[i] - p.xd_p * i_d[i]
        vt = math.hypot(vd, vq)
        out[NSTATE * i:NSTATE * (i + 1)] = [
            2 * math.pi * 60 * (w - 1),
            (pgv - pm) / p.tch,
            (plant.p_ref[i] - pgv - (w - 1) / p.r_gov) / p.tgv,
            (-vr + p.ka * rf - p.ka * p.kf / p.tf * efd + p.ka * (plant.v_ref[i] - vt)) / p.ta,
            (-rf + p.kf / p.tf * efd) / p.tf,
            (-(p.ke + p.ae * math.exp(p.be * efd)) * efd + vr) / p.te,
            (-ed + (p.xq - p.xq_p) * i_q[i]) / p.tqo_p,
            (-eq - (p.xd - p.xd_p) * i_d[i] + efd) / p.tdo_p,
            (pm - ed * i_d[i] - eq * i_q[i] - p.d * (w - 1)) / (2 * p.h),
        ]
    return out


@pytest.mark.parametrize("backend", kernels.available())
@pytest.mark.parametrize("area", [None, "study", "external"])
def test_rhs_matches_independent_implementation(small6, rng, backend, area):
    plant, s, u = _plant6(small6, area)
    plant = Plant(plant.y, plant.params, plant.p_ref, plant.v_ref, backend=backend)
    for _ in range(5):
        x = _random_state(rng, s.vector, 0.2)
        uu = u.vector + 0.02 * rng.standard_normal(u.vector.size)
        ref = _naive_rhs(x, plant, uu)
        got = plant.rhs(x, uu)
        np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_rhs_full_functional_form(small6):
    y = nm.reduced_full(small6)
    s, u = init_equilibrium(small6, y)
    f = rhs_full(s, y, u, [small6.generator(g).params for g in y.gen_order])
    assert np.abs(f).max() < 1e-8


@pytest.mark.parametrize("name", ["small6", "synth48"])
def test_equilibrium_is_stationary(request, name):
    net = request.getfixturevalue(name)
    for area in (None, "study", "external"):
        plant, s, u = _plant6(net, area)
        assert np.abs(plant.rhs(s.vector, u.vector)).max() < 1e-8


def test_speed_perturbation_drives_angle(small6):
    plant, s, u = _plant6(small6)
    x = s.vector.copy()
    x[8] += 0.01
    assert plant.rhs(x, u.vector)[0] == pytest.approx(OMEGA_BASE * 0.01, rel=1e-14)
    assert OMEGA_BASE * 0.01 == pytest.approx(3.7699, abs=1e-4)


def test_zero_dispatch_machine_on_unloaded_network():
    net = nm.network_from_dict(two_bus_doc())
    y = nm.reduced_full(net)
    s, _ = init_equilibrium(net, y)
    m = s.machines[0]
    assert m.delta == pytest.approx(net.bus(1).voltage_angle, abs=1e-14)
    assert m.ed_p == pytest.approx(0.0, abs=1e-14)


def test_inconsistent_dispatch_rejected():
    doc = two_bus_doc(dispatch_p=1.0)  # nothing consumes the power
    net = nm.network_from_dict(doc)
    with pytest.raises(nm.NetworkError, match="generator 1"):
        init_equilibrium(net, nm.reduced_full(net))


def test_equilibrium_matches_root_finder(small6):
    plant, s, u = _plant6(small6)
    x0 = s.vector
    free = np.arange(1, x0.size)   # the first angle fixes the rotation

    def resid(z):
        x = x0.copy()
        x[free] = z
        return plant.rhs(x, u.vector)

    rng = np.random.default_rng(3)
    start = x0[free] + 1e-3 * rng.standard_normal(free.size)
    sol = least_squares(resid, start, xtol=1e-15, ftol=1e-15, gtol=1e-15, method="lm")
    np.testing.assert_allclose(sol.x, x0[free], atol=1e-8)


def test_boundary_inputs_reproduce_power_flow(small6):
    """The area plants see the solved boundary voltages and stay at rest."""
    for area in ("study", "external"):
        y = nm.reduced_area(small6, area)
        _, u = init_equilibrium(small6, y)
        for k, b in enumerate(y.boundary_order):
            assert u.theta[k] == small6.bus(b).voltage_angle
            assert u.v[k] == small6.bus(b).voltage_magnitude


def test_emf_phasor_rotation():
    x = np.zeros(NSTATE)
    x[0], x[6], x[7] = 0.3, 0.2, 1.1
    e = emf_phasors(x)[0]
    assert e == pytest.approx((0.2 + 1.1j) * np.exp(1j * (0.3 - np.pi / 2)))


def test_four_rows_per_machine_are_nonlinear(small6, rng):
    """Jacobian rows of delta, Pm, Pgv and Rf do not change with the state."""
    from gridreduce.linearize import jacobians
    plant, s, u = _plant6(small6)
    a1 = jacobians(plant, _random_state(rng, s.vector, 0.3), u.vector).a
    a2 = jacobians(plant, _random_state(rng, s.vector, 0.3), u.vector).a
    changed = np.flatnonzero(np.abs(a1 - a2).max(axis=1) > 1e-12)
    fields = sorted({int(r % NSTATE) for r in changed})
    # VR is state dependent through Vt but counted linear by convention
    assert fields == [3, 5, 6, 7, 8]


def test_dimension_checks(small6):
    plant, s, u = _plant6(small6)
    with pytest.raises(ValueError):
        plant.rhs(s.vector[:-1], u.vector)
    with pytest.raises(ValueError):
        plant.rhs(s.vector, np.zeros(3))


def test_backends_agree(small6, rng):
    if len(kernels.available()) < 2:
        pytest.skip("compiled kernels not built")
    plant, s, u = _plant6(small6, "external")
    x = _random_state(rng, s.vector, 0.2)
    rows = np.array([0, 2], dtype=np.intp)
    outs = []
    for name in ("python", "compiled"):
        p = Plant(plant.y, plant.params, plant.p_ref, plant.v_ref, backend=name)
        outs.append((p.rhs(x, u.vector), p.rhs_rows(x, u.vector, rows), p.rk4(x, u.vector, 0.01)))
    for a, b in zip(*outs):
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)

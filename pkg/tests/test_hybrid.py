import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridreduce import hybrid as hy
from gridreduce.dynamics import NSTATE
from gridreduce.linearize import jacobians


# -- column norms and thresholds --------------------------------------------------

def test_column_norm_single_bus():
    assert hy.column_norms(np.array([[0.6j, 0.0]]))[0] == pytest.approx(0.6)
    assert hy.column_norms(np.array([[0.6j, 0.0]]))[1] == 0.0


def test_column_norm_loop_oracle(rng):
    y = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
    got = hy.column_norms(y)
    for i in range(5):
        ref = sum(abs(y[j, i]) ** 2 for j in range(2)) ** 0.5
        assert abs(got[i] - ref) < 1e-15


def test_threshold_conversion_exact():
    assert hy.threshold_to_pu(0.25, 100.0, 20.0) == 1.0
    assert hy.threshold_to_siemens(1.0, 100.0, 20.0) == 0.25
    assert hy.threshold_to_pu(0.25, 200.0) == 0.5
    assert hy.threshold_to_pu(0.0, 100.0) == 0.0
    with pytest.raises(ValueError):
        hy.threshold_to_pu(1.0, 0.0)
    with pytest.raises(ValueError):
        hy.threshold_to_siemens(1.0, 100.0, -1.0)


@pytest.mark.parametrize("text, pu", [("1pu", 1.0), ("0.25S", 1.0), ("1.5 p.u.", 1.5),
                                      ("inf pu", float("inf")), ("2.5e-1S", 1.0)])
def test_parse_threshold(text, pu):
    assert hy.parse_threshold(text, 100.0) == pu


@pytest.mark.parametrize("text", ["1.0", "abc", "-1pu", "1 ohm"])
def test_parse_threshold_rejects(text):
    with pytest.raises(ValueError):
        hy.parse_threshold(text, 100.0)


# -- selection ------------------------------------------------------------------------

def test_all_kept_when_threshold_zero():
    sel = hy.select_functions([0.1, 2.0, 0.5], 0.0, (1, 2, 3))
    assert not sel.linear_gens and sel.q == 12
    assert sel.affine_rows.size == 0 and sel.p_hat.shape == (0, 27)


def test_all_linear_above_max():
    sel = hy.select_functions([0.1, 2.0, 0.5], 5.0, (1, 2, 3))
    assert not sel.nonlinear_gens and sel.q == 0
    np.testing.assert_array_equal(sel.p_hat, np.eye(27))


def test_between_second_and_third_norm(prep6):
    norms = prep6.external_norms
    s = np.sort(norms)[::-1]
    sel = prep6.selection(0.5 * (s[1] + s[2]))
    assert len(sel.nonlinear_gens) == 2
    top2 = {prep6.external[k] for k in np.argsort(norms)[::-1][:2]}
    assert sel.nonlinear_gens == top2


def test_forced_machines_stay_exact():
    sel = hy.select_functions([0.1, 0.2, 3.0], 1.0, (1, 2, 3), always_nonlinear=(1,))
    assert sel.nonlinear_gens == {1, 3}


def test_p_hat_deletes_exact_rows():
    sel = hy.select_functions([0.1, 2.0], 1.0, (7, 8))
    np.testing.assert_array_equal(sel.p_hat, np.eye(18)[:9])
    np.testing.assert_array_equal(sel.exact_rows, np.arange(9, 18))


@settings(max_examples=50, deadline=None)
@given(norms=st.lists(st.floats(0, 10), min_size=1, max_size=12),
       t1=st.floats(0, 12), t2=st.floats(0, 12))
def test_selection_monotone_in_threshold(norms, t1, t2):
    lo, hi = sorted((t1, t2))
    gens = tuple(range(len(norms)))
    a = hy.select_functions(norms, lo, gens)
    b = hy.select_functions(norms, hi, gens)
    assert b.nonlinear_gens <= a.nonlinear_gens
    assert a.nonlinear_gens | a.linear_gens == set(gens)
    assert not a.nonlinear_gens & a.linear_gens


def test_reference_generator_smallest_norm_lowest_id():
    assert hy.reference_generator([0.3, 0.1, 0.1], (5, 9, 7)) == 7


def test_selection_dump(tmp_path, prep6):
    sel = prep6.selection(1.0)
    p = tmp_path / "sel.json"
    sel.dump(p)
    doc = json.loads(p.read_text())
    assert doc["q"] == sel.q
    assert doc["linearized_functions"] + doc["q"] == 4 * len(prep6.external)


# -- right-hand sides ----------------------------------------------------------------

def _ext(prep):
    plant, _ = prep.area("external")
    return plant, prep.external_linear(), prep.external_reduction()


def _splice_oracle(plant, lin, red, sel, xr, u):
    x = lin.x0 + red.t_inv @ xr
    f = plant.rhs(x, u)
    rows = sel.affine_rows
    f[rows] = lin.a[rows] @ (x - lin.x0) + lin.b[rows] @ (u - lin.u0) + lin.f0[rows]
    return red.t @ f


@pytest.mark.parametrize("thr", [0.0, 1.0, 3.0, np.inf])
def test_partitioned_row_splice_oracle(prep6, rng, thr):
    plant, lin, red = _ext(prep6)
    sel = prep6.selection(thr)
    model = hy.build_hybrid(lin, sel, red)
    for _ in range(3):
        xr = 0.05 * rng.standard_normal(red.r)
        u = lin.u0 + 0.01 * rng.standard_normal(lin.m)
        got = hy.rhs_hybrid(xr, u, model, plant)
        ref = _splice_oracle(plant, lin, red, sel, xr, u)
        np.testing.assert_allclose(got, ref, atol=1e-12 * max(1, np.abs(ref).max()))


def test_q_equals_n_collapses_to_nonlinear_reduced(prep6, rng):
    plant, lin, red = _ext(prep6)
    model = hy.build_hybrid(lin, prep6.selection(0.0), red)
    xr = 0.05 * rng.standard_normal(red.r)
    u = lin.u0 + 0.01 * rng.standard_normal(lin.m)
    a = hy.rhs_hybrid(xr, u, model, plant)
    b = hy.rhs_nonlinear_reduced(xr, u, lin, red, plant)
    assert np.abs(a - b).max() < 1e-14 * max(1, np.abs(b).max())


def test_all_linear_at_expansion_point_is_still(prep6):
    plant, lin, red = _ext(prep6)
    model = hy.build_hybrid(lin, prep6.selection(np.inf), red)
    d = hy.rhs_hybrid(np.zeros(red.r), lin.u0, model, plant)
    assert np.abs(d).max() < 1e-10
    lr = hy.rhs_linear_reduced(np.zeros(red.r), lin.u0, lin, red)
    np.testing.assert_allclose(d, lr, atol=1e-14)


def test_structural_rows_identical_at_expansion_point(prep6):
    plant, lin, _ = _ext(prep6)
    sel = prep6.selection(np.inf)
    model = hy.build_hybrid(lin, sel)
    f = plant.rhs(lin.x0, lin.u0)
    affine = model.a_hat @ np.zeros(lin.n) + model.x_hat0
    for k in (0, 1, 2, 4):
        np.testing.assert_array_equal(affine[k::NSTATE], f[sel.affine_rows][k::NSTATE])


def test_unpartitioned_q_equals_n_is_exact(prep6, rng):
    plant = prep6.mono_plant()
    lin = prep6.unpartitioned_linear()
    model = hy.build_hybrid(lin, prep6.selection(0.0, unpartitioned=True))
    for _ in range(5):
        x = prep6.x0 + 0.05 * rng.standard_normal(lin.n)
        d = hy.rhs_hybrid_unpartitioned(x, model, plant)
        ref = plant.rhs(x)
        assert np.abs(d - ref).max() < 1e-14 * max(1, np.abs(ref).max())


def test_unpartitioned_splice_oracle(prep6, rng):
    plant = prep6.mono_plant()
    lin = prep6.unpartitioned_linear()
    sel = prep6.selection(np.inf, unpartitioned=True)
    assert set(prep6.study) <= sel.nonlinear_gens
    model = hy.build_hybrid(lin, sel)
    x = prep6.x0 + 0.05 * rng.standard_normal(lin.n)
    ref = plant.rhs(x)
    rows = sel.affine_rows
    ref[rows] = lin.a[rows] @ (x - lin.x0) + lin.f0[rows]
    got = hy.rhs_hybrid_unpartitioned(x, model, plant)
    np.testing.assert_allclose(got, ref, atol=1e-12 * np.abs(ref).max())


def test_variant_and_dimension_errors(prep6):
    plant, lin, red = _ext(prep6)
    part = hy.build_hybrid(lin, prep6.selection(1.0), red)
    unpart = hy.build_hybrid(lin, prep6.selection(1.0))
    with pytest.raises(ValueError):
        hy.rhs_hybrid(np.zeros(red.r), lin.u0, unpart, plant)
    with pytest.raises(ValueError):
        hy.rhs_hybrid_unpartitioned(lin.x0, part, plant)
    with pytest.raises(ValueError):
        hy.rhs_hybrid(np.zeros(red.r + 1), lin.u0, part, plant)
    with pytest.raises(ValueError):
        hy.build_hybrid(prep6.unpartitioned_linear(), prep6.selection(1.0))


def test_hybrid_blocks_definition(prep6):
    plant, lin, red = _ext(prep6)
    sel = prep6.selection(1.0)
    m = hy.build_hybrid(lin, sel, red)
    np.testing.assert_allclose(m.a_hat, sel.p_hat @ lin.a @ red.t_inv, atol=1e-13)
    np.testing.assert_array_equal(m.b_hat, sel.p_hat @ lin.b)
    np.testing.assert_array_equal(m.x_hat0, sel.p_hat @ lin.f0)
    assert m.partitioned


def test_linear_affine_rows_match_jacobian_elsewhere(prep6, rng):
    """Affine rows built at a non-equilibrium point are its first-order expansion."""
    plant, _, _ = _ext(prep6)
    x0 = prep6.x0_external + 0.02 * rng.standard_normal(prep6.x0_external.size)
    u0 = prep6.external_linear().u0
    lin = jacobians(plant, x0, u0)
    sel = prep6.selection(np.inf)
    model = hy.build_hybrid(lin, sel)
    dx = 1e-7 * rng.standard_normal(lin.n)
    d = model.a_hat @ dx + model.x_hat0
    f = plant.rhs(x0 + dx, u0)
    np.testing.assert_allclose(d, f[sel.affine_rows], atol=1e-9 * max(1, np.abs(f).max()))

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridreduce import netmodel as nm

from conftest import two_bus_doc


# -- loading ------------------------------------------------------------------------

def test_minimal_two_bus_network(two_bus):
    assert len(two_bus.generators) == 1
    assert two_bus.partition is None


def test_missing_bus_reference_rejected():
    doc = two_bus_doc()
    doc["branches"][0]["to_bus"] = 99
    with pytest.raises(nm.NetworkError, match="missing bus 99"):
        nm.network_from_dict(doc)


def test_missing_field_named():
    doc = two_bus_doc()
    del doc["generators"][0]["params"]["xd"]
    with pytest.raises(nm.NetworkError, match="'xd'"):
        nm.network_from_dict(doc)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n "base_mva": 100,\n "buses": [,]\n}')
    with pytest.raises(nm.NetworkError, match="line 3"):
        nm.load_network(p)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.update(base_mva=0), "base_mva"),
    (lambda d: d["branches"][0].update(reactance=0.0, resistance=0.1), "reactance"),
    (lambda d: d["buses"][0].update(voltage_magnitude=0.0), "voltage magnitude"),
    (lambda d: d["generators"][0]["params"].update(xd_p=2.0), "xd >= xd_p"),
])
def test_invariant_violations(mutate, message):
    doc = two_bus_doc()
    mutate(doc)
    with pytest.raises(nm.NetworkError, match=message):
        nm.network_from_dict(doc)


def test_fixture_shape_and_round_trip(small6, tmp_path):
    part = small6.partition
    assert len(small6.generators) == 6
    assert len(part.study_generators) == 2 and len(part.external_generators) == 4
    assert len(part.tie_lines) >= 2
    path = tmp_path / "copy.json"
    nm.save_network(small6, path)
    again = nm.load_network(path)
    assert again == small6
    assert json.loads(path.read_text()) == nm.network_to_dict(small6)


def test_partition_tie_lines_cross_areas(synth48):
    part = synth48.partition
    for t in part.tie_lines:
        br = synth48.branch(t)
        assert part.area_of_bus(br.from_bus) != part.area_of_bus(br.to_bus)
    assert part.study_buses.isdisjoint(part.external_buses)


# -- admittance ---------------------------------------------------------------------

def test_two_bus_admittance_entries(two_bus):
    y = nm.build_admittance(two_bus, include_machines=False)
    np.testing.assert_allclose(y.matrix, [[-2j, 2j], [2j, -2j]], atol=1e-15)
    ym = nm.build_admittance(two_bus)
    xm = 1 / 0.3j
    assert ym.matrix[0, 0] == pytest.approx(-2j + xm)
    assert ym.matrix[0, 1] == pytest.approx(2j)


def test_fault_adds_shunt_and_is_idempotent(small6):
    f = nm.FaultSpec(bus=2, t_on=0.1, t_clear=0.2)
    y0 = nm.build_admittance(small6)
    yf = nm.build_admittance(small6, f)
    k = y0.index([(nm.BUS, 2)])[0]
    diff = yf.matrix - y0.matrix
    assert diff[k, k] == nm.FAULT_SHUNT
    diff[k, k] = 0
    assert not diff.any()
    assert np.array_equal(nm.build_admittance(small6).matrix, y0.matrix)


def _triplet_assembly(net):
    """Independent sparse-triplet assembly: every element contributes four entries."""
    from scipy.sparse import coo_matrix
    ids = [b.id for b in net.buses] + [("g", g.id) for g in net.generators]
    pos = {v: k for k, v in enumerate(ids)}
    r, c, v = [], [], []

    def branch(i, j, ys, ysh=0.0):
        r.extend([i, j, i, j]); c.extend([i, j, j, i]); v.extend([ys + ysh, ys + ysh, -ys, -ys])

    for b in net.buses:
        r.append(pos[b.id]); c.append(pos[b.id])
        v.append((b.load_p - 1j * b.load_q) / b.voltage_magnitude ** 2)
    for br in net.branches:
        if br.in_service:
            branch(pos[br.from_bus], pos[br.to_bus], 1 / (br.resistance + 1j * br.reactance),
                   0.5j * br.shunt_susceptance)
    for g in net.generators:
        branch(pos[g.bus_id], pos[("g", g.id)], 1 / (g.params.ra + 1j * g.params.xd_p))
    n = len(ids)
    return coo_matrix((v, (r, c)), shape=(n, n)).toarray()


def test_admittance_matches_triplet_oracle(small6):
    y = nm.build_admittance(small6)
    np.testing.assert_allclose(y.matrix, _triplet_assembly(small6), atol=1e-12)
    assert np.abs(y.matrix - y.matrix.T).max() < 1e-12


# -- Kron reduction ---------------------------------------------------------------

def test_kron_keep_all_is_identity(rng):
    y = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
    np.testing.assert_array_equal(nm.kron_reduce(y, range(5)), y)


def test_kron_series_chain():
    y = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=complex)
    red = nm.kron_reduce(y, [0, 2])
    np.testing.assert_allclose(red, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)


def _random_network_matrix(rng, n):
    a = rng.uniform(0.2, 2.0, (n, n)) * (rng.random((n, n)) < 0.6)
    a = np.triu(a, 1)
    a = a + a.T
    y = -1j * a
    y[np.diag_indices(n)] = 1j * a.sum(axis=1) + (0.05 - 0.1j) * rng.random(n) + 0.01
    return y


def test_kron_matches_column_solves(rng):
    y = _random_network_matrix(rng, 8)
    keep = [0, 2, 4, 5, 7]
    elim = [1, 3, 6]
    red = nm.kron_reduce(y, keep)
    oracle = np.empty((5, 5), dtype=complex)
    for j, kj in enumerate(keep):
        # inject unit voltage at kept node kj, zero at other kept nodes, no current at eliminated ones
        v = np.zeros(8, dtype=complex)
        v[kj] = 1.0
        v[elim] = np.linalg.solve(y[np.ix_(elim, elim)], -y[np.ix_(elim, [kj])][:, 0])
        oracle[:, j] = (y @ v)[keep]
    np.testing.assert_allclose(red, oracle, atol=1e-12)


def test_kron_preserves_driving_point_impedance(rng):
    y = _random_network_matrix(rng, 8)
    keep = [0, 3, 6]
    z_full = np.linalg.inv(y)[np.ix_(keep, keep)]
    z_red = np.linalg.inv(nm.kron_reduce(y, keep))
    np.testing.assert_allclose(z_red, z_full, atol=1e-10)


def test_kron_floating_island_named():
    y = np.zeros((4, 4), dtype=complex)
    y[0, 0] = y[1, 1] = 1
    y[0, 1] = y[1, 0] = -1
    y[2, 2] = y[3, 3] = 1j
    y[2, 3] = y[3, 2] = -1j
    with pytest.raises(nm.SingularNetworkError, match="island"):
        nm.kron_reduce(y, [0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(3, 9), data=st.data())
def test_kron_symmetry_and_two_stage_property(seed, n, data):
    rng = np.random.default_rng(seed)
    y = _random_network_matrix(rng, n)
    keep = sorted(data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n - 1)))
    red = nm.kron_reduce(y, keep)
    assert np.abs(red - red.T).max() < 1e-12 * max(1.0, np.abs(red).max())
    # eliminating in two stages equals eliminating at once
    mid = sorted(set(keep) | {i for i in range(n) if i not in keep and i % 2})
    stage = nm.kron_reduce(y, mid)
    again = nm.kron_reduce(stage, [mid.index(k) for k in keep])
    np.testing.assert_allclose(again, red, atol=1e-9 * max(1.0, np.abs(red).max()))


# -- partitioned blocks ------------------------------------------------------------

def test_partition_single_generator_single_boundary():
    m = np.array([[2 - 3j, -1 + 1j], [-1 + 1j, 1 - 2j]])
    y = nm.NodalAdmittance(m, ((nm.GEN, 7), (nm.FICT, 1)))
    r = nm.partition_admittance(y, [7], [1], [42])
    assert r.y11.shape == r.y12.shape == r.y21.shape == r.y22.shape == (1, 1)
    assert r.boundary_order == (42,)


def test_partition_index_mismatch():
    y = nm.NodalAdmittance(np.eye(3, dtype=complex), ((nm.GEN, 1), (nm.GEN, 2), (nm.FICT, 1)))
    with pytest.raises(nm.NetworkError, match="index set mismatch"):
        nm.partition_admittance(y, [1], [1], [5])


@pytest.mark.parametrize("area", ["study", "external"])
def test_area_blocks_reassemble(small6, area):
    part = small6.partition
    gens = sorted(part.study_generators if area == "study" else part.external_generators)
    full = nm.area_admittance(small6, area)
    keep = [(nm.GEN, g) for g in gens] + [(nm.FICT, t) for t in part.tie_lines]
    red = full.reduce(keep)
    blocks = nm.reduced_area(small6, area)
    np.testing.assert_allclose(blocks.assembled(), red.matrix, atol=1e-12)
    assert np.abs(blocks.y21 - blocks.y12.T).max() < 1e-14
    assert blocks.y21.shape == (len(part.tie_lines), len(gens))
    a = blocks.assembled()
    assert np.abs(a - a.T).max() < 1e-12


def test_area_fault_must_be_inside(small6):
    ext_bus = min(small6.partition.external_buses)
    with pytest.raises(nm.NetworkError, match="not in the study area"):
        nm.area_admittance(small6, "study", nm.FaultSpec(bus=ext_bus, t_on=0, t_clear=0.1))


def test_trip_bus_lists_incident_branches(small6):
    f = nm.FaultSpec(bus=2, t_on=0.1, t_clear=0.2, post_action="trip_bus")
    tripped = f.tripped_branches(small6)
    assert tripped and all(2 in (small6.branch(b).from_bus, small6.branch(b).to_bus)
                           for b in tripped)
    with pytest.raises(nm.NetworkError):
        nm.FaultSpec(bus=2, t_on=0, t_clear=1, post_action="explode").tripped_branches(small6)

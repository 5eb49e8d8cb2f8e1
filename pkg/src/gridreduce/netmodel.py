"""Grid data, nodal admittance assembly and network reduction.

The network description is a *solved* power flow: bus voltages and generator
dispatches are inputs.  Loads become constant shunt admittances at the solved
voltage, every generator gets an internal node behind ``ra + j*xd_p``, and the
passive buses are Kron-eliminated to leave the admittance seen between
internal sources.

For a partitioned system each area is built separately.  Every tie-line is
replaced, inside an area, by a *fictitious generator*: a node behind the
tie-line impedance whose voltage is the opposite-area boundary bus phasor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

FAULT_SHUNT = 1e6 - 1e6j

BUS = "bus"
GEN = "gen"
FICT = "fict"


class NetworkError(ValueError):
    """Invalid or inconsistent network data."""


class SingularNetworkError(NetworkError):
    """A network block that must be inverted is singular (e.g. an island)."""


@dataclass(frozen=True)
class GeneratorParams:
    """Machine, turbine/governor and IEEE type 1 exciter constants (p.u., s)."""

    h: float
    d: float
    xd: float
    xq: float
    xd_p: float
    xq_p: float
    ra: float
    tdo_p: float
    tqo_p: float
    tch: float
    tgv: float
    r_gov: float
    ka: float
    ta: float
    kf: float
    tf: float
    ke: float
    te: float
    ae: float
    be: float

    def validate(self, gen_id: int) -> None:
        for name in ("tdo_p", "tqo_p", "tch", "tgv", "ta", "tf", "te"):
            if not getattr(self, name) > 0:
                raise NetworkError(f"generator {gen_id}: time constant {name} must be > 0")
        if not self.h > 0:
            raise NetworkError(f"generator {gen_id}: inertia h must be > 0")
        if not self.xd >= self.xd_p > 0:
            raise NetworkError(f"generator {gen_id}: requires xd >= xd_p > 0")
        if not self.xq >= self.xq_p > 0:
            raise NetworkError(f"generator {gen_id}: requires xq >= xq_p > 0")
        if self.r_gov == 0:
            raise NetworkError(f"generator {gen_id}: speed regulation r_gov must be nonzero")


PARAM_NAMES = tuple(f.name for f in fields(GeneratorParams))


@dataclass(frozen=True)
class Bus:
    id: int
    voltage_magnitude: float
    voltage_angle: float
    load_p: float = 0.0
    load_q: float = 0.0

    @property
    def phasor(self) -> complex:
        return self.voltage_magnitude * np.exp(1j * self.voltage_angle)


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    resistance: float
    reactance: float
    shunt_susceptance: float = 0.0
    in_service: bool = True

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.resistance, self.reactance)


@dataclass(frozen=True)
class Generator:
    id: int
    bus_id: int
    params: GeneratorParams
    dispatch_p: float
    dispatch_q: float


@dataclass(frozen=True)
class PartitionSpec:
    study_generators: frozenset[int]
    external_generators: frozenset[int]
    study_buses: frozenset[int]
    external_buses: frozenset[int]
    tie_lines: tuple[int, ...]
    # bus ids at the tie-line ends, keyed by area name ("study"/"external")
    boundary_buses: dict[str, tuple[int, ...]] = field(hash=False)

    def area_of_bus(self, bus_id: int) -> str:
        return "study" if bus_id in self.study_buses else "external"


@dataclass(frozen=True)
class FaultSpec:
    """Three-phase bus fault with optional post-clearing topology change.

    ``post_action`` is ``"none"``, ``"trip_bus"`` or ``("trip_line", branch_id)``.
    """

    bus: int
    t_on: float
    t_clear: float
    post_action: str | tuple[str, int] = "none"
    shunt: complex = FAULT_SHUNT

    def tripped_branches(self, net: "BusNetwork") -> tuple[int, ...]:
        action = self.post_action
        if action in (None, "none"):
            return ()
        if action == "trip_bus":
            return tuple(b.id for b in net.branches
                         if b.in_service and self.bus in (b.from_bus, b.to_bus))
        if isinstance(action, (tuple, list)) and action[0] == "trip_line":
            return (int(action[1]),)
        raise NetworkError(f"unknown post-fault action {action!r}")


@dataclass(frozen=True)
class BusNetwork:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    partition: PartitionSpec | None = None

    def __post_init__(self):
        self.validate()

    # -- lookups -----------------------------------------------------------
    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses)

    def bus(self, bus_id: int) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def branch(self, branch_id: int) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def generator(self, gen_id: int) -> Generator:
        for g in self.generators:
            if g.id == gen_id:
                return g
        raise KeyError(gen_id)

    def validate(self) -> None:
        if not self.base_mva > 0:
            raise NetworkError("base_mva must be > 0")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus id")
        known = set(ids)
        for b in self.buses:
            if not b.voltage_magnitude > 0:
                raise NetworkError(f"bus {b.id}: voltage magnitude must be > 0")
        br_ids = [br.id for br in self.branches]
        if len(set(br_ids)) != len(br_ids):
            raise NetworkError("duplicate branch id")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise NetworkError(f"branch {br.id} references missing bus {end}")
            if br.from_bus == br.to_bus:
                raise NetworkError(f"branch {br.id} connects bus {br.from_bus} to itself")
            if br.in_service and br.reactance == 0 and br.resistance == 0:
                raise NetworkError(f"branch {br.id} has zero impedance")
            if br.in_service and br.reactance == 0:
                raise NetworkError(f"branch {br.id}: in-service reactance must be nonzero")
        gen_ids = [g.id for g in self.generators]
        if len(set(gen_ids)) != len(gen_ids):
            raise NetworkError("duplicate generator id")
        for g in self.generators:
            if g.bus_id not in known:
                raise NetworkError(f"generator {g.id} references missing bus {g.bus_id}")
            g.params.validate(g.id)
        if self.partition is not None:
            _validate_partition(self, self.partition)

    def with_branches_out(self, branch_ids: Iterable[int]) -> "BusNetwork":
        out = set(branch_ids)
        missing = out - {br.id for br in self.branches}
        if missing:
            raise NetworkError(f"unknown branch ids {sorted(missing)}")
        branches = tuple(replace(br, in_service=False) if br.id in out else br
                         for br in self.branches)
        return replace(self, branches=branches)


def _validate_partition(net: BusNetwork, part: PartitionSpec) -> None:
    all_buses = set(net.bus_ids)
    if part.study_buses & part.external_buses:
        raise NetworkError("study and external bus sets overlap")
    if (part.study_buses | part.external_buses) != all_buses:
        raise NetworkError("study and external bus sets do not cover all buses")
    gens = {g.id for g in net.generators}
    if part.study_generators & part.external_generators:
        raise NetworkError("study and external generator sets overlap")
    if (part.study_generators | part.external_generators) != gens:
        raise NetworkError("study and external generator sets do not cover all generators")
    for g in net.generators:
        area = part.area_of_bus(g.bus_id)
        members = part.study_generators if area == "study" else part.external_generators
        if g.id not in members:
            raise NetworkError(f"generator {g.id} is assigned to the wrong area")
    for tid in part.tie_lines:
        br = net.branch(tid)
        if part.area_of_bus(br.from_bus) == part.area_of_bus(br.to_bus):
            raise NetworkError(f"tie-line {tid} does not join the two areas")


def derive_partition(net_buses: Sequence[Bus], branches: Sequence[Branch],
                     generators: Sequence[Generator], study_buses: Iterable[int]) -> PartitionSpec:
    """Complete a partition from the set of study-area buses."""
    study = frozenset(int(b) for b in study_buses)
    external = frozenset(b.id for b in net_buses) - study
    ties = tuple(br.id for br in branches
                 if br.in_service and ((br.from_bus in study) != (br.to_bus in study)))
    study_b, ext_b = [], []
    for tid in ties:
        br = next(b for b in branches if b.id == tid)
        s, e = (br.from_bus, br.to_bus) if br.from_bus in study else (br.to_bus, br.from_bus)
        study_b.append(s)
        ext_b.append(e)
    return PartitionSpec(
        study_generators=frozenset(g.id for g in generators if g.bus_id in study),
        external_generators=frozenset(g.id for g in generators if g.bus_id not in study),
        study_buses=study,
        external_buses=external,
        tie_lines=ties,
        boundary_buses={"study": tuple(study_b), "external": tuple(ext_b)},
    )


# -- serialization ----------------------------------------------------------

def _req(obj: dict, key: str, where: str):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise NetworkError(f"{where}: missing field '{key}'") from None


def network_from_dict(doc: dict) -> BusNetwork:
    try:
        buses = tuple(
            Bus(id=int(_req(b, "id", f"buses[{i}]")),
                voltage_magnitude=float(_req(b, "voltage_magnitude", f"buses[{i}]")),
                voltage_angle=float(_req(b, "voltage_angle", f"buses[{i}]")),
                load_p=float(b.get("load_p", 0.0)),
                load_q=float(b.get("load_q", 0.0)))
            for i, b in enumerate(_req(doc, "buses", "network")))
        branches = tuple(
            Branch(id=int(br.get("id", i + 1)),
                   from_bus=int(_req(br, "from_bus", f"branches[{i}]")),
                   to_bus=int(_req(br, "to_bus", f"branches[{i}]")),
                   resistance=float(_req(br, "resistance", f"branches[{i}]")),
                   reactance=float(_req(br, "reactance", f"branches[{i}]")),
                   shunt_susceptance=float(br.get("shunt_susceptance", 0.0)),
                   in_service=bool(br.get("in_service", True)))
            for i, br in enumerate(_req(doc, "branches", "network")))
        gens = []
        for i, g in enumerate(_req(doc, "generators", "network")):
            where = f"generators[{i}]"
            raw = _req(g, "params", where)
            unknown = set(raw) - set(PARAM_NAMES)
            if unknown:
                raise NetworkError(f"{where}.params: unknown fields {sorted(unknown)}")
            params = GeneratorParams(**{k: float(_req(raw, k, where + ".params"))
                                        for k in PARAM_NAMES})
            gens.append(Generator(id=int(g.get("id", i + 1)),
                                  bus_id=int(_req(g, "bus_id", where)),
                                  params=params,
                                  dispatch_p=float(_req(g, "dispatch_p", where)),
                                  dispatch_q=float(_req(g, "dispatch_q", where))))
        base = float(_req(doc, "base_mva", "network"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkError(f"malformed network field: {exc}") from None
    part = None
    if doc.get("partition") is not None:
        p = doc["partition"]
        study = _req(p, "study_buses", "partition")
        known = {b.id for b in buses}
        bad = set(int(s) for s in study) - known
        if bad:
            raise NetworkError(f"partition references missing buses {sorted(bad)}")
        part = derive_partition(buses, branches, gens, study)
        if "external_buses" in p and frozenset(int(b) for b in p["external_buses"]) != part.external_buses:
            raise NetworkError("partition.external_buses is not the complement of study_buses")
    return BusNetwork(base_mva=base, buses=buses, branches=branches,
                      generators=tuple(gens), partition=part)


def network_to_dict(net: BusNetwork) -> dict:
    doc = {
        "base_mva": net.base_mva,
        "buses": [dict(id=b.id, voltage_magnitude=b.voltage_magnitude,
                       voltage_angle=b.voltage_angle, load_p=b.load_p, load_q=b.load_q)
                  for b in net.buses],
        "branches": [dict(id=br.id, from_bus=br.from_bus, to_bus=br.to_bus,
                          resistance=br.resistance, reactance=br.reactance,
                          shunt_susceptance=br.shunt_susceptance, in_service=br.in_service)
                     for br in net.branches],
        "generators": [dict(id=g.id, bus_id=g.bus_id, dispatch_p=g.dispatch_p,
                            dispatch_q=g.dispatch_q,
                            params={k: getattr(g.params, k) for k in PARAM_NAMES})
                       for g in net.generators],
    }
    if net.partition is not None:
        doc["partition"] = {"study_buses": sorted(net.partition.study_buses),
                            "external_buses": sorted(net.partition.external_buses)}
    return doc


def load_network(path: str | Path) -> BusNetwork:
    """Read and validate a network JSON document."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return network_from_dict(doc)
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from None


def save_network(net: BusNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1))


# -- admittance ------------------------------------------------------------

@dataclass(frozen=True)
class NodalAdmittance:
    """Complex nodal admittance matrix with node labels ``(kind, id)``."""

    matrix: np.ndarray
    nodes: tuple[Hashable, ...]

    def index(self, labels: Sequence[Hashable]) -> np.ndarray:
        pos = {lab: k for k, lab in enumerate(self.nodes)}
        try:
            return np.array([pos[lab] for lab in labels], dtype=np.intp)
        except KeyError as exc:
            raise NetworkError(f"unknown node {exc.args[0]!r}") from None

    def reduce(self, keep: Sequence[Hashable]) -> "NodalAdmittance":
        idx = self.index(keep)
        try:
            m = kron_reduce(self.matrix, idx)
        except SingularNetworkError as exc:
            elim = [self.nodes[k] for k in range(len(self.nodes)) if k not in set(idx)]
            raise SingularNetworkError(f"{exc}; eliminated nodes {elim}") from None
        return NodalAdmittance(m, tuple(keep))


def load_admittance(bus: Bus) -> complex:
    """Constant-impedance equivalent of a PQ load at its solved voltage."""
    return complex(bus.load_p, -bus.load_q) / bus.voltage_magnitude ** 2


def _stamp_branch(y: np.ndarray, i: int, j: int, br: Branch) -> None:
    ys = br.series_admittance
    ysh = 0.5j * br.shunt_susceptance
    y[i, i] += ys + ysh
    y[j, j] += ys + ysh
    y[i, j] -= ys
    y[j, i] -= ys


def build_admittance(net: BusNetwork, fault: FaultSpec | None = None,
                     include_machines: bool = True) -> NodalAdmittance:
    """Admittance over all buses, then all generator internal nodes.

    Loads are shunts at their solved voltage; machines are branches of
    ``ra + j*xd_p`` from the terminal bus to an internal node.  A fault adds
    ``fault.shunt`` at the faulted bus.
    """
    nodes: list[Hashable] = [(BUS, b.id) for b in net.buses]
    if include_machines:
        nodes += [(GEN, g.id) for g in net.generators]
    pos = {lab: k for k, lab in enumerate(nodes)}
    y = np.zeros((len(nodes), len(nodes)), dtype=complex)
    for b in net.buses:
        k = pos[(BUS, b.id)]
        y[k, k] += load_admittance(b)
    for br in net.branches:
        if not br.in_service:
            continue
        if br.reactance == 0 and br.resistance == 0:
            raise SingularNetworkError(f"branch {br.id} has zero impedance")
        _stamp_branch(y, pos[(BUS, br.from_bus)], pos[(BUS, br.to_bus)], br)
    if include_machines:
        for g in net.generators:
            ym = 1.0 / complex(g.params.ra, g.params.xd_p)
            i, j = pos[(BUS, g.bus_id)], pos[(GEN, g.id)]
            y[i, i] += ym
            y[j, j] += ym
            y[i, j] -= ym
            y[j, i] -= ym
    if fault is not None:
        if (BUS, fault.bus) not in pos:
            raise NetworkError(f"fault bus {fault.bus} is not in the network")
        k = pos[(BUS, fault.bus)]
        y[k, k] += fault.shunt
    return NodalAdmittance(y, tuple(nodes))


def area_admittance(net: BusNetwork, area: str, fault: FaultSpec | None = None) -> NodalAdmittance:
    """Admittance of one area with a fictitious node per tie-line.

    Node order: area buses, area generator internal nodes, fictitious nodes
    ``(FICT, tie_line_id)``.  The fictitious node stands for the
    opposite-area end of the tie-line.
    """
    part = net.partition
    if part is None:
        raise NetworkError("network has no partition")
    own_buses = part.study_buses if area == "study" else part.external_buses
    own_gens = part.study_generators if area == "study" else part.external_generators
    buses = [b for b in net.buses if b.id in own_buses]
    gens = [g for g in net.generators if g.id in own_gens]
    nodes: list[Hashable] = [(BUS, b.id) for b in buses] + [(GEN, g.id) for g in gens] \
        + [(FICT, t) for t in part.tie_lines]
    pos = {lab: k for k, lab in enumerate(nodes)}
    y = np.zeros((len(nodes), len(nodes)), dtype=complex)
    for b in buses:
        k = pos[(BUS, b.id)]
        y[k, k] += load_admittance(b)
    ties = set(part.tie_lines)
    for br in net.branches:
        if not br.in_service:
            if br.id in ties:
                raise NetworkError(f"tie-line {br.id} is out of service; repartition required")
            continue
        if br.id in ties:
            own = br.from_bus if br.from_bus in own_buses else br.to_bus
            _stamp_branch(y, pos[(BUS, own)], pos[(FICT, br.id)], br)
        elif br.from_bus in own_buses and br.to_bus in own_buses:
            _stamp_branch(y, pos[(BUS, br.from_bus)], pos[(BUS, br.to_bus)], br)
    for g in gens:
        ym = 1.0 / complex(g.params.ra, g.params.xd_p)
        i, j = pos[(BUS, g.bus_id)], pos[(GEN, g.id)]
        y[i, i] += ym
        y[j, j] += ym
        y[i, j] -= ym
        y[j, i] -= ym
    if fault is not None:
        if fault.bus not in own_buses:
            raise NetworkError(f"fault bus {fault.bus} is not in the {area} area")
        k = pos[(BUS, fault.bus)]
        y[k, k] += fault.shunt
    return NodalAdmittance(y, tuple(nodes))


def _check_islands(y: np.ndarray, keep: np.ndarray, elim: np.ndarray) -> None:
    """Raise if an eliminated component has no path to a kept node and no shunt."""
    pattern = csr_matrix(np.abs(y) > 0)
    ncomp, labels = connected_components(pattern, directed=False)
    kept_comp = set(labels[keep].tolist())
    rowsum = np.abs(y.sum(axis=1))
    scale = max(1.0, float(np.abs(y).max()))
    for c in set(labels[elim].tolist()) - kept_comp:
        members = np.flatnonzero(labels == c)
        if rowsum[members].max() <= 1e-12 * scale:
            raise SingularNetworkError(f"floating island at node positions {members.tolist()}")


def kron_reduce(y: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Eliminate every node not in ``keep``: ``Ykk - Yke Yee^-1 Yek``.

    The result is ordered as ``keep``.
    """
    keep = np.asarray(keep, dtype=np.intp)
    n = y.shape[0]
    mask = np.ones(n, dtype=bool)
    mask[keep] = False
    elim = np.flatnonzero(mask)
    ykk = y[np.ix_(keep, keep)]
    if elim.size == 0:
        return ykk.copy()
    _check_islands(y, keep, elim)
    yee = y[np.ix_(elim, elim)]
    yek = y[np.ix_(elim, keep)]
    yke = y[np.ix_(keep, elim)]
    try:
        x = np.linalg.solve(yee, yek)
    except np.linalg.LinAlgError:
        raise SingularNetworkError(f"eliminated block singular at positions {elim.tolist()}") from None
    return ykk - yke @ x


@dataclass(frozen=True)
class ReducedYMatrix:
    """Admittance blocks between machine internal nodes and fictitious nodes.

    ``boundary_order`` lists, per tie-line, the opposite-area bus whose
    voltage drives the fictitious node.
    """

    y11: np.ndarray
    y12: np.ndarray
    y21: np.ndarray
    y22: np.ndarray
    gen_order: tuple[int, ...]
    boundary_order: tuple[int, ...] = ()
    tie_lines: tuple[int, ...] = ()

    @property
    def ng(self) -> int:
        return len(self.gen_order)

    @property
    def nb(self) -> int:
        return len(self.boundary_order)

    def assembled(self) -> np.ndarray:
        return np.block([[self.y11, self.y12], [self.y21, self.y22]])


def partition_admittance(y_gen: NodalAdmittance, gen_order: Sequence[int],
                         tie_lines: Sequence[int] = (),
                         boundary_order: Sequence[int] = ()) -> ReducedYMatrix:
    """Split a reduced admittance into generator/fictitious-generator blocks."""
    if len(tie_lines) != len(boundary_order):
        raise NetworkError("tie_lines and boundary_order lengths differ")
    g = y_gen.index([(GEN, i) for i in gen_order])
    f = y_gen.index([(FICT, t) for t in tie_lines])
    if len(set(g.tolist()) | set(f.tolist())) != len(y_gen.nodes):
        raise NetworkError("index set mismatch: reduced matrix has nodes outside gen/boundary order")
    m = y_gen.matrix
    return ReducedYMatrix(
        y11=m[np.ix_(g, g)], y12=m[np.ix_(g, f)], y21=m[np.ix_(f, g)], y22=m[np.ix_(f, f)],
        gen_order=tuple(gen_order), boundary_order=tuple(boundary_order),
        tie_lines=tuple(tie_lines))


def _live_buses(y: NodalAdmittance) -> list[Hashable]:
    """Bus nodes connected (electrically) to at least one source node."""
    pattern = csr_matrix(np.abs(y.matrix) > 0)
    _, labels = connected_components(pattern, directed=False)
    src = {labels[k] for k, lab in enumerate(y.nodes) if lab[0] != BUS}
    return [lab for k, lab in enumerate(y.nodes) if lab[0] == BUS and labels[k] in src]


def _drop_dead_islands(y: NodalAdmittance) -> NodalAdmittance:
    """Remove bus islands without any source; they carry no current."""
    live = set(_live_buses(y))
    keep = [lab for lab in y.nodes if lab[0] != BUS or lab in live]
    if len(keep) == len(y.nodes):
        return y
    idx = y.index(keep)
    return NodalAdmittance(y.matrix[np.ix_(idx, idx)], tuple(keep))


def reduced_full(net: BusNetwork, fault: FaultSpec | None = None,
                 gen_order: Sequence[int] | None = None) -> ReducedYMatrix:
    """Whole-system admittance between generator internal nodes (no boundary)."""
    order = tuple(gen_order) if gen_order is not None else tuple(g.id for g in net.generators)
    y = _drop_dead_islands(build_admittance(net, fault))
    red = y.reduce([(GEN, i) for i in order])
    return partition_admittance(red, order)


def reduced_area(net: BusNetwork, area: str, fault: FaultSpec | None = None) -> ReducedYMatrix:
    """Area admittance between its machines and its fictitious generators."""
    part = net.partition
    gens = sorted(part.study_generators if area == "study" else part.external_generators)
    opposite = part.boundary_buses["external" if area == "study" else "study"]
    y = _drop_dead_islands(area_admittance(net, area, fault))
    keep = [(GEN, i) for i in gens] + [(FICT, t) for t in part.tie_lines]
    return partition_admittance(y.reduce(keep), gens, part.tie_lines, opposite)


@dataclass(frozen=True)
class VoltageRecovery:
    """Linear map from source phasors to selected bus voltages.

    ``v = k_gen @ e_gen + k_fict @ v_fict`` with ``e_gen`` the internal
    machine EMF phasors in ``gen_order`` and ``v_fict`` the fictitious
    source phasors in tie-line order.
    """

    k_gen: np.ndarray
    k_fict: np.ndarray
    bus_order: tuple[int, ...]

    def __call__(self, e_gen: np.ndarray, v_fict: np.ndarray | None = None) -> np.ndarray:
        v = self.k_gen @ e_gen
        if v_fict is not None and self.k_fict.shape[1]:
            v = v + self.k_fict @ v_fict
        return v


def voltage_recovery(y: NodalAdmittance, buses: Sequence[int], gen_order: Sequence[int],
                     tie_lines: Sequence[int] = ()) -> VoltageRecovery:
    """Solve the passive-node equations for the voltages at ``buses``."""
    y = _drop_dead_islands(y)
    live = {lab[1] for lab in y.nodes if lab[0] == BUS}
    dead = [b for b in buses if b not in live]
    if dead:
        raise SingularNetworkError(f"boundary buses {dead} are islanded from every source")
    o = [k for k, lab in enumerate(y.nodes) if lab[0] == BUS]
    g = y.index([(GEN, i) for i in gen_order])
    f = y.index([(FICT, t) for t in tie_lines])
    m = y.matrix
    yoo = m[np.ix_(o, o)]
    rhs = np.hstack([m[np.ix_(o, g)], m[np.ix_(o, f)]])
    try:
        sol = -np.linalg.solve(yoo, rhs)
    except np.linalg.LinAlgError:
        raise SingularNetworkError("bus block singular while recovering boundary voltages") from None
    pos = {y.nodes[k][1]: r for r, k in enumerate(o)}
    rows = [pos[b] for b in buses]
    return VoltageRecovery(k_gen=sol[rows, :len(g)], k_fict=sol[rows, len(g):],
                           bus_order=tuple(buses))


def area_recovery(net: BusNetwork, area: str, fault: FaultSpec | None = None) -> VoltageRecovery:
    """Own-area boundary bus voltages from own EMFs and fictitious sources."""
    part = net.partition
    gens = sorted(part.study_generators if area == "study" else part.external_generators)
    return voltage_recovery(area_admittance(net, area, fault), part.boundary_buses[area],
                            gens, part.tie_lines)


def full_recovery(net: BusNetwork, buses: Sequence[int], gen_order: Sequence[int],
                  fault: FaultSpec | None = None) -> VoltageRecovery:
    """Bus voltages from all machine EMFs in the unpartitioned network."""
    return voltage_recovery(build_admittance(net, fault), buses, gen_order)

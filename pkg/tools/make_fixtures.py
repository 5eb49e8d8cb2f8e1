"""Generate the bundled two-area test systems.

Each area is a meshed high-voltage ring with chords; every machine sits on
its own terminal bus behind a step-up transformer.  Parameters are drawn
from typical ranges on the machine base and converted to the 100 MVA system
base.  The AC power flow is solved here so the shipped files carry solved
voltages and dispatches.

    python3 tools/make_fixtures.py            # writes src/gridreduce/data/*.json
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
from scipy.optimize import root

from gridreduce.netmodel import (Branch, Bus, BusNetwork, Generator, GeneratorParams,
                                 derive_partition, save_network)

DATA = Path(__file__).resolve().parents[1] / "src" / "gridreduce" / "data"


def machine_params(rng: np.random.Generator, rating: float) -> GeneratorParams:
    """Typical constants on the machine base, converted to system base (rating in 100 MVA)."""
    z = 1.0 / rating
    return GeneratorParams(
        h=rng.uniform(3.5, 6.0) * rating,
        d=rng.uniform(1.0, 2.0) * rating,
        xd=rng.uniform(1.6, 1.9) * z,
        xq=rng.uniform(1.5, 1.75) * z,
        xd_p=rng.uniform(0.25, 0.32) * z,
        xq_p=rng.uniform(0.4, 0.6) * z,
        ra=0.003 * z,
        tdo_p=rng.uniform(5.0, 8.0),
        tqo_p=rng.uniform(0.5, 1.0),
        tch=rng.uniform(0.3, 0.5),
        tgv=rng.uniform(0.1, 0.2),
        r_gov=0.05 * z,
        ka=20.0, ta=0.2, kf=0.063, tf=0.35, ke=1.0, te=0.314, ae=0.0039, be=1.555,
    )


class Builder:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.buses: list[dict] = []
        self.branches: list[Branch] = []
        self.gens: list[dict] = []

    def bus(self, load_p=0.0, load_q=0.0, v_set=None) -> int:
        bid = len(self.buses) + 1
        self.buses.append(dict(id=bid, load_p=load_p, load_q=load_q, v_set=v_set))
        return bid

    def line(self, a: int, b: int, x: float, r_ratio=0.1, bsh=0.0) -> int:
        lid = len(self.branches) + 1
        self.branches.append(Branch(id=lid, from_bus=a, to_bus=b, resistance=r_ratio * x,
                                    reactance=x, shunt_susceptance=bsh))
        return lid

    def area(self, n_gen: int, n_hv: int, export: float, x_line=(0.02, 0.04),
             chord_every: int = 3, rating_scale: float = 1.0) -> tuple[list[int], list[int]]:
        """Mesh of ``n_hv`` load buses plus ``n_gen`` machines; returns (hv, gen buses)."""
        rng = self.rng
        ratings = rating_scale * rng.uniform(2.0, 6.0, n_gen)
        dispatch = 0.75 * ratings
        total_load = dispatch.sum() - export
        share = rng.uniform(0.5, 1.5, n_hv)
        share /= share.sum()
        hv = [self.bus(load_p=total_load * s, load_q=0.25 * total_load * s) for s in share]
        for k in range(n_hv):
            self.line(hv[k], hv[(k + 1) % n_hv], x=rng.uniform(*x_line), bsh=0.05)
            if n_hv >= 6 and k % chord_every == 0:
                self.line(hv[k], hv[(k + n_hv // 2) % n_hv], x=rng.uniform(0.04, 0.07), bsh=0.05)
        gen_buses = []
        for i in range(n_gen):
            gb = self.bus(v_set=rng.uniform(1.01, 1.04))
            self.line(gb, hv[i % n_hv], x=0.12 / ratings[i], r_ratio=0.02)
            self.gens.append(dict(bus=gb, p=dispatch[i], params=machine_params(rng, ratings[i])))
            gen_buses.append(gb)
        return hv, gen_buses


def solve_power_flow(b: Builder, slack_bus: int) -> tuple[np.ndarray, dict[int, complex]]:
    """Polar AC power flow; returns bus voltages and per-generator complex injections."""
    n = len(b.buses)
    y = np.zeros((n, n), dtype=complex)
    for br in b.branches:
        i, j = br.from_bus - 1, br.to_bus - 1
        ys = br.series_admittance
        y[i, i] += ys + 0.5j * br.shunt_susceptance
        y[j, j] += ys + 0.5j * br.shunt_susceptance
        y[i, j] -= ys
        y[j, i] -= ys
    p_inj = np.array([-bus["load_p"] for bus in b.buses])
    q_inj = np.array([-bus["load_q"] for bus in b.buses])
    for g in b.gens:
        p_inj[g["bus"] - 1] += g["p"]
    v_set = np.array([bus["v_set"] if bus["v_set"] else 1.0 for bus in b.buses])
    pv = np.array([bus["v_set"] is not None for bus in b.buses])
    s = slack_bus - 1
    ang_idx = np.array([k for k in range(n) if k != s])
    mag_idx = np.array([k for k in range(n) if not pv[k]])

    def unpack(z):
        th = np.zeros(n)
        vm = v_set.copy()
        th[ang_idx] = z[:ang_idx.size]
        vm[mag_idx] = z[ang_idx.size:]
        return th, vm

    def mismatch(z):
        th, vm = unpack(z)
        v = vm * np.exp(1j * th)
        sc = v * np.conj(y @ v)
        return np.concatenate([sc.real[ang_idx] - p_inj[ang_idx],
                               sc.imag[mag_idx] - q_inj[mag_idx]])

    z0 = np.concatenate([np.zeros(ang_idx.size), np.ones(mag_idx.size)])
    sol = root(mismatch, z0, method="hybr", tol=1e-13)
    if not sol.success or np.abs(mismatch(sol.x)).max() > 1e-9:
        raise RuntimeError(f"power flow did not converge: {sol.message}")
    th, vm = unpack(sol.x)
    v = vm * np.exp(1j * th)
    s_bus = v * np.conj(y @ v)
    inj = {}
    for g in b.gens:
        k = g["bus"] - 1
        inj[g["bus"]] = s_bus[k] + complex(b.buses[k]["load_p"], b.buses[k]["load_q"])
    return v, inj


def build(name: str, seed: int, n_study: int, n_ext: int, hv_study: int, hv_ext: int,
          export: float, tie_x: float = 0.03, ext_line_x=(0.02, 0.04),
          ext_chord_every: int = 3, ext_rating_scale: float = 1.0,
          study_rating_scale: float = 1.0) -> BusNetwork:
    b = Builder(seed)
    s_hv, s_gen = b.area(n_study, hv_study, export, rating_scale=study_rating_scale)
    e_hv, e_gen = b.area(n_ext, hv_ext, -export, x_line=ext_line_x, chord_every=ext_chord_every,
                       rating_scale=ext_rating_scale)
    # two tie-lines between well-separated points of the meshes
    b.line(s_hv[0], e_hv[0], x=tie_x, bsh=0.05)
    b.line(s_hv[len(s_hv) // 2], e_hv[len(e_hv) // 2], x=tie_x, bsh=0.05)
    slack = e_gen[0]
    v, inj = solve_power_flow(b, slack)
    buses = tuple(Bus(id=d["id"], voltage_magnitude=float(abs(v[d["id"] - 1])),
                      voltage_angle=float(np.angle(v[d["id"] - 1])),
                      load_p=float(d["load_p"]), load_q=float(d["load_q"])) for d in b.buses)
    gens = tuple(Generator(id=k + 1, bus_id=g["bus"], params=g["params"],
                           dispatch_p=float(inj[g["bus"]].real),
                           dispatch_q=float(inj[g["bus"]].imag))
                 for k, g in enumerate(b.gens))
    study = set(s_hv) | set(s_gen)
    part = derive_partition(buses, b.branches, gens, study)
    net = BusNetwork(base_mva=100.0, buses=buses, branches=tuple(b.branches),
                     generators=gens, partition=part)
    print(f"{name}: {len(buses)} buses, {len(b.branches)} branches, {len(gens)} generators, "
          f"{len(part.study_generators)} study / {len(part.external_generators)} external, "
          f"tie-lines {part.tie_lines}")
    return net


FIXTURES = {
    "small6": dict(seed=6, n_study=2, n_ext=4, hv_study=2, hv_ext=4, export=1.0),
    # a small study area hanging off a large, electrically compact external system
    "synth48": dict(seed=48, n_study=9, n_ext=39, hv_study=12, hv_ext=50, export=0.5,
                    study_rating_scale=0.15, ext_line_x=(0.005, 0.01), ext_chord_every=1),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, kw in FIXTURES.items():
        save_network(build(name, **kw), args.out / f"{name}.json")


if __name__ == "__main__":
    main()

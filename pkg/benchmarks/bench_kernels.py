"""Compare the compiled and numpy machine kernels.

Usage: python3 benchmarks/bench_kernels.py [--net PATH] [--repeats N] [--json OUT]

Times one right-hand-side evaluation, one RK4 step and a complete 16 s
``full_only`` run on each available backend, then prints the ratios.
The two backends are also checked to agree on the RHS.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from gridreduce import fixture_path, kernels
from gridreduce import netmodel as nm
from gridreduce.simulate import Prepared, SimConfig, run_simulation


def _per_call(fn, min_time=0.2) -> float:
    n = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(n):
            fn()
        dt = time.perf_counter() - t0
        if dt >= min_time:
            return dt / n
        n *= 2


def bench(net_path: Path, repeats: int) -> dict:
    net = nm.load_network(net_path)
    out = {"network": str(net_path), "backends": {}}
    rhs_ref = None
    for name in kernels.available():
        prep = Prepared(net, backend=name)
        plant = prep.mono_plant()
        x = prep.x0 + 1e-3 * np.random.default_rng(0).standard_normal(prep.x0.size)
        f = plant.rhs(x)
        if rhs_ref is None:
            rhs_ref = f
        agree = float(np.max(np.abs(f - rhs_ref)))
        cfg = SimConfig(policy="full_only",
                        fault=nm.FaultSpec(bus=prep.net.bus_ids[0], t_on=0.1, t_clear=0.2))
        kernels.set_backend(name)
        run_simulation(prep, cfg)  # warm the plant caches
        runs = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            run_simulation(prep, cfg)
            runs.append(time.perf_counter() - t0)
        out["backends"][name] = {
            "rhs_us": 1e6 * _per_call(lambda: plant.rhs(x)),
            "rk4_us": 1e6 * _per_call(lambda: plant.rk4(x, np.zeros(0), 0.01)),
            "full_run_s": statistics.median(runs),
            "max_rhs_diff_vs_first": agree,
        }
    b = out["backends"]
    if "compiled" in b and "python" in b:
        out["speedup"] = {k: b["python"][k] / b["compiled"][k]
                          for k in ("rhs_us", "rk4_us", "full_run_s")}
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--net", type=Path, default=fixture_path("synth48.json"))
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--json", type=Path)
    args = ap.parse_args(argv)
    res = bench(args.net, args.repeats)
    for name, r in res["backends"].items():
        print(f"{name:9s} rhs {r['rhs_us']:9.1f} us  rk4 {r['rk4_us']:9.1f} us  "
              f"16 s run {r['full_run_s']:7.3f} s  |rhs diff| {r['max_rhs_diff_vs_first']:.1e}")
    if "speedup" in res:
        s = res["speedup"]
        print(f"compiled speedup: rhs x{s['rhs_us']:.1f}, rk4 x{s['rk4_us']:.1f}, "
              f"run x{s['full_run_s']:.1f}")
    else:
        print("only one backend available; no comparison", file=sys.stderr)
    if args.json:
        args.json.write_text(json.dumps(res, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``gridreduce <command> ...``.

Commands
  simulate         run a scenario file under one or more policies
  cct              critical clearing time of a bus fault by bisection
  sweep-threshold  descending column-norm threshold sweep over a fault list
                   (optionally followed by the switching-angle sweep)

Results go to stdout as JSON; ``simulate`` also writes its files to ``--out``.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import harness, kernels
from . import netmodel as nm
from .hybrid import parse_threshold
from .mor import write_hankel_csv
from .simulate import POLICIES, Prepared


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--net", required=True, type=Path, help="network JSON file")
    p.add_argument("--threshold", metavar="VALUE{pu|S}",
                   help="column-norm threshold with unit suffix, e.g. 1.0pu or 0.25S")
    p.add_argument("--tth-max", type=float, metavar="S",
                   help="time above the switching angle before relinearizing (s)")
    p.add_argument("--delta-max", type=float, metavar="DEG",
                   help="switching angle for the adaptive policies (degrees)")
    p.add_argument("--hankel-dump", type=Path, metavar="CSV",
                   help="write the external area's Hankel singular values to CSV")
    p.add_argument("--backend", choices=("compiled", "python"),
                   help="machine kernel implementation (default: compiled when built)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridreduce", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario")
    _common(p)
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--policy", default=None,
                   help=f"policy name, comma list or 'all' ({', '.join(POLICIES)})")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--repeats", type=int, default=None, help="timed repetitions (default 5)")
    p.add_argument("--no-gnuplot", action="store_true", help="skip the angles.dat file")

    p = sub.add_parser("cct", help="critical clearing time of a bus fault")
    _common(p)
    p.add_argument("--bus", required=True, type=int)
    p.add_argument("--bracket", required=True, metavar="LO,HI",
                   help="fault durations in seconds: stable lower end, unstable upper end")
    p.add_argument("--policy", default="full_only", choices=POLICIES)
    p.add_argument("--t-on", type=float, default=0.1)
    p.add_argument("--duration", type=float, default=16.0)

    p = sub.add_parser("sweep-threshold", help="descending threshold sweep")
    _common(p)
    p.add_argument("--faults", required=True, type=Path, help="JSON fault list")
    p.add_argument("--limit-deg", type=float, default=6.0)
    p.add_argument("--start", type=float, default=10.0, help="first threshold (p.u.)")
    p.add_argument("--step", type=float, default=0.1, help="decrement (p.u.)")
    p.add_argument("--policy", default="hybrid_partitioned", choices=POLICIES)
    p.add_argument("--then-delta-max", action="store_true",
                   help="follow with the switching-angle sweep at the chosen threshold")
    p.add_argument("--duration", type=float, default=16.0)
    return ap


def _bracket(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise SystemExit(f"--bracket expects LO,HI in seconds, got {text!r}") from None
    return lo, hi


def _overrides(args, net: nm.BusNetwork) -> dict:
    out = {}
    if args.threshold is not None:
        out["threshold_pu"] = parse_threshold(args.threshold, net.base_mva)
    if args.tth_max is not None:
        out["t_th_max"] = args.tth_max
    if args.delta_max is not None:
        out["delta_max"] = math.radians(args.delta_max)
    return out


def _dump_hankel(prep: Prepared, path: Path) -> None:
    red = prep.external_reduction()
    write_hankel_csv(path, red.hankel, red.r)


def _emit(obj) -> None:
    json.dump(harness._finite(obj), sys.stdout, indent=1)
    sys.stdout.write("\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.backend:
        kernels.set_backend(args.backend)
    try:
        net = nm.load_network(args.net)
        prep = Prepared(net)
        if args.hankel_dump is not None:
            _dump_hankel(prep, args.hankel_dump)
        over = _overrides(args, net)

        if args.command == "simulate":
            pols = None
            if args.policy == "all":
                pols = list(POLICIES)
            elif args.policy:
                pols = [p.strip() for p in args.policy.split(",") if p.strip()]
            rep = harness.run_scenario(args.scenario, net=prep, out_dir=args.out, policies=pols,
                                       repeats=args.repeats, overrides=over,
                                       gnuplot=False if args.no_gnuplot else None)
            _emit({name: {"seconds": r.seconds, "speedup": r.speedup, "stable": r.stable,
                          "worst_generator": r.worst_generator,
                          "worst_delta_rmse_deg": r.worst_delta_rmse_deg}
                   for name, r in rep.policies.items()})
        elif args.command == "cct":
            lo, hi = _bracket(args.bracket)
            cct = harness.find_cct(prep, args.bus, policy=args.policy, bracket=(lo, hi),
                                   t_on=args.t_on, duration=args.duration, **over)
            _emit({"bus": args.bus, "cct": cct, "t_on": args.t_on, "policy": args.policy})
        else:
            faults = harness.load_faults(args.faults)
            refs: dict = {}
            over.pop("threshold_pu", None)
            res = harness.threshold_sweep(prep, faults, start=args.start, step_size=args.step,
                                          error_limit=args.limit_deg, policy=args.policy,
                                          duration=args.duration, references=refs, **over)
            out = {"threshold": res.to_dict()}
            if args.then_delta_max:
                over.pop("delta_max", None)
                dm = harness.delta_max_sweep(prep, faults, res.chosen, error_limit=args.limit_deg,
                                             duration=args.duration, references=refs, **over)
                out["delta_max"] = dm.to_dict()
            _emit(out)
    except (OSError, ValueError, nm.NetworkError) as exc:
        print(f"gridreduce: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

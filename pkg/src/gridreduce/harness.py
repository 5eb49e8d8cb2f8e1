"""Studies built on :func:`gridreduce.simulate.run_simulation`.

Error metrics, critical clearing time search, the two descending parameter
sweeps (column-norm threshold and switching angle), timed scenario runs
and the files they emit.  Every error is measured against a ``full_only``
run of the same fault, and the worst machine is always taken over the
study-area generators.
"""
from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import netmodel as nm
from .dynamics import NSTATE, STATE_FIELDS
from .hybrid import parse_threshold
from .simulate import POLICIES, Prepared, SimConfig, Trajectory, run_simulation

__all__ = [
    "GridMismatchError", "BracketError", "rmse", "rmse_table", "worst_generator",
    "fault_from_dict", "fault_to_dict", "load_faults", "find_cct", "SweepResult",
    "threshold_sweep", "delta_max_sweep", "PolicyResult", "ScenarioReport",
    "time_policy", "run_scenario", "write_gnuplot",
]

DEFAULT_REPEATS = 5


class GridMismatchError(ValueError):
    """Two trajectories are not sampled on the same time grid."""


class BracketError(ValueError):
    """A CCT bracket does not have a stable lower and an unstable upper end."""


# -- error metrics ------------------------------------------------------------------

def _states(tr) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(tr, Trajectory):
        return tr.states, tr.times
    arr = np.asarray(tr, dtype=float)
    return (arr[:, None] if arr.ndim == 1 else arr), None


def _check_grid(ref, test) -> tuple[np.ndarray, np.ndarray]:
    a, ta = _states(ref)
    b, tb = _states(test)
    if a.shape != b.shape:
        raise GridMismatchError(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    if ta is not None and tb is not None and not np.allclose(ta, tb, rtol=0, atol=1e-9):
        raise GridMismatchError("trajectories use different time grids")
    return a, b


def rmse(ref, test, state_index: int) -> float:
    """Root mean square difference of one state column over the whole run.

    Rotor-angle columns of a :class:`Trajectory` are converted to degrees;
    for bare arrays the value is returned in the array's own units.
    """
    a, b = _check_grid(ref, test)
    d = a[:, state_index] - b[:, state_index]
    val = math.sqrt(float(np.mean(d * d)))
    if isinstance(ref, Trajectory) and state_index % NSTATE == STATE_FIELDS.index("delta"):
        val = math.degrees(val)
    return val


def rmse_table(ref: Trajectory, test: Trajectory) -> dict[int, dict[str, float]]:
    """Per generator, per state RMSE (degrees for ``delta``, p.u. otherwise)."""
    a, b = _check_grid(ref, test)
    per_col = np.sqrt(np.mean((a - b) ** 2, axis=0))
    out = {}
    for k, g in enumerate(ref.gen_order):
        row = {}
        for j, name in enumerate(STATE_FIELDS):
            v = float(per_col[NSTATE * k + j])
            row[name] = math.degrees(v) if name == "delta" else v
        out[g] = row
    return out


def worst_generator(ref: Trajectory, test: Trajectory,
                    generators: Iterable[int] | None = None) -> tuple[int, float]:
    """Generator with the largest rotor-angle RMSE and that RMSE in degrees.

    A test run whose stability verdict disagrees with the reference, or
    that stopped early, scores ``inf``.
    """
    gens = list(generators) if generators is not None else list(ref.gen_order)
    if test.states.shape != ref.states.shape or test.stable != ref.stable:
        return gens[0], math.inf
    d = ref.field("delta") - test.field("delta")
    per_gen = np.degrees(np.sqrt(np.mean(d * d, axis=0)))
    pos = [ref.gen_order.index(g) for g in gens]
    k = int(np.argmax(per_gen[pos]))
    return gens[k], float(per_gen[pos][k])


def _study_gens(prep: Prepared) -> tuple[int, ...]:
    return prep.study if prep.study else prep.gen_order


# -- fault files --------------------------------------------------------------------

def fault_from_dict(doc: dict) -> nm.FaultSpec:
    """Parse ``{"bus", "t_on", "t_clear" | "duration", "post_action"}``.

    ``post_action`` is ``"none"``, ``"trip_bus"`` or ``{"trip_line": id}``.
    """
    try:
        bus = int(doc["bus"])
        t_on = float(doc.get("t_on", 0.1))
        if "t_clear" in doc:
            t_clear = float(doc["t_clear"])
        else:
            t_clear = round(t_on + float(doc["duration"]), 10)
    except KeyError as exc:
        raise ValueError(f"fault entry {doc!r} is missing {exc.args[0]!r}") from None
    action = doc.get("post_action", "none")
    if isinstance(action, dict):
        if set(action) != {"trip_line"}:
            raise ValueError(f"unknown post_action {action!r}")
        action = ("trip_line", int(action["trip_line"]))
    elif isinstance(action, list):
        action = (str(action[0]), int(action[1]))
    elif action not in ("none", "trip_bus"):
        raise ValueError(f"unknown post_action {action!r}")
    return nm.FaultSpec(bus=bus, t_on=t_on, t_clear=t_clear, post_action=action)


def fault_to_dict(f: nm.FaultSpec) -> dict:
    action = f.post_action
    if isinstance(action, tuple):
        action = {"trip_line": action[1]}
    return {"bus": f.bus, "t_on": f.t_on, "t_clear": f.t_clear, "post_action": action}


def load_faults(path: str | Path) -> list[nm.FaultSpec]:
    """Faults from a JSON list, or from ``{"faults": [...]}``."""
    doc = json.loads(Path(path).read_text())
    items = doc["faults"] if isinstance(doc, dict) else doc
    if not items:
        raise ValueError(f"{path}: no faults listed")
    return [fault_from_dict(d) for d in items]


# -- critical clearing time -------------------------------------------------------

def _as_prepared(net) -> Prepared:
    return net if isinstance(net, Prepared) else Prepared(net)


def find_cct(net, bus: int, policy: str = "full_only", bracket: tuple[float, float] = (0.0, 1.0),
             t_on: float = 0.1, resolution: float = 0.01, duration: float = 16.0,
             **cfg_kw) -> float:
    """Longest stable fault duration at ``bus``, to ``resolution`` seconds.

    ``bracket`` gives fault durations (clearing time minus ``t_on``); its
    lower end must be stable and its upper end unstable.  A duration of
    zero means the fault is never applied.
    """
    prep = _as_prepared(net)
    lo_k = int(round(bracket[0] / resolution))
    hi_k = int(round(bracket[1] / resolution))
    if lo_k < 0 or hi_k <= lo_k:
        raise BracketError(f"bracket {bracket} must satisfy 0 <= lo < hi")
    if t_on + hi_k * resolution > duration:
        raise BracketError(f"bracket upper end {bracket[1]} s does not fit in a {duration} s run")

    def stable(k: int) -> bool:
        fault = None if k == 0 else nm.FaultSpec(bus=bus, t_on=t_on,
                                                 t_clear=round(t_on + k * resolution, 10))
        cfg = SimConfig(fault=fault, policy=policy, duration=duration, **cfg_kw)
        return run_simulation(prep, cfg).stable

    if not stable(lo_k):
        raise BracketError(f"bus {bus}: lower bracket end {bracket[0]} s is already unstable")
    if stable(hi_k):
        raise BracketError(f"bus {bus}: upper bracket end {bracket[1]} s is still stable")
    while hi_k - lo_k > 1:
        mid = (lo_k + hi_k) // 2
        if stable(mid):
            lo_k = mid
        else:
            hi_k = mid
    return round(lo_k * resolution, 10)


# -- parameter sweeps ---------------------------------------------------------------

@dataclass
class SweepResult:
    """Outcome of a descending sweep.

    ``history`` has one entry per tried value: the value, the worst
    study-area rotor-angle RMSE over all faults, and where it occurred.
    When nothing met the limit, ``chosen`` is the value with the smallest
    worst-case error and ``met`` is false.
    """
    parameter: str
    chosen: float
    met: bool
    limit_deg: float
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _references(prep: Prepared, faults: Sequence[nm.FaultSpec], duration: float,
                references: dict | None) -> list[Trajectory]:
    refs = []
    for f in faults:
        key = (f.bus, f.t_on, f.t_clear, f.post_action)
        if references is not None and key in references:
            refs.append(references[key])
            continue
        tr = run_simulation(prep, SimConfig(fault=f, duration=duration, stop_on_instability=False))
        if references is not None:
            references[key] = tr
        refs.append(tr)
    return refs


def _worst_over(prep, faults, refs, cfg_of) -> tuple[float, dict, list[Trajectory]]:
    worst, where, runs = -1.0, {}, []
    gens = _study_gens(prep)
    for f, ref in zip(faults, refs):
        tr = run_simulation(prep, cfg_of(f))
        runs.append(tr)
        g, err = worst_generator(ref, tr, gens)
        if err > worst:
            worst, where = err, {"bus": f.bus, "t_clear": f.t_clear, "generator": g}
    return worst, where, runs


def _descending(start: float, step: float, stop: float) -> list[float]:
    n = int(math.floor((start - stop) / step + 1e-9))
    return [round(start - k * step, 10) for k in range(n + 1)]


def threshold_sweep(net, faults: Sequence[nm.FaultSpec], start: float = 10.0,
                    step_size: float = 0.1, error_limit: float = 6.0,
                    policy: str = "hybrid_partitioned", duration: float = 16.0,
                    references: dict | None = None, **cfg_kw) -> SweepResult:
    """Lower the column-norm threshold from ``start`` until every fault's
    worst study-area rotor-angle RMSE is below ``error_limit`` degrees.

    Thresholds that linearize the same set of machines give the same
    trajectories, so each distinct selection is simulated once.
    """
    if not faults:
        raise ValueError("threshold_sweep needs at least one fault")
    prep = _as_prepared(net)
    unpart = policy == "adaptive_unpartitioned"
    refs = _references(prep, faults, duration, references)
    by_selection: dict[tuple, tuple[float, dict]] = {}
    history = []
    for thr in _descending(start, step_size, 0.0):
        sel = prep.selection(thr, unpartitioned=unpart)
        key = tuple(sel.nonlinear_pos.tolist())
        if key not in by_selection:
            if math.isinf(error_limit):
                # every run meets an unbounded limit; nothing to simulate
                by_selection[key] = (math.nan, {})
            else:
                worst, where, _ = _worst_over(
                    prep, faults, refs,
                    lambda f: SimConfig(fault=f, policy=policy, threshold_pu=thr,
                                        duration=duration, stop_on_instability=False, **cfg_kw))
                by_selection[key] = (worst, where)
        worst, where = by_selection[key]
        history.append({"value": thr, "worst_deg": worst, "nonlinear": len(key), **where})
        if math.isinf(error_limit) or worst < error_limit:
            return SweepResult("threshold_pu", thr, True, error_limit, history)
    best = min(history, key=lambda h: h["worst_deg"])
    return SweepResult("threshold_pu", best["value"], False, error_limit, history)


def delta_max_sweep(net, faults: Sequence[nm.FaultSpec], threshold_pu: float,
                    start_deg: float = 180.0, step_deg: float = 1.0, error_limit: float = 6.0,
                    policy: str = "adaptive_partitioned", duration: float = 16.0,
                    references: dict | None = None, **cfg_kw) -> SweepResult:
    """Lower the switching angle from ``start_deg`` in ``step_deg`` steps
    until every fault's worst study-area rotor-angle RMSE is below
    ``error_limit`` degrees.

    A run is reused for a smaller angle when none of the deviations it
    compared against the old angle lies between the two values: every
    switching decision, and hence the whole trajectory, is then the same.
    """
    if not faults:
        raise ValueError("delta_max_sweep needs at least one fault")
    prep = _as_prepared(net)
    refs = _references(prep, faults, duration, references)
    gens = _study_gens(prep)
    # per fault: (angle in rad the run used, its deviations, its error)
    cache: list[tuple[float, np.ndarray, float] | None] = [None] * len(faults)
    history = []
    for deg in _descending(start_deg, step_deg, 0.0):
        rad = math.radians(deg)
        worst, where = -1.0, {}
        for i, (f, ref) in enumerate(zip(faults, refs)):
            hit = cache[i]
            if hit is not None and not np.any((hit[1] > rad) & (hit[1] <= hit[0])):
                err = hit[2]
            else:
                tr = run_simulation(prep, SimConfig(
                    fault=f, policy=policy, threshold_pu=threshold_pu, delta_max=rad,
                    duration=duration, stop_on_instability=False, **cfg_kw))
                err = worst_generator(ref, tr, gens)[1]
                cache[i] = (rad, np.asarray(tr.deviation_log), err)
            if err > worst:
                worst, where = err, {"bus": f.bus, "t_clear": f.t_clear}
        history.append({"value": deg, "worst_deg": worst, **where})
        if worst < error_limit:
            return SweepResult("delta_max_deg", deg, True, error_limit, history)
    best = min(history, key=lambda h: h["worst_deg"])
    return SweepResult("delta_max_deg", best["value"], False, error_limit, history)


# -- timed scenarios ----------------------------------------------------------------

@dataclass
class PolicyResult:
    policy: str
    seconds: float
    samples: list[float]
    speedup: float | None
    stable: bool
    worst_generator: int | None
    worst_delta_rmse_deg: float | None
    rmse: dict[int, dict[str, float]] | None
    mode_counts: dict[str, int]
    relinearization_events: list[float]


@dataclass
class ScenarioReport:
    scenario_id: str
    fault: dict | None
    settings: dict
    policies: dict[str, PolicyResult]

    def to_dict(self) -> dict:
        out = asdict(self)
        for res in out["policies"].values():
            if res["rmse"] is not None:
                res["rmse"] = {str(g): row for g, row in res["rmse"].items()}
        return out

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(_finite(self.to_dict()), indent=1))


def _finite(obj):
    """JSON has no infinity; report it as a string."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


def _warm(prep: Prepared, cfg: SimConfig) -> None:
    """Build the offline models a policy needs so timing sees only the run."""
    if prep.part is None:
        return
    prep.external_reduction()
    if cfg.policy in ("adaptive_partitioned", "hybrid_partitioned"):
        prep.selection(cfg.threshold_pu)
    if cfg.policy == "adaptive_unpartitioned":
        prep.selection(cfg.threshold_pu, unpartitioned=True)
        tripped = cfg.fault.tripped_branches(prep.net) if cfg.fault else ()
        prep.unpartitioned_linear(tuple(sorted(tripped)))


def time_policy(prep: Prepared, cfg: SimConfig,
                repeats: int = DEFAULT_REPEATS) -> tuple[Trajectory, list[float]]:
    """One untimed run for the trajectory, then ``repeats`` timed runs."""
    _warm(prep, cfg)
    tr = run_simulation(prep, cfg)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_simulation(prep, cfg)
        samples.append(time.perf_counter() - t0)
    return tr, samples


def _scenario_config(doc: dict, net: nm.BusNetwork):
    fault = fault_from_dict(doc["fault"]) if doc.get("fault") else None
    base = {"step": float(doc.get("step", 0.01)), "duration": float(doc.get("duration", 16.0)),
            "fault": fault, "t_th_max": float(doc.get("t_th_max", 1.0))}
    thr = doc.get("threshold", 1.0)
    base["threshold_pu"] = parse_threshold(thr, net.base_mva) if isinstance(thr, str) else float(thr)
    if "stop_on_instability" in doc:
        base["stop_on_instability"] = bool(doc["stop_on_instability"])
    # the two adaptive variants keep separate switching angles
    angles = {}
    for key, pol in (("delta_max_deg", "adaptive_partitioned"),
                     ("delta_max_unpartitioned_deg", "adaptive_unpartitioned")):
        if doc.get(key) is not None:
            angles[pol] = math.radians(float(doc[key]))
    return fault, base, angles


def _policy_config(policy: str, base: dict, angles: dict) -> SimConfig:
    kw = dict(base)
    if "delta_max" not in kw and policy in angles:
        kw["delta_max"] = angles[policy]
    return SimConfig(policy=policy, **kw)


def run_scenario(scenario: str | Path | dict, net: nm.BusNetwork | Prepared | None = None,
                 out_dir: str | Path | None = None, policies: Sequence[str] | None = None,
                 repeats: int | None = None, overrides: dict | None = None,
                 gnuplot: bool | None = None) -> ScenarioReport:
    """Run the policies of a scenario, compare them with ``full_only`` and
    write the report, trajectories and (optionally) a gnuplot data file.

    ``scenario`` is a JSON file or an already parsed dict with keys
    ``id``, ``network`` (used when ``net`` is not given), ``fault``,
    ``policies``, ``threshold`` (number in p.u. or a string with a
    ``pu``/``S`` suffix), ``delta_max_deg`` (partitioned adaptive policy),
    ``delta_max_unpartitioned_deg``, ``t_th_max``, ``step``, ``duration``,
    ``stop_on_instability``, ``repeats`` and ``gnuplot``.  Entries of
    ``overrides`` (SimConfig field names) win over the file, a
    ``delta_max`` override applying to both adaptive policies.
    """
    if isinstance(scenario, dict):
        doc, where = dict(scenario), "<scenario>"
    else:
        where = str(scenario)
        doc = json.loads(Path(scenario).read_text())
        if net is None and "network" in doc:
            doc["network"] = str((Path(scenario).parent / doc["network"]).resolve())
    try:
        if net is None:
            if "network" not in doc:
                raise ValueError("no network given")
            net = nm.load_network(doc["network"])
        prep = _as_prepared(net)
        fault, base, angles = _scenario_config(doc, prep.net)
        base.update(overrides or {})
        pols = list(policies or doc.get("policies") or ["full_only"])
        for p in pols:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; choose from {POLICIES}")
        reps = int(repeats if repeats is not None else doc.get("repeats", DEFAULT_REPEATS))
        order = ["full_only"] + [p for p in pols if p != "full_only"]
        trajs, results = {}, {}
        for p in order:
            tr, samples = time_policy(prep, _policy_config(p, base, angles), reps)
            trajs[p] = tr
            results[p] = (samples, statistics.median(samples) if samples else math.nan)
    except Exception as exc:
        try:
            wrapped = type(exc)(f"scenario {doc.get('id', where)}: {exc}")
        except TypeError:  # exception type with a custom constructor
            raise exc from None
        raise wrapped from exc

    ref = trajs["full_only"]
    t_full = results["full_only"][1]
    gens = _study_gens(prep)
    report = {}
    for p in order:
        if p not in pols and p != "full_only":
            continue
        tr = trajs[p]
        samples, med = results[p]
        comparable = tr.states.shape == ref.states.shape
        g, err = worst_generator(ref, tr, gens)
        counts = {m: tr.mode_log.count(m) for m in ("FULL", "HYBRID", "LINEAR")}
        report[p] = PolicyResult(
            policy=p, seconds=med, samples=samples,
            speedup=(t_full / med) if samples and med > 0 else None,
            stable=tr.stable, worst_generator=g, worst_delta_rmse_deg=err,
            rmse=rmse_table(ref, tr) if comparable else None,
            mode_counts=counts, relinearization_events=list(tr.relinearization_events))
    if "full_only" not in pols:
        report.pop("full_only", None)
    settings = {k: v for k, v in base.items() if k != "fault"}
    settings.update({f"delta_max[{p}]": v for p, v in angles.items()})
    settings["repeats"] = reps
    rep = ScenarioReport(scenario_id=str(doc.get("id", "scenario")),
                         fault=fault_to_dict(fault) if fault else None,
                         settings=settings, policies=report)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep.write_json(out / "report.json")
        for p in order:
            trajs[p].write_csv(out / f"{p}.csv")
            trajs[p].write_sidecar(out / f"{p}.json")
        if gnuplot if gnuplot is not None else doc.get("gnuplot", True):
            write_gnuplot(out / "angles.dat", trajs, rep.policies)
    return rep


def write_gnuplot(path: str | Path, trajs: dict[str, Trajectory],
                  results: dict[str, PolicyResult] | None = None) -> None:
    """Whitespace-separated rotor angles (degrees) for comparison plots.

    Columns: time, then one column per policy for each compared machine;
    the machines are the worst ones reported for each policy.
    """
    ref = trajs.get("full_only") or next(iter(trajs.values()))
    gens = []
    for res in (results or {}).values():
        if res.worst_generator is not None and res.worst_generator not in gens:
            gens.append(res.worst_generator)
    if not gens:
        gens = [ref.gen_order[0]]
    cols, names = [ref.times], ["time"]
    n = ref.times.size
    for g in gens:
        for p, tr in trajs.items():
            col = np.full(n, np.nan)
            vals = np.degrees(tr.column(g, "delta"))
            col[:min(n, vals.size)] = vals[:n]
            cols.append(col)
            names.append(f"gen{g}_{p}")
    with open(path, "w") as fh:
        fh.write("# " + " ".join(names) + "\n")
        np.savetxt(fh, np.column_stack(cols), fmt="%.9g")

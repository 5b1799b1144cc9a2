"""Command-line experiment driver.

Randomness: replication ``r`` of a run seeded ``s`` draws its calls from
``numpy.random.default_rng([s, r])``; rollout decisions inside it use
``RolloutConfig.seed = s * 1000003 + r``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import numpy as np

from .batch_opt import BatchInstance, build_full_model, build_simplified_model, check_routing, export_lp, solve_exact
from .heuristics import POLICIES, make_policy
from .instances import (
    burst_calls,
    burst_demand_caps,
    burst_instance,
    call_from_json,
    instance_from_json,
    renumber,
    square10_batch,
    synthetic_city,
)
from .model import AmbulanceSpec, Instance
from .reassign import BestBaseRule, ClosestBaseRule, HomeBaseRule, IntensityTable, aggregate_by_base
from .scenario import CallProcess, CallProfile, GridSpec, RolloutConfig, RolloutPolicy, estimate_intensities
from .simulator import SimResult, run, summarize

ENV_PREFIX = "AMBOPT_"

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "instance": {"type": "string"},
        "calls": {"type": "string"},
        "intensity": {"type": "string"},
        "synthetic": {
            "type": "object",
            "properties": {
                "n_ambulances": {"type": "integer", "minimum": 1},
                "calls_per_hour": {"type": "number", "exclusiveMinimum": 0},
                "size": {"type": "number", "exclusiveMinimum": 0},
                "n_bases": {"type": "integer", "minimum": 1},
                "type_mix": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 4, "maxItems": 4},
            },
            "additionalProperties": False,
        },
        "policies": {"type": "array", "items": {"enum": sorted(POLICIES)}, "minItems": 1},
        "base_rules": {"type": "array", "items": {"enum": ["hbr", "cbr", "bbr"]}, "minItems": 1},
        "fleet_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "replications": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "hours": {"type": "number", "exclusiveMinimum": 0},
        "bbr": {
            "type": "object",
            "properties": {
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "mode": {"enum": ["poisson", "max"]},
            },
            "additionalProperties": False,
        },
        "rollout": {
            "type": "object",
            "properties": {
                "enabled": {"type": "boolean"},
                "n_scenarios": {"type": "integer", "minimum": 1},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "combinatorial_hospitals": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "write_trips": {"type": "boolean"},
    },
    "additionalProperties": False,
}

DEFAULTS: dict[str, Any] = {
    "policies": ["bm"],
    "base_rules": ["cbr"],
    "replications": 1,
    "seed": 0,
    "hours": 4.0,
    "bbr": {"delta": 5400.0, "alpha": 0.9, "mode": "poisson"},
    "rollout": {"enabled": False, "n_scenarios": 25, "horizon": 7200.0, "combinatorial_hospitals": False},
    "output_dir": "out",
    "write_trips": True,
}

CSV_HEADER = ["policy", "base_rule", "fleet_size", "rollout", "statistic", "response_time", "allocation_cost"]


class CliError(Exception):
    def __init__(self, kind: str, message: str, **extra):
        super().__init__(message)
        self.payload = {"error": kind, "message": message, **extra}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _read_json(path: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise CliError("io", f"cannot read {path}: {e.strerror}", path=path) from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise CliError("parse", f"{path}:{e.lineno}:{e.colno}: {e.msg}", path=path, line=e.lineno, column=e.colno) from None


def _env_overrides(environ=None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        try:
            out[name] = json.loads(raw)
        except json.JSONDecodeError:
            out[name] = raw
    return out


def load_config(path: Optional[str], overrides: dict[str, Any], environ=None) -> dict[str, Any]:
    """Defaults < config file < AMBOPT_* environment < command-line flags."""
    cfg = json.loads(json.dumps(DEFAULTS))
    layers = [_read_json(path) if path else {}, _env_overrides(environ), overrides]
    for layer in layers:
        if not isinstance(layer, dict):
            raise CliError("schema", "config must be a JSON object")
        for k, v in layer.items():
            if v is None:
                continue
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k] = {**cfg[k], **v}
            else:
                cfg[k] = v
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise CliError("schema", f"{where}: {e.message}", path=where) from None
    return cfg


# ---------------------------------------------------------------------------
# instance / process assembly


def resize_fleet(inst: Instance, n: int) -> Instance:
    """n ambulances cycling through the instance's fleet entries as templates."""
    templates = inst.fleet
    return inst.with_fleet([AmbulanceSpec(i, templates[i % len(templates)].type, templates[i % len(templates)].base)
                            for i in range(n)])


def intensity_from_json(d: dict) -> tuple[IntensityTable, GridSpec, list[CallProfile]]:
    grid = GridSpec(**d["grid"])
    n_types = int(d["n_types"])
    rates = np.zeros((grid.n_cells, grid.n_windows, n_types))
    for cell, window, ctype, lam in d.get("entries", []):
        rates[cell, window, ctype] = lam
    profiles = [CallProfile(**p) for p in d.get("profiles", [{}] * n_types)]
    return IntensityTable(rates, grid.window, grid.period, grid.centroids()), grid, profiles


def intensity_to_json(table: IntensityTable, grid: GridSpec, profiles: Optional[Sequence[CallProfile]] = None) -> dict:
    entries = [[int(c), int(w), int(t), float(table.rates[c, w, t])] for c, w, t in zip(*np.nonzero(table.rates))]
    out = {"grid": grid.to_json(), "n_types": int(table.n_types), "entries": entries}
    if profiles is not None:
        out["profiles"] = [dataclasses.asdict(p) for p in profiles]
    return out


def assemble(cfg: dict) -> tuple[Instance, Optional[CallProcess], Optional[list]]:
    fixed_calls = None
    process = None
    if "instance" in cfg:
        inst = instance_from_json(_read_json(cfg["instance"]))
    else:
        syn = cfg.get("synthetic", {})
        inst, process = synthetic_city(**syn)
    if "intensity" in cfg:
        table, grid, profiles = intensity_from_json(_read_json(cfg["intensity"]))
        process = CallProcess(table, grid, profiles)
    if "calls" in cfg:
        fixed_calls = [call_from_json(c) for c in _read_json(cfg["calls"])]
    if fixed_calls is None and process is None:
        raise CliError("config", "need either a calls file, an intensity file or a synthetic instance")
    return inst, process, fixed_calls


def make_reassignment(kind: str, inst: Instance, process: Optional[CallProcess], bbr: dict):
    if kind == "hbr":
        return HomeBaseRule()
    if kind == "cbr":
        return ClosestBaseRule()
    if process is None:
        raise CliError("config", "the best-base rule needs an intensity table")
    table = aggregate_by_base(process.table, [b.loc for b in inst.facilities.bases], inst.geo)
    return BestBaseRule(table, bbr["delta"], bbr["alpha"], bbr["mode"])


def replication_calls(cfg: dict, process: Optional[CallProcess], fixed: Optional[list], rep: int) -> list:
    if fixed is not None:
        return fixed
    rng = np.random.default_rng([cfg["seed"], rep])
    return renumber(process.sample(0.0, cfg["hours"] * 3600.0, rng))


def _stat_rows(key: dict, results: Sequence[SimResult]) -> list[dict]:
    rt = [x for r in results for x in r.response_times()]
    ac = [x for r in results for x in r.allocation_costs()]
    if not rt:
        return []
    s_rt, s_ac = summarize(rt), summarize(ac)
    return [{**key, "statistic": st, "response_time": round_half_up(getattr(s_rt, st)),
             "allocation_cost": round_half_up(getattr(s_ac, st))} for st in ("mean", "q90", "max")]


def write_outputs(out_dir: str, rows: list[dict], extra: Optional[dict] = None, trips: Optional[list[str]] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    (out / "metrics.csv").write_text(buf.getvalue())
    payload = {"rows": rows}
    if extra:
        payload.update(extra)
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if trips is not None:
        (out / "trips.jsonl").write_text("".join(trips))


def _policy_factory(name: str, rollout: dict, process: Optional[CallProcess], seed: int):
    if not rollout.get("enabled"):
        return lambda: make_policy(name)
    if process is None:
        raise CliError("config", "rollout needs an intensity table to sample futures")
    conf = RolloutConfig(rollout["n_scenarios"], rollout["horizon"], seed, rollout["combinatorial_hospitals"])
    return lambda: RolloutPolicy(lambda: make_policy(name), process, conf)


def _tag_trips(res: SimResult, tags: dict) -> str:
    lines = []
    for line in res.trips_jsonl().splitlines():
        rec = json.loads(line)
        rec.update(tags)
        lines.append(json.dumps(rec, sort_keys=True) + "\n")
    return "".join(lines)


def cmd_simulate(cfg: dict) -> dict:
    inst0, process, fixed = assemble(cfg)
    sizes = cfg.get("fleet_sizes") or [len(inst0.fleet)]
    rows, trips = [], []
    for n in sizes:
        inst = resize_fleet(inst0, n) if n != len(inst0.fleet) else inst0
        for pol in cfg["policies"]:
            for rule in cfg["base_rules"]:
                results = []
                for rep in range(cfg["replications"]):
                    calls = replication_calls(cfg, process, fixed, rep)
                    factory = _policy_factory(pol, cfg["rollout"], process, cfg["seed"] * 1000003 + rep)
                    res = run(inst, calls, factory(), make_reassignment(rule, inst, process, cfg["bbr"]),
                              record_trips=cfg["write_trips"])
                    results.append(res)
                    if cfg["write_trips"]:
                        trips.append(_tag_trips(res, {"policy": pol, "base_rule": rule, "fleet_size": n, "replication": rep}))
                key = {"policy": pol, "base_rule": rule, "fleet_size": n, "rollout": bool(cfg["rollout"]["enabled"])}
                rows += _stat_rows(key, results)
    write_outputs(cfg["output_dir"], rows, {"config": cfg}, trips if cfg["write_trips"] else None)
    return {"rows": len(rows)}


class _TimedRollout(RolloutPolicy):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.decision_seconds: list[float] = []

    def _decide(self, world, candidates):
        t = time.perf_counter()
        out = super()._decide(world, candidates)
        self.decision_seconds.append(time.perf_counter() - t)
        return out


def cmd_rollout(cfg: dict) -> dict:
    inst0, process, fixed = assemble(cfg)
    if process is None:
        raise CliError("config", "rollout needs an intensity table to sample futures")
    sizes = cfg.get("fleet_sizes") or [len(inst0.fleet)]
    ro = cfg["rollout"]
    rows, deltas = [], []
    for n in sizes:
        inst = resize_fleet(inst0, n) if n != len(inst0.fleet) else inst0
        for pol in cfg["policies"]:
            for rule in cfg["base_rules"]:
                plain, rolled, diffs, secs = [], [], [], []
                for rep in range(cfg["replications"]):
                    calls = replication_calls(cfg, process, fixed, rep)
                    a = run(inst, calls, make_policy(pol), make_reassignment(rule, inst, process, cfg["bbr"]), record_trips=False)
                    conf = RolloutConfig(ro["n_scenarios"], ro["horizon"], cfg["seed"] * 1000003 + rep, ro["combinatorial_hospitals"])
                    policy = _TimedRollout(lambda: make_policy(pol), process, conf)
                    b = run(inst, calls, policy, make_reassignment(rule, inst, process, cfg["bbr"]), record_trips=False)
                    plain.append(a)
                    rolled.append(b)
                    secs += policy.decision_seconds
                    if a.records:
                        diffs.append(float(np.mean(b.allocation_costs()) - np.mean(a.allocation_costs())))
                for flag, res in ((False, plain), (True, rolled)):
                    rows += _stat_rows({"policy": pol, "base_rule": rule, "fleet_size": n, "rollout": flag}, res)
                d = np.asarray(diffs)
                se = float(d.std(ddof=1) / math.sqrt(len(d))) if len(d) > 1 else None
                deltas.append({
                    "policy": pol, "base_rule": rule, "fleet_size": n,
                    "mean_cost_delta": float(d.mean()) if len(d) else 0.0, "delta_std_error": se,
                    "decision_seconds_median": float(np.median(secs)) if secs else 0.0,
                    "decision_seconds_max": float(np.max(secs)) if secs else 0.0,
                })
    write_outputs(cfg["output_dir"], rows, {"config": cfg, "paired": deltas})
    return {"rows": len(rows), "paired": deltas}


def cmd_calibrate(args) -> dict:
    grid = GridSpec(args.x0, args.y0, args.x1, args.y1, args.nx, args.ny, args.window, args.period)
    events = []
    try:
        with open(args.history, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or row[0].startswith("#"):
                    continue
                if lineno == 1 and not _is_number(row[0]):
                    continue
                try:
                    t, lat, lon, typ = float(row[0]), float(row[1]), float(row[2]), int(row[3])
                except (ValueError, IndexError):
                    raise CliError("parse", f"{args.history}:{lineno}: expected epoch-seconds,lat,lon,type",
                                   path=args.history, line=lineno) from None
                events.append((t - args.origin, lon, lat, typ))
    except OSError as e:
        raise CliError("io", f"cannot read {args.history}: {e.strerror}", path=args.history) from None
    n_types = args.n_types or (max((e[3] for e in events), default=-1) + 1) or 1
    table = estimate_intensities(events, grid, n_types, args.periods)
    payload = intensity_to_json(table, grid)
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    return {"events": len(events), "nonzero": len(payload["entries"])}


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def batch_from_json(d: dict) -> BatchInstance:
    inst = instance_from_json(d["instance"])
    calls = [call_from_json(c) for c in d["calls"]]
    t0 = float(d.get("t0", 0.0))
    return BatchInstance(
        calls=calls, fleet=inst.initial_fleet(t0), t0=t0, facilities=inst.facilities, quality=inst.quality,
        geo=inst.geo, class_of=d.get("class_of", list(range(len(inst.call_types)))),
        class_theta=d.get("class_theta", [c.theta for c in inst.call_types]),
        objective=d.get("objective", "relative"), release_times=d.get("release_times", True),
    )


def cmd_solve_batch(args) -> dict:
    if args.instance == "square10":
        inst = square10_batch(args.objective or "relative")
    else:
        d = _read_json(args.instance)
        if args.objective:
            d["objective"] = args.objective
        inst = batch_from_json(d)
    model = build_simplified_model(inst) if args.simplified else build_full_model(inst)
    sol = solve_exact(inst, simplified=args.simplified, max_nodes=args.max_nodes)
    check_routing(inst, sol)
    if args.export_lp:
        Path(args.export_lp).write_text(export_lp(model))
    out = sol.to_json(inst)
    out["variables"] = model.n_vars
    out["constraints"] = len(model.rows)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return {"objective": sol.objective, "optimal": sol.optimal}


def bbr_demo(replications: int = 25, seed: int = 0, delta: float = 10800.0,
             policies: Sequence[str] = ("ca", "bm", "ghp1", "ghp2", "nm")) -> list[dict]:
    """Mean response time per policy under home, closest and best base rules on the burst pattern."""
    inst = burst_instance()
    caps = burst_demand_caps()
    rules = {"hbr": HomeBaseRule, "cbr": ClosestBaseRule, "bbr": lambda: BestBaseRule(caps, delta=delta, mode="max")}
    rows = []
    for pol in policies:
        row = {"policy": pol}
        for name, rule in rules.items():
            means = []
            for rep in range(replications):
                calls = burst_calls(np.random.default_rng([seed, rep]))
                means.append(float(np.mean(run(inst, calls, make_policy(pol), rule(), record_trips=False).response_times())))
            row[name] = float(np.mean(means))
        rows.append(row)
    return rows


def cmd_bbr_demo(args) -> dict:
    rows = bbr_demo(args.replications, args.seed, args.delta_seconds)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "hbr", "cbr", "bbr"])
    for r in rows:
        w.writerow([r["policy"], round_half_up(r["hbr"]), round_half_up(r["cbr"]), round_half_up(r["bbr"])])
    (out / "metrics.csv").write_text(buf.getvalue())
    (out / "metrics.json").write_text(json.dumps({"rows": rows}, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(buf.getvalue())
    return {"rows": len(rows)}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ambdispatch", description="Ambulance dispatch experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_flags(sp):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--policy", action="append", choices=sorted(POLICIES), help="repeatable")
        sp.add_argument("--base-rule", action="append", choices=["hbr", "cbr", "bbr"], help="repeatable")
        sp.add_argument("--delta-seconds", type=float)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--replications", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--fleet-size", type=int, action="append", dest="fleet_sizes")
        sp.add_argument("--output-dir")

    sp = sub.add_parser("simulate", help="replicated policy runs")
    experiment_flags(sp)
    sp.add_argument("--rollout", action="store_true", help="wrap each policy in a rollout")
    sp = sub.add_parser("rollout", help="paired runs with and without rollout")
    experiment_flags(sp)
    sp.add_argument("--scenarios", type=int)
    sp.add_argument("--horizon-seconds", type=float)

    sp = sub.add_parser("calibrate", help="estimate periodic Poisson intensities from a call history")
    sp.add_argument("--history", required=True, help="CSV: epoch-seconds,lat,lon,type")
    sp.add_argument("--out", required=True)
    for name in ("x0", "y0", "x1", "y1"):
        sp.add_argument(f"--{name}", type=float, required=True)
    sp.add_argument("--nx", type=int, default=10)
    sp.add_argument("--ny", type=int, default=10)
    sp.add_argument("--window", type=float, default=1800.0)
    sp.add_argument("--period", type=float, default=7 * 86400.0)
    sp.add_argument("--origin", type=float, default=0.0, help="epoch second at which the first period starts")
    sp.add_argument("--periods", type=int, help="number of observed periods (default: inferred)")
    sp.add_argument("--n-types", type=int)

    sp = sub.add_parser("solve-batch", help="optimal allocation of a batch of queued calls")
    sp.add_argument("--instance", required=True, help="batch JSON, or 'square10' for the built-in example")
    sp.add_argument("--simplified", action="store_true")
    sp.add_argument("--export-lp")
    sp.add_argument("--objective", choices=["relative", "absolute"])
    sp.add_argument("--max-nodes", type=int, default=5_000_000)
    sp.add_argument("--out")

    sp = sub.add_parser("bbr-demo", help="home vs closest vs best base rule on alternating bursts")
    sp.add_argument("--replications", type=int, default=25)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delta-seconds", type=float, default=10800.0)
    sp.add_argument("--output-dir", default="out")
    return p


def _overrides(args) -> dict:
    ov: dict[str, Any] = {
        "policies": args.policy, "base_rules": args.base_rule, "replications": args.replications,
        "seed": args.seed, "fleet_sizes": args.fleet_sizes, "output_dir": args.output_dir,
    }
    bbr = {k: v for k, v in (("delta", args.delta_seconds), ("alpha", args.alpha)) if v is not None}
    if bbr:
        ov["bbr"] = bbr
    ro = {}
    if getattr(args, "rollout", False):
        ro["enabled"] = True
    if getattr(args, "scenarios", None) is not None:
        ro["n_scenarios"] = args.scenarios
    if getattr(args, "horizon_seconds", None) is not None:
        ro["horizon"] = args.horizon_seconds
    if ro:
        ov["rollout"] = ro
    return ov


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cmd_simulate(load_config(args.config, _overrides(args)))
        elif args.command == "rollout":
            cmd_rollout(load_config(args.config, _overrides(args)))
        elif args.command == "calibrate":
            cmd_calibrate(args)
        elif args.command == "solve-batch":
            cmd_solve_batch(args)
        elif args.command == "bbr-demo":
            cmd_bbr_demo(args)
    except CliError as e:
        sys.stderr.write(json.dumps(e.payload, sort_keys=True) + "\n")
        return 2
    except (ValueError, RuntimeError) as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

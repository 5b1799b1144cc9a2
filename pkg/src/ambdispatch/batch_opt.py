"""Optimal joint allocation of a batch of queued calls.

Two mixed-integer formulations are built explicitly (for export and for
external cross-checks): a full one that also chooses hospitals and cleaning
bases, and a simplified one with facilities fixed up front. The exact solver
works on the routing structure directly: a depth-first branch and bound over
(call -> ambulance, position in that ambulance's sequence), with facility
options as an extra branching dimension in the full variant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .geo import GeoMode, Location, position_between, travel_time
from .model import INF, AmbulanceState, Call, Facilities, QualityMatrix


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceOption:
    """One way to serve a call: facility choice and what it implies."""

    hospital: Optional[int]
    cleaning_base: Optional[int]
    busy: float          # scene arrival -> ambulance free again
    free_loc: Location   # where it becomes free
    to_completion: float  # scene arrival -> completion (hospital arrival, or 0)


@dataclass
class BatchInstance:
    calls: list[Call]
    fleet: list[AmbulanceState]
    t0: float
    facilities: Facilities
    quality: QualityMatrix
    geo: GeoMode
    class_of: Sequence[int]          # call type -> priority class
    class_theta: Sequence[float]     # priority class -> weight
    big_m: Optional[float] = None
    objective: str = "relative"      # or "absolute"
    release_times: bool = True       # forbid reaching a scene before the call exists

    def __post_init__(self):
        if self.objective not in ("relative", "absolute"):
            raise ValueError("objective must be 'relative' or 'absolute'")
        ids = [c.id for c in self.calls]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate call ids")
        for c in self.calls:
            if not self.compatible_ambulances(c):
                raise InfeasibleError(f"call {c.id} has no compatible ambulance")
        self.n_classes = len(self.class_theta)
        if self.big_m is None:
            self.big_m = self.default_big_m()

    # -- structure --------------------------------------------------------
    def compatible_ambulances(self, call: Call) -> list[int]:
        rows = self.quality.rows
        return [k for k, a in enumerate(self.fleet) if rows[a.type][call.type] != INF
                and (call.restricted_to is None or a.id in call.restricted_to)]

    def priority(self, call: Call) -> int:
        return self.class_of[call.type]

    def reference_time(self, call: Call) -> float:
        if self.objective == "relative":
            return call.t
        return min(c.t for c in self.calls if self.priority(c) == self.priority(call))

    def start(self, k: int) -> tuple[float, Location]:
        """When and where ambulance k can leave for its first call of the batch."""
        a = self.fleet[k]
        t0 = self.t0
        if a.t_b <= t0:
            return t0, a.loc_b
        if a.t_f <= t0:
            return t0, position_between(a.loc_f, a.loc_b, a.t_f, t0, self.geo)
        return a.t_f, a.loc_f

    def first_arrival(self, k: int, call: Call) -> float:
        t, loc = self.start(k)
        return t + travel_time(loc, call.loc, t, self.geo)

    def _hospitals_for(self, call: Call) -> list:
        if call.hospital is not None:
            return [h for h in self.facilities.hospitals if h.id == call.hospital]
        return [h for h in self.facilities.hospitals if h.admits(call.type)]

    def _cleaning_for(self, call: Call) -> list:
        if call.cleaning_base is not None:
            return [c for c in self.facilities.cleaning_bases if c.id == call.cleaning_base]
        return list(self.facilities.cleaning_bases)

    def _option(self, call: Call, h, cb) -> ServiceOption:
        tt = lambda a, b: travel_time(a, b, 0.0, self.geo)
        busy = call.time_on_scene
        loc = call.loc
        to_completion = 0.0
        if h is not None:
            leg = tt(loc, h.loc)
            to_completion = busy + leg
            busy += leg + call.time_at_hospital
            loc = h.loc
        if cb is not None:
            busy += tt(loc, cb.loc) + call.cleaning_time
            loc = cb.loc
        return ServiceOption(None if h is None else h.id, None if cb is None else cb.id, busy, loc, to_completion)

    def options(self, call: Call, simplified: bool) -> list[ServiceOption]:
        hs = self._hospitals_for(call) if call.needs_hospital else [None]
        cbs = self._cleaning_for(call) if call.needs_cleaning else [None]
        if call.needs_hospital and not hs:
            raise InfeasibleError(f"no hospital admits call {call.id}")
        if call.needs_cleaning and not cbs:
            raise InfeasibleError(f"no cleaning base for call {call.id}")
        if simplified:
            h = None
            if call.needs_hospital:
                h = hs[0] if call.hospital is not None else min(
                    hs, key=lambda x: (travel_time(call.loc, x.loc, 0.0, self.geo), x.id))
            cb = None
            if call.needs_cleaning:
                prev = h.loc if h is not None else call.loc
                cb = cbs[0] if call.cleaning_base is not None else min(
                    cbs, key=lambda x: (travel_time(prev, x.loc, 0.0, self.geo), x.id))
            return [self._option(call, h, cb)]
        return [self._option(call, h, cb) for h in hs for cb in cbs]

    def max_travel(self) -> float:
        pts = [c.loc for c in self.calls] + [h.loc for h in self.facilities.hospitals]
        pts += [c.loc for c in self.facilities.cleaning_bases] + [self.start(k)[1] for k in range(len(self.fleet))]
        return max((travel_time(a, b, 0.0, self.geo) for a in pts for b in pts), default=0.0)

    def default_big_m(self) -> float:
        """Dominates every scene arrival time of an earliest schedule, plus one service and leg."""
        tmax = self.max_travel()
        t_start = max([self.t0] + [self.start(k)[0] for k in range(len(self.fleet))] + [c.t for c in self.calls])
        worst = [max(o.busy for o in self.options(c, simplified=False)) for c in self.calls]
        return t_start + sum(w + tmax for w in worst) + 2 * tmax + max(worst, default=0.0) + 1.0

    def check_capacity(self) -> None:
        spare = {h.id: h.capacity - h.occupancy for h in self.facilities.hospitals}
        needing = [c for c in self.calls if c.needs_hospital]
        if len(needing) > sum(max(0.0, s) for s in spare.values()):
            raise InfeasibleError("hospital capacity cannot absorb the batch")
        for c in needing:
            if not any(spare[h.id] >= 1 for h in self._hospitals_for(c)):
                raise InfeasibleError(f"no hospital with spare capacity for call {c.id}")


# ---------------------------------------------------------------------------
# Linear model container and builders


@dataclass
class LinearModel:
    """Minimize ``objective . x + constant`` subject to linear rows."""

    names: list[str] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    binary: list[bool] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    constant: float = 0.0
    rows: list[tuple[str, dict[int, float], str, float]] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    def var(self, name: str, lo: float = 0.0, hi: float = INF, binary: bool = False) -> int:
        if name in self.index:
            raise ValueError(f"duplicate variable {name}")
        self.index[name] = len(self.names)
        self.names.append(name)
        self.lower.append(0.0 if binary else lo)
        self.upper.append(1.0 if binary else hi)
        self.binary.append(binary)
        return self.index[name]

    def add(self, name: str, coeffs: dict[int, float], sense: str, rhs: float) -> None:
        if sense not in ("<=", ">=", "="):
            raise ValueError(sense)
        coeffs = {k: v for k, v in coeffs.items() if v != 0.0}
        self.rows.append((name, coeffs, sense, rhs))

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def evaluate(self, values: dict[str, float]) -> float:
        return self.constant + math.fsum(c * values.get(self.names[j], 0.0) for j, c in self.objective.items())

    def violations(self, values: dict[str, float], tol: float = 1e-6) -> list[str]:
        bad = []
        for name, coeffs, sense, rhs in self.rows:
            lhs = math.fsum(c * values.get(self.names[j], 0.0) for j, c in coeffs.items())
            if (sense == "<=" and lhs > rhs + tol) or (sense == ">=" and lhs < rhs - tol) or (
                    sense == "=" and abs(lhs - rhs) > tol):
                bad.append(name)
        for j, n in enumerate(self.names):
            v = values.get(n, 0.0)
            if v < self.lower[j] - tol or v > self.upper[j] + tol:
                bad.append(f"bound:{n}")
        return bad

    def to_matrix(self):
        """Dense (c, A, row_lo, row_hi, lo, hi, integrality) for generic MILP solvers."""
        import numpy as np

        c = np.zeros(self.n_vars)
        for j, v in self.objective.items():
            c[j] = v
        A = np.zeros((len(self.rows), self.n_vars))
        lo = np.full(len(self.rows), -np.inf)
        hi = np.full(len(self.rows), np.inf)
        for r, (_, coeffs, sense, rhs) in enumerate(self.rows):
            for j, v in coeffs.items():
                A[r, j] = v
            if sense in ("<=", "="):
                hi[r] = rhs
            if sense in (">=", "="):
                lo[r] = rhs
        return c, A, lo, hi, np.array(self.lower), np.array(self.upper), np.array(self.binary, dtype=int)


def _fmt(v: float) -> str:
    return repr(float(v))


def export_lp(model: LinearModel) -> str:
    """CPLEX-LP text. The objective constant is written as a comment."""
    out = [f"\\ objective constant: {_fmt(model.constant)}", "Minimize"]
    terms = " ".join(f"{'+' if c >= 0 else '-'} {_fmt(abs(c))} {model.names[j]}" for j, c in sorted(model.objective.items()))
    out.append(f" obj: {terms if terms else '0 ' + (model.names[0] if model.names else 'dummy')}")
    out.append("Subject To")
    for name, coeffs, sense, rhs in model.rows:
        if not coeffs:
            continue
        lhs = " ".join(f"{'+' if c >= 0 else '-'} {_fmt(abs(c))} {model.names[j]}" for j, c in sorted(coeffs.items()))
        out.append(f" {name}: {lhs} {sense} {_fmt(rhs)}")
    out.append("Bounds")
    for j, n in enumerate(model.names):
        if model.binary[j]:
            continue
        lo, hi = model.lower[j], model.upper[j]
        lo_s = "-inf" if lo == -INF else _fmt(lo)
        hi_s = "+inf" if hi == INF else _fmt(hi)
        out.append(f" {lo_s} <= {n} <= {hi_s}")
    if not model.names:
        out.append(" dummy = 0")
    bins = [n for j, n in enumerate(model.names) if model.binary[j]]
    if bins:
        out.append("Binaries")
        for i in range(0, len(bins), 8):
            out.append(" " + " ".join(bins[i:i + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


def _routing_core(inst: BatchInstance, m: LinearModel) -> dict:
    """Variables and rows shared by both variants: first/last/successor flags and first-leg timing."""
    calls = inst.calls
    compat = {c.id: set(inst.compatible_ambulances(c)) for c in calls}
    v = {"x": {}, "z": {}, "xs": {}, "t": {}, "M": {}}
    for c in calls:
        lo = c.t if inst.release_times else 0.0
        v["t"][c.id] = m.var(f"t_{c.id}", lo=max(lo, 0.0))
    for c in calls:
        for k in sorted(compat[c.id]):
            v["x"][c.id, k] = m.var(f"x_{c.id}_{k}", binary=True)
            v["z"][c.id, k] = m.var(f"z_{c.id}_{k}", binary=True)
    for ci in calls:
        for cj in calls:
            if ci.id == cj.id:
                continue
            for k in sorted(compat[ci.id] & compat[cj.id]):
                v["xs"][ci.id, cj.id, k] = m.var(f"s_{ci.id}_{cj.id}_{k}", binary=True)
    present = sorted({inst.priority(c) for c in calls})
    for p in present:
        v["M"][p] = m.var(f"M_{p}", lo=0.0)
        m.objective[v["M"][p]] = float(inst.class_theta[p])
        if inst.objective == "absolute":
            ref = min(c.t for c in calls if inst.priority(c) == p)
            m.constant -= inst.class_theta[p] * ref
    # at most one first call per ambulance
    for k in range(len(inst.fleet)):
        coeffs = {v["x"][c.id, k]: 1.0 for c in calls if (c.id, k) in v["x"]}
        if coeffs:
            m.add(f"first_{k}", coeffs, "<=", 1.0)
    # every call entered exactly once
    for c in calls:
        coeffs = {v["x"][c.id, k]: 1.0 for k in compat[c.id]}
        for (a, b, k), j in v["xs"].items():
            if b == c.id:
                coeffs[j] = 1.0
        m.add(f"served_{c.id}", coeffs, "=", 1.0)
    # flow conservation per (call, ambulance)
    for c in calls:
        for k in compat[c.id]:
            coeffs = {v["x"][c.id, k]: 1.0, v["z"][c.id, k]: -1.0}
            for (a, b, kk), j in v["xs"].items():
                if kk != k:
                    continue
                if b == c.id:
                    coeffs[j] = coeffs.get(j, 0.0) + 1.0
                if a == c.id:
                    coeffs[j] = coeffs.get(j, 0.0) - 1.0
            m.add(f"flow_{c.id}_{k}", coeffs, "=", 0.0)
    # first-call arrival, per ambulance state at t0
    big = inst.big_m
    for c in calls:
        for k in compat[c.id]:
            arrive = inst.first_arrival(k, c)
            m.add(f"start_{c.id}_{k}", {v["t"][c.id]: -1.0, v["x"][c.id, k]: big}, "<=", big - arrive)
    return v


def _pred_sum(v: dict, i: int, j: int) -> dict:
    return {idx: 1.0 for (a, b, k), idx in v["xs"].items() if a == i and b == j}


def build_simplified_model(inst: BatchInstance) -> LinearModel:
    m = LinearModel()
    v = _routing_core(inst, m)
    big = inst.big_m
    opt = {c.id: inst.options(c, simplified=True)[0] for c in inst.calls}
    for ci in inst.calls:
        o = opt[ci.id]
        for cj in inst.calls:
            if ci.id == cj.id:
                continue
            pred = _pred_sum(v, ci.id, cj.id)
            if not pred:
                continue
            gap = o.busy + travel_time(o.free_loc, cj.loc, 0.0, inst.geo)
            coeffs = {v["t"][ci.id]: 1.0, v["t"][cj.id]: -1.0}
            coeffs.update({j: big for j in pred})
            m.add(f"seq_{ci.id}_{cj.id}", coeffs, "<=", big - gap)
        p = inst.priority(ci)
        ref = ci.t if inst.objective == "relative" else 0.0
        m.add(f"done_{ci.id}", {v["t"][ci.id]: 1.0, v["M"][p]: -1.0}, "<=", ref - o.to_completion)
    return m


def build_full_model(inst: BatchInstance) -> LinearModel:
    inst.check_capacity()
    m = LinearModel()
    v = _routing_core(inst, m)
    big = inst.big_m
    tt = lambda a, b: travel_time(a, b, 0.0, inst.geo)
    y = {}
    for c in inst.calls:
        if not (c.needs_hospital or c.needs_cleaning):
            continue
        opts = inst.options(c, simplified=False)
        for o in opts:
            parts = [str(c.id)] + [f"h{o.hospital}"] * (o.hospital is not None) + [f"c{o.cleaning_base}"] * (o.cleaning_base is not None)
            y[c.id, o.hospital, o.cleaning_base] = m.var("y_" + "_".join(parts), binary=True)
        m.add(f"facility_{c.id}", {y[c.id, o.hospital, o.cleaning_base]: 1.0 for o in opts}, "=", 1.0)
    for h in inst.facilities.hospitals:
        if math.isinf(h.capacity):
            continue
        coeffs = {j: 1.0 for (i, hh, cb), j in y.items() if hh == h.id}
        if coeffs:
            m.add(f"capacity_{h.id}", coeffs, "<=", h.capacity - h.occupancy)
    hosp = {h.id: h for h in inst.facilities.hospitals}
    clean = {c.id: c for c in inst.facilities.cleaning_bases}
    for ci in inst.calls:
        p = inst.priority(ci)
        ref = ci.t if inst.objective == "relative" else 0.0
        for cj in inst.calls:
            if ci.id == cj.id:
                continue
            pred = _pred_sum(v, ci.id, cj.id)
            if not pred:
                continue
            if not (ci.needs_hospital or ci.needs_cleaning):
                gap = ci.time_on_scene + tt(ci.loc, cj.loc)
                coeffs = {v["t"][ci.id]: 1.0, v["t"][cj.id]: -1.0}
                coeffs.update({j: big for j in pred})
                m.add(f"seq_{ci.id}_{cj.id}", coeffs, "<=", big - gap)
                continue
            for (i, hh, cb), yj in y.items():
                if i != ci.id:
                    continue
                loc, extra = ci.loc, 0.0
                if hh is not None:
                    extra += tt(loc, hosp[hh].loc) + ci.time_at_hospital
                    loc = hosp[hh].loc
                if cb is not None:
                    extra += tt(loc, clean[cb].loc) + ci.cleaning_time
                    loc = clean[cb].loc
                extra += tt(loc, cj.loc)
                coeffs = {v["t"][ci.id]: 1.0, v["t"][cj.id]: -1.0, yj: extra}
                coeffs.update({j: big for j in pred})
                m.add(f"seq_{ci.id}_{cj.id}_{hh}_{cb}", coeffs, "<=", big - ci.time_on_scene)
        if ci.needs_hospital:
            for (i, hh, cb), yj in y.items():
                if i != ci.id:
                    continue
                m.add(f"done_{ci.id}_{hh}_{cb}", {v["t"][ci.id]: 1.0, yj: tt(ci.loc, hosp[hh].loc), v["M"][p]: -1.0},
                      "<=", ref - ci.time_on_scene)
        else:
            m.add(f"done_{ci.id}", {v["t"][ci.id]: 1.0, v["M"][p]: -1.0}, "<=", ref)
    return m


# ---------------------------------------------------------------------------
# Exact search


@dataclass
class BatchSolution:
    sequences: dict[int, list[int]]          # ambulance index -> call ids in service order
    options: dict[int, ServiceOption]         # call id -> chosen service option
    arrival: dict[int, float]                 # call id -> scene arrival
    class_max: dict[int, float]               # priority class -> objective-side completion measure
    objective: float
    optimal: bool
    nodes: int

    def variable_values(self, inst: BatchInstance) -> dict[str, float]:
        """Values keyed by the builders' variable names."""
        vals: dict[str, float] = {}
        for k, seq in self.sequences.items():
            for pos, cid in enumerate(seq):
                if pos == 0:
                    vals[f"x_{cid}_{k}"] = 1.0
                else:
                    vals[f"s_{seq[pos - 1]}_{cid}_{k}"] = 1.0
                if pos == len(seq) - 1:
                    vals[f"z_{cid}_{k}"] = 1.0
        for cid, t in self.arrival.items():
            vals[f"t_{cid}"] = t
            o = self.options[cid]
            if o.hospital is not None or o.cleaning_base is not None:
                parts = [str(cid)] + [f"h{o.hospital}"] * (o.hospital is not None) + [f"c{o.cleaning_base}"] * (o.cleaning_base is not None)
                vals["y_" + "_".join(parts)] = 1.0
        for p, v in self.class_max.items():
            vals[f"M_{p}"] = v
        return vals

    def to_json(self, inst: BatchInstance) -> dict:
        return {
            "objective": self.objective,
            "optimal": self.optimal,
            "nodes": self.nodes,
            "sequences": {str(inst.fleet[k].id): seq for k, seq in self.sequences.items() if seq},
            "arrival": {str(c): t for c, t in sorted(self.arrival.items())},
            "hospital": {str(c): o.hospital for c, o in sorted(self.options.items()) if o.hospital is not None},
            "cleaning_base": {str(c): o.cleaning_base for c, o in sorted(self.options.items()) if o.cleaning_base is not None},
        }


def schedule(inst: BatchInstance, k: int, seq: Sequence[int], opts: dict[int, ServiceOption],
             calls: dict[int, Call]) -> list[float]:
    """Earliest scene arrivals along one ambulance's sequence."""
    t, loc = inst.start(k)
    out = []
    for cid in seq:
        c = calls[cid]
        arrive = t + travel_time(loc, c.loc, t, inst.geo)
        if inst.release_times:
            arrive = max(arrive, c.t)
        out.append(arrive)
        o = opts[cid]
        t, loc = arrive + o.busy, o.free_loc
    return out


def evaluate_plan(inst: BatchInstance, sequences: dict[int, list[int]], opts: dict[int, ServiceOption]) -> tuple[float, dict, dict]:
    calls = {c.id: c for c in inst.calls}
    arrival = {}
    for k, seq in sequences.items():
        for cid, t in zip(seq, schedule(inst, k, seq, opts, calls)):
            arrival[cid] = t
    class_max: dict[int, float] = {}
    for cid, t in arrival.items():
        c = calls[cid]
        p = inst.priority(c)
        val = t + opts[cid].to_completion - (c.t if inst.objective == "relative" else 0.0)
        class_max[p] = max(class_max.get(p, 0.0), val)
    obj = math.fsum(inst.class_theta[p] * m for p, m in class_max.items())
    if inst.objective == "absolute":
        for p in class_max:
            obj -= inst.class_theta[p] * min(c.t for c in inst.calls if inst.priority(c) == p)
    return obj, arrival, class_max


def solve_exact(inst: BatchInstance, simplified: bool = True, max_nodes: int = 5_000_000) -> BatchSolution:
    """Globally optimal plan by depth-first branch and bound.

    Each node inserts the next call (fewest compatible ambulances first) at
    any position of any compatible ambulance's sequence, so every
    (assignment, order) pair is reached exactly once. The bound is, per
    class, the larger of the current class maximum and the best completion
    any unplaced class member could reach if served first by its best
    ambulance; inserting calls never moves other arrivals earlier.
    """
    if not simplified:
        inst.check_capacity()
    calls = {c.id: c for c in inst.calls}
    n_amb = len(inst.fleet)
    order = sorted(inst.calls, key=lambda c: (len(inst.compatible_ambulances(c)), c.t, c.id))
    compat = {c.id: inst.compatible_ambulances(c) for c in inst.calls}
    all_opts = {c.id: inst.options(c, simplified) for c in inst.calls}
    ref = {c.id: (c.t if inst.objective == "relative" else 0.0) for c in inst.calls}
    theta = inst.class_theta
    prio = {c.id: inst.priority(c) for c in inst.calls}
    shift = 0.0
    if inst.objective == "absolute":
        for p in set(prio.values()):
            shift -= theta[p] * min(c.t for c in inst.calls if prio[c.id] == p)
    # rounding of individual legs can break the triangle inequality by 0.5 ms per leg
    # A detour through other calls costs their busy time, which covers the
    # rounding loss whenever every service lasts longer than it.
    slack = 0.0005 * (len(inst.calls) + 1)
    if all(o.busy >= 0.0005 * (len(inst.calls) + 2) for opts in all_opts.values() for o in opts):
        slack = 0.0
    solo = {}
    for c in inst.calls:
        best = INF
        for k in compat[c.id]:
            t = inst.first_arrival(k, c)
            if inst.release_times:
                t = max(t, c.t)
            for o in all_opts[c.id]:
                best = min(best, t + o.to_completion - ref[c.id])
        solo[c.id] = best - slack
    spare = {h.id: h.capacity - h.occupancy for h in inst.facilities.hospitals}

    seqs: list[list[int]] = [[] for _ in range(n_amb)]
    times: list[list[float]] = [[] for _ in range(n_amb)]
    chosen: dict[int, ServiceOption] = {}
    best_obj = INF
    best_plan = None
    nodes = 0
    exhausted = False

    def bound(depth: int) -> float:
        cm: dict[int, float] = {}
        for k in range(n_amb):
            for cid, t in zip(seqs[k], times[k]):
                val = t + chosen[cid].to_completion - ref[cid]
                p = prio[cid]
                if val > cm.get(p, -INF):
                    cm[p] = val
        for c in order[depth:]:
            p = prio[c.id]
            if solo[c.id] > cm.get(p, -INF):
                cm[p] = solo[c.id]
        return math.fsum(theta[p] * max(0.0, v) for p, v in cm.items()) + shift

    def recurse(depth: int) -> None:
        nonlocal best_obj, best_plan, nodes, exhausted
        nodes += 1
        if nodes > max_nodes:
            exhausted = True
            return
        if depth == len(order):
            obj, arrival, class_max = evaluate_plan(inst, {k: seqs[k] for k in range(n_amb)}, chosen)
            if obj < best_obj - 1e-9:
                best_obj = obj
                best_plan = ({k: list(seqs[k]) for k in range(n_amb)}, dict(chosen), arrival, class_max)
            return
        c = order[depth]
        children = []
        for o in all_opts[c.id]:
            if o.hospital is not None and not simplified and spare[o.hospital] < 1:
                continue
            chosen[c.id] = o
            for k in compat[c.id]:
                for pos in range(len(seqs[k]) + 1):
                    seqs[k].insert(pos, c.id)
                    old = times[k]
                    times[k] = schedule(inst, k, seqs[k], chosen, calls)
                    lb = bound(depth + 1)
                    times[k] = old
                    seqs[k].pop(pos)
                    children.append((lb, k, pos, o))
        del chosen[c.id]
        children.sort(key=lambda x: x[0])
        for lb, k, pos, o in children:
            if lb >= best_obj - 1e-9 or exhausted:
                break
            chosen[c.id] = o
            if o.hospital is not None and not simplified:
                spare[o.hospital] -= 1
            seqs[k].insert(pos, c.id)
            old = times[k]
            times[k] = schedule(inst, k, seqs[k], chosen, calls)
            recurse(depth + 1)
            times[k] = old
            seqs[k].pop(pos)
            if o.hospital is not None and not simplified:
                spare[o.hospital] += 1
            del chosen[c.id]

    if inst.calls:
        recurse(0)
    else:
        return BatchSolution({k: [] for k in range(n_amb)}, {}, {}, {}, 0.0, True, 0)
    if best_plan is None:
        raise InfeasibleError("no feasible plan found" + (" within the node budget" if exhausted else ""))
    seq_out, opts_out, arrival, class_max = best_plan
    return BatchSolution(seq_out, opts_out, arrival, class_max, best_obj, not exhausted, nodes)


def check_routing(inst: BatchInstance, sol: BatchSolution) -> None:
    """Every call on exactly one compatible ambulance's path."""
    seen = []
    for k, seq in sol.sequences.items():
        for cid in seq:
            call = next(c for c in inst.calls if c.id == cid)
            if k not in inst.compatible_ambulances(call):
                raise AssertionError(f"call {cid} on incompatible ambulance {k}")
            seen.append(cid)
    if sorted(seen) != sorted(c.id for c in inst.calls):
        raise AssertionError("calls not served exactly once")

"""Discrete-event engine.

Two event kinds drive decisions: a call arrives, or an ambulance finishes
service. Policies read and mutate a :class:`World` through ``apply``; the
engine owns the clock, the event order and the post-service base choice.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from .geo import position_between, travel_time
from .model import (
    INF,
    AmbulanceState,
    Call,
    CallRecord,
    IncompatibleError,
    Instance,
    Trip,
    TripKind,
)


class StallError(RuntimeError):
    """Calls are waiting but no future event can ever serve them."""


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Dispatch:
    ambulance: int
    call: int
    hospital: Optional[int] = None
    cleaning_base: Optional[int] = None


@dataclass(frozen=True)
class Enqueue:
    call: int


@dataclass(frozen=True)
class ToBase:
    ambulance: int
    base: int


Decision = Union[Dispatch, Enqueue, ToBase]


class ReassignmentRule(Protocol):
    def provisional(self, world: "World", amb: AmbulanceState) -> int: ...

    def choose(self, world: "World", amb: AmbulanceState) -> int: ...


class World:
    """Mutable simulation state: fleet, queue, clock and per-call records."""

    def __init__(
        self,
        instance: Instance,
        fleet: Optional[list[AmbulanceState]] = None,
        reassignment: Optional[ReassignmentRule] = None,
        record_trips: bool = True,
        clock: float = 0.0,
    ):
        from .reassign import ClosestBaseRule

        self.instance = instance
        self.geo = instance.geo
        self.fleet = fleet if fleet is not None else instance.initial_fleet(clock)
        self.amb = {a.id: a for a in self.fleet}
        self.reassignment = reassignment if reassignment is not None else ClosestBaseRule()
        self.record_trips = record_trips
        self.clock = clock
        self.queue: list[Call] = []
        self.calls: dict[int, Call] = {}
        self.records: dict[int, CallRecord] = {}
        self.hospital_load: dict[int, int] = {h.id: h.occupancy for h in instance.facilities.hospitals}

    # -- queries ---------------------------------------------------------
    def available(self, now: Optional[float] = None) -> list[AmbulanceState]:
        now = self.clock if now is None else now
        return [a for a in self.fleet if a.t_f <= now]

    def busy_ids(self) -> frozenset:
        return frozenset(a.id for a in self.fleet if a.t_f > self.clock)

    def can_serve(self, amb: AmbulanceState, call: Call) -> bool:
        if self.instance.quality.rows[amb.type][call.type] == INF:
            return False
        return call.restricted_to is None or amb.id in call.restricted_to

    def register(self, calls: Iterable[Call]) -> None:
        for c in calls:
            self.calls[c.id] = c

    def clone(self) -> "World":
        """Independent copy without trip history or records (for lookahead)."""
        w = World.__new__(World)
        w.instance = self.instance
        w.geo = self.geo
        w.fleet = [a.copy() for a in self.fleet]
        w.amb = {a.id: a for a in w.fleet}
        w.reassignment = self.reassignment
        w.record_trips = False
        w.clock = self.clock
        w.queue = list(self.queue)
        w.calls = dict(self.calls)
        w.records = {}
        w.hospital_load = dict(self.hospital_load)
        return w

    # -- mutations -------------------------------------------------------
    def apply(self, d: Decision) -> Decision:
        if isinstance(d, Dispatch):
            self.dispatch(d.ambulance, d.call, d.hospital, d.cleaning_base)
        elif isinstance(d, Enqueue):
            self.enqueue(d.call)
        elif isinstance(d, ToBase):
            self.to_base(d.ambulance, d.base)
        else:
            raise TypeError(f"unknown decision {d!r}")
        return d

    def enqueue(self, call_id: int) -> None:
        call = self.calls[call_id]
        if call_id in self.records:
            raise ValueError(f"call {call_id} is already served")
        if all(c.id != call_id for c in self.queue):
            self.queue.append(call)

    def _leave(self, amb: AmbulanceState) -> tuple[float, tuple]:
        """Departure time and place for a new leg, trimming the planned base leg."""
        now = self.clock
        if amb.t_b <= now:
            if self.record_trips and now > amb.t_b:
                amb.trips.append(Trip(TripKind.AT_BASE, amb.loc_b, amb.loc_b, amb.t_b, now))
            return now, amb.loc_b
        if amb.t_f <= now:
            p = position_between(amb.loc_f, amb.loc_b, amb.t_f, now, self.geo)
            if self.record_trips and amb.trips and amb.trips[-1].kind is TripKind.TO_BASE:
                last = amb.trips[-1]
                if last.depart >= now:
                    amb.trips.pop()
                else:
                    last.destination, last.arrive = p, now
            return now, p
        if self.record_trips and amb.trips and amb.trips[-1].kind is TripKind.TO_BASE:
            amb.trips.pop()
        return amb.t_f, amb.loc_f

    def dispatch(self, amb_id: int, call_id: int, hospital: Optional[int] = None, cleaning: Optional[int] = None) -> CallRecord:
        inst, geo = self.instance, self.geo
        amb = self.amb[amb_id]
        call = self.calls[call_id]
        if call_id in self.records:
            raise ValueError(f"call {call_id} is already served")
        if not self.can_serve(amb, call):
            raise IncompatibleError(f"ambulance {amb_id} cannot serve call {call_id}")
        depart, loc = self._leave(amb)
        if depart < call.t:
            raise ValueError(f"ambulance {amb_id} would leave before call {call_id} arrives")
        trips = []
        t = depart + travel_time(loc, call.loc, depart, geo)
        scene_arrival = t
        trips.append(Trip(TripKind.TO_SCENE, loc, call.loc, depart, t, call.id))
        loc = call.loc
        t_end = t + call.time_on_scene
        trips.append(Trip(TripKind.ON_SCENE, loc, loc, t, t_end, call.id))
        t = t_end
        to_hospital = None
        if call.needs_hospital:
            hid = hospital if hospital is not None else call.hospital
            h = inst.hospital_by_id[hid] if hid is not None else inst.facilities.closest_hospital(call.loc, call.type, geo)
            arrive = t + travel_time(loc, h.loc, t, geo)
            trips.append(Trip(TripKind.TO_HOSPITAL, loc, h.loc, t, arrive, call.id))
            to_hospital = arrive - scene_arrival
            t_end = arrive + call.time_at_hospital
            trips.append(Trip(TripKind.AT_HOSPITAL, h.loc, h.loc, arrive, t_end, call.id))
            t, loc = t_end, h.loc
            self.hospital_load[h.id] = self.hospital_load.get(h.id, 0) + 1
        elif hospital is not None:
            raise ValueError(f"call {call_id} does not need a hospital")
        if call.needs_cleaning:
            cid = cleaning if cleaning is not None else call.cleaning_base
            cb = inst.cleaning_by_id[cid] if cid is not None else inst.facilities.closest_cleaning_base(loc, geo)
            arrive = t + travel_time(loc, cb.loc, t, geo)
            trips.append(Trip(TripKind.TO_CLEANING, loc, cb.loc, t, arrive, call.id))
            t_end = arrive + call.cleaning_time
            trips.append(Trip(TripKind.AT_CLEANING, cb.loc, cb.loc, arrive, t_end, call.id))
            t, loc = t_end, cb.loc
        elif cleaning is not None:
            raise ValueError(f"call {call_id} does not need cleaning")
        amb.t_f, amb.loc_f = t, loc
        amb.pending_free = True
        self._plan_base_leg(amb, self.reassignment.provisional(self, amb))
        if self.record_trips:
            amb.trips.extend(trips)
            amb.trips.append(Trip(TripKind.TO_BASE, amb.loc_f, amb.loc_b, amb.t_f, amb.t_b))
        wait = scene_arrival - call.t
        theta = inst.theta[call.type]
        rec = CallRecord(
            call_id=call.id,
            call_type=call.type,
            which_ambulance=amb.id,
            dispatch_time=depart,
            waiting_on_scene=wait,
            waiting_on_scene_penalized=theta * wait,
            allocation_cost=theta * wait + inst.quality.rows[amb.type][call.type],
            waiting_to_hospital=to_hospital,
            waiting_to_hospital_penalized=None if to_hospital is None else theta * to_hospital,
        )
        self.records[call.id] = rec
        if self.queue:
            self.queue = [c for c in self.queue if c.id != call.id]
        return rec

    def _plan_base_leg(self, amb: AmbulanceState, base_id: int) -> None:
        base = self.instance.base_by_id[base_id]
        amb.base_id = base_id
        amb.loc_b = base.loc
        amb.t_b = amb.t_f + travel_time(amb.loc_f, base.loc, amb.t_f, self.geo)

    def to_base(self, amb_id: int, base_id: int) -> None:
        amb = self.amb[amb_id]
        now = self.clock
        if amb.t_f > now:
            raise ValueError(f"ambulance {amb_id} is busy until {amb.t_f}")
        if amb.t_b <= now and amb.base_id == base_id:
            return
        depart, loc = self._leave(amb)
        base = self.instance.base_by_id[base_id]
        amb.loc_f, amb.t_f = loc, depart
        amb.base_id, amb.loc_b = base_id, base.loc
        amb.t_b = depart + travel_time(loc, base.loc, depart, self.geo)
        if self.record_trips:
            amb.trips.append(Trip(TripKind.TO_BASE, loc, base.loc, depart, amb.t_b))

    def flush(self, end: Optional[float] = None) -> float:
        """Close every ambulance's timeline with an idle tail up to ``end``."""
        if end is None:
            end = max([self.clock] + [a.t_b for a in self.fleet])
        if self.record_trips:
            for a in self.fleet:
                if a.t_b < end:
                    a.trips.append(Trip(TripKind.AT_BASE, a.loc_b, a.loc_b, a.t_b, end))
        return end


class Policy(Protocol):
    name: str
    forecast_busy: bool

    def prepare(self, world: World, calls: Sequence[Call]) -> None: ...

    def on_call(self, world: World, call: Call) -> list[Decision]: ...

    def on_free(self, world: World, amb_id: int) -> list[Decision]: ...


@dataclass(frozen=True)
class Event:
    kind: str  # "call" or "free"
    time: float
    call: Optional[Call] = None
    ambulance: Optional[int] = None


def next_event(world: World, pending_calls: Sequence[Call], start: int = 0) -> Optional[Event]:
    """Earliest pending event; a call wins a tie with a service completion."""
    best: Optional[AmbulanceState] = None
    for a in world.fleet:
        if a.pending_free and (best is None or a.t_f < best.t_f):
            best = a
    if start < len(pending_calls):
        call = pending_calls[start]
        if best is None or call.t <= best.t_f:
            return Event("call", call.t, call=call)
    if best is None:
        return None
    return Event("free", best.t_f, ambulance=best.id)


@dataclass
class Summary:
    mean: float
    q90: float
    max: float

    def as_dict(self) -> dict:
        return {"mean": self.mean, "q90": self.q90, "max": self.max}


def summarize(values: Sequence[float]) -> Summary:
    """Mean, empirical 0.9-quantile (smallest value with ECDF >= 0.9) and max."""
    if len(values) == 0:
        raise ValueError("cannot summarize an empty sample")
    x = np.asarray(values, dtype=float)
    return Summary(float(x.mean()), float(np.quantile(x, 0.9, method="inverted_cdf")), float(x.max()))


@dataclass
class SimResult:
    records: list[CallRecord]
    trips: dict[int, list[Trip]]
    end_time: float
    world: World = field(repr=False)

    def response_times(self) -> list[float]:
        return [r.waiting_on_scene for r in self.records]

    def allocation_costs(self) -> list[float]:
        return [r.allocation_cost for r in self.records]

    def total_cost(self) -> float:
        return math.fsum(r.allocation_cost for r in self.records)

    def metrics(self) -> dict:
        if not self.records:
            return {"n_calls": 0}
        return {
            "n_calls": len(self.records),
            "response_time": summarize(self.response_times()).as_dict(),
            "allocation_cost": summarize(self.allocation_costs()).as_dict(),
        }

    def trips_jsonl(self) -> str:
        lines = []
        for amb_id in sorted(self.trips):
            for trip in self.trips[amb_id]:
                lines.append(json.dumps(trip.to_json(amb_id), sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def records_csv(self) -> str:
        buf = io.StringIO()
        fields = list(CallRecord.__dataclass_fields__)
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow(r.__dict__)
        return buf.getvalue()


def check_serviceable(world: World, calls: Iterable[Call]) -> None:
    for c in calls:
        if not any(world.can_serve(a, c) for a in world.fleet):
            raise ConfigurationError(f"call {c.id} has no compatible ambulance in the fleet")


def run(
    instance: Instance,
    calls: Sequence[Call],
    policy: Policy,
    reassignment: Optional[ReassignmentRule] = None,
    horizon: Optional[float] = None,
    world: Optional[World] = None,
    record_trips: bool = True,
) -> SimResult:
    """Simulate ``policy`` on ``calls`` until every call has been served.

    Calls that arrived before the world's clock (carried-over queues) are
    released at the clock, in arrival order.
    """
    calls = sorted(calls, key=lambda c: (c.t, c.id))
    if horizon is not None and calls and calls[-1].t > horizon:
        raise ConfigurationError("call arrives after the horizon")
    if world is None:
        world = World(instance, reassignment=reassignment, record_trips=record_trips)
    elif reassignment is not None:
        world.reassignment = reassignment
    check_serviceable(world, calls)
    world.register(calls)
    policy.prepare(world, calls)
    idx = 0
    n = len(calls)
    while True:
        ev = next_event(world, calls, idx)
        if ev is None:
            break
        if ev.kind == "call":
            call = calls[idx]
            idx += 1
            if call.t > world.clock:
                world.clock = call.t
            if call.id in world.records:
                continue
            policy.on_call(world, call)
        else:
            amb = world.amb[ev.ambulance]
            world.clock = amb.t_f
            amb.pending_free = False
            decisions = policy.on_free(world, amb.id)
            if amb.t_f <= world.clock and not any(isinstance(d, ToBase) and d.ambulance == amb.id for d in decisions):
                world.to_base(amb.id, world.reassignment.choose(world, amb))
    if world.queue:
        raise StallError(f"{len(world.queue)} calls left in queue with no pending event")
    if len(world.records) < n:
        missing = [c.id for c in calls if c.id not in world.records]
        raise StallError(f"calls never served: {missing[:10]}")
    end = world.flush()
    records = [world.records[c.id] for c in sorted(calls, key=lambda c: c.id)]
    trips = {a.id: a.trips for a in world.fleet} if world.record_trips else {}
    return SimResult(records, trips, end, world)

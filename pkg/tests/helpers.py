"""Random instance generators and invariant checks shared by the tests."""
from __future__ import annotations

import math

import numpy as np

from ambdispatch.geo import PLANAR_60KMH, GeoMode, Location
from ambdispatch.instances import ALS_BLS_TYPES, FOUR_CALL_TYPES
from ambdispatch.model import (
    ALS_BLS_QUALITY,
    AmbulanceSpec,
    Base,
    Call,
    CleaningBase,
    Facilities,
    Hospital,
    Instance,
    TripKind,
)

# planar, one length unit per second
UNIT_SPEED = GeoMode("planar", 1.0)


def _loc(rng, size):
    return Location(round(float(rng.uniform(0, size)), 4), round(float(rng.uniform(0, size)), 4))


def random_instance(rng: np.random.Generator, n_amb: int = None, size: float = 15.0) -> Instance:
    n_bases = int(rng.integers(1, 4))
    fac = Facilities(
        [Base(i, _loc(rng, size)) for i in range(n_bases)],
        [Hospital(i, _loc(rng, size)) for i in range(int(rng.integers(1, 3)))],
        [CleaningBase(i, _loc(rng, size)) for i in range(int(rng.integers(1, 3)))],
    )
    n_amb = n_amb or int(rng.integers(1, 5))
    fleet = [AmbulanceSpec(i, int(rng.integers(0, 2)), int(rng.integers(0, n_bases))) for i in range(n_amb)]
    return Instance(PLANAR_60KMH, FOUR_CALL_TYPES, ALS_BLS_TYPES, ALS_BLS_QUALITY, fac, fleet)


def random_calls(rng: np.random.Generator, n: int, horizon: float, size: float = 15.0, gap: float = None) -> list[Call]:
    """n calls on [0, horizon]; with ``gap`` the arrivals are exactly that far apart instead."""
    if gap is None:
        ts = np.sort(rng.uniform(0, horizon, n))
    else:
        ts = gap * (1 + np.arange(n))
    out = []
    for i, t in enumerate(ts):
        hosp = bool(rng.random() < 0.5)
        clean = bool(rng.random() < 0.3)
        out.append(Call(
            i, round(float(t), 3), _loc(rng, size), int(rng.integers(0, 4)),
            time_on_scene=float(rng.integers(300, 1500)),
            needs_hospital=hosp, time_at_hospital=float(rng.integers(300, 900)) if hosp else 0.0,
            needs_cleaning=clean, cleaning_time=float(rng.integers(300, 900)) if clean else 0.0,
        ))
    return out


def check_conservation(inst: Instance, calls, res) -> None:
    """Served once, gapless trip chains, non-negative waits, records consistent with trips."""
    by_id = {c.id: c for c in calls}
    served = [r.call_id for r in res.records]
    assert sorted(served) == sorted(by_id), "every call served exactly once"
    arrivals = {}
    for amb_id, trips in res.trips.items():
        if not trips:
            assert res.end_time == 0.0, f"ambulance {amb_id} has no trips"
            continue
        assert trips[0].depart == 0.0
        for a, b in zip(trips, trips[1:]):
            assert a.arrive == b.depart, f"time gap on ambulance {amb_id}: {a} -> {b}"
            assert math.isclose(a.destination[0], b.origin[0], abs_tol=1e-9)
            assert math.isclose(a.destination[1], b.origin[1], abs_tol=1e-9)
        for tr in trips:
            assert tr.arrive >= tr.depart
            if tr.kind == TripKind.TO_SCENE:
                assert tr.call_id not in arrivals
                arrivals[tr.call_id] = (amb_id, tr.arrive, tr.depart)
    amb_type = {s.id: s.type for s in inst.fleet}
    for r in res.records:
        c = by_id[r.call_id]
        amb_id, arrive, depart = arrivals[r.call_id]
        assert amb_id == r.which_ambulance
        assert depart >= c.t
        assert r.waiting_on_scene >= 0
        assert r.waiting_on_scene == arrive - c.t
        theta = inst.call_types[c.type].theta
        assert r.waiting_on_scene_penalized == theta * r.waiting_on_scene
        assert r.allocation_cost == r.waiting_on_scene_penalized + inst.quality[amb_type[amb_id], c.type]


def small_instance(bases, fleet, hospitals=((100.0, 0.0),), cleaning=((0.0, 100.0),), quality=ALS_BLS_QUALITY,
                   call_types=FOUR_CALL_TYPES, amb_types=ALS_BLS_TYPES) -> Instance:
    """Hand-built planar instance at unit speed. ``fleet`` holds (type, base index) pairs."""
    fac = Facilities(
        [Base(i, Location(*p)) for i, p in enumerate(bases)],
        [Hospital(i, Location(*p)) for i, p in enumerate(hospitals)],
        [CleaningBase(i, Location(*p)) for i, p in enumerate(cleaning)],
    )
    return Instance(UNIT_SPEED, list(call_types), list(amb_types), quality, fac,
                    [AmbulanceSpec(i, t, b) for i, (t, b) in enumerate(fleet)])


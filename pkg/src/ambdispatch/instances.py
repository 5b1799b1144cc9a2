"""Ready-made instances and JSON (de)serialization."""
from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np

from .batch_opt import BatchInstance
from .geo import PLANAR_60KMH, GeoMode, Location
from .model import (
    ALS_BLS_QUALITY,
    FOUR_TYPE_THETA,
    AmbulanceSpec,
    AmbulanceType,
    Base,
    Call,
    CallType,
    CleaningBase,
    Facilities,
    Hospital,
    Instance,
    QualityMatrix,
)

# ---------------------------------------------------------------------------
# 10 x 10 km batch example: 10 queued calls, 4 ambulances, 300 s durations

SQUARE10_BASES = [(0, 0), (0, 10), (10, 0), (10, 10)]
SQUARE10_HOSPITALS = [(0, 5), (5, 10)]
SQUARE10_CLEANING = [(5, 0), (10, 5)]
# t_c, x, y, hospital, cleaning base, type, cleaning needed
SQUARE10_CALLS = [
    (4615, 2.573950, 7.204272, 0, 1, 0, 0),
    (4615, 9.051706, 6.459336, 1, 1, 1, 1),
    (6928, 0.323052, 5.631636, 0, 0, 2, 0),
    (7041, 9.300417, 1.637796, 1, 0, 2, 1),
    (12867, 9.872602, 6.497998, 1, 1, 0, 1),
    (15814, 4.214452, 8.023232, 0, 1, 1, 1),
    (16806, 1.127195, 9.637274, 0, 1, 2, 0),
    (17782, 9.940016, 4.055296, 1, 0, 1, 1),
    (20818, 1.196135, 4.216586, 0, 0, 2, 1),
    (34823, 0.076350, 1.954592, 0, 0, 2, 1),
]
# advanced serves every class, intermediate classes 1-2, basic class 2
SQUARE10_QUALITY = QualityMatrix([[0, 0, 0], [None, 0, 0], [None, None, 0]])
# (ambulance type, starting base)
SQUARE10_FLEET = [(0, 0), (0, 3), (1, 1), (2, 2)]
# weights for high / intermediate / basic priority classes
SQUARE10_CLASS_THETA = (4.0, 2.0, 1.0)


def square10_instance(geo: GeoMode = PLANAR_60KMH) -> Instance:
    fac = Facilities(
        [Base(i, Location(*p)) for i, p in enumerate(SQUARE10_BASES)],
        [Hospital(i, Location(*p)) for i, p in enumerate(SQUARE10_HOSPITALS)],
        [CleaningBase(i, Location(*p)) for i, p in enumerate(SQUARE10_CLEANING)],
    )
    return Instance(
        geo,
        [CallType(i, th, name) for i, (th, name) in enumerate(zip(SQUARE10_CLASS_THETA, ("high", "intermediate", "basic")))],
        [AmbulanceType(0, 2, "advanced"), AmbulanceType(1, 1, "intermediate"), AmbulanceType(2, 0, "basic")],
        SQUARE10_QUALITY,
        fac,
        [AmbulanceSpec(i, t, b) for i, (t, b) in enumerate(SQUARE10_FLEET)],
    )


def square10_calls() -> list[Call]:
    out = []
    for i, (t, x, y, h, cb, typ, clean) in enumerate(SQUARE10_CALLS):
        out.append(Call(
            id=i, t=float(t), loc=Location(x, y), type=typ,
            time_on_scene=300.0, needs_hospital=True, time_at_hospital=300.0,
            needs_cleaning=bool(clean), cleaning_time=300.0 if clean else 0.0,
            hospital=h, cleaning_base=cb if clean else None,
        ))
    return out


def square10_batch(objective: str = "relative", release_times: bool = True) -> BatchInstance:
    inst = square10_instance()
    return BatchInstance(
        calls=square10_calls(), fleet=inst.initial_fleet(0.0), t0=0.0, facilities=inst.facilities,
        quality=inst.quality, geo=inst.geo, class_of=[0, 1, 2], class_theta=SQUARE10_CLASS_THETA,
        objective=objective, release_times=release_times,
    )


# ---------------------------------------------------------------------------
# Synthetic city: ALS/BLS fleet, four call types, uniform periodic demand

ALS_BLS_TYPES = [AmbulanceType(0, 1, "ALS"), AmbulanceType(1, 0, "BLS")]
FOUR_CALL_TYPES = [CallType(i, th, lab) for i, (th, lab) in enumerate(zip(
    FOUR_TYPE_THETA, ("high-als", "low-als", "high-any", "low-any")))]


def city_facilities(size: float = 20.0, n_bases: int = 6) -> Facilities:
    """Bases on a ring around the centre, hospitals and cleaning bases inside."""
    c = size / 2
    bases = []
    for i in range(n_bases):
        ang = 2 * math.pi * i / n_bases
        bases.append(Base(i, Location(round(c + 0.35 * size * math.cos(ang), 6), round(c + 0.35 * size * math.sin(ang), 6))))
    hospitals = [Hospital(0, Location(0.3 * size, 0.5 * size)), Hospital(1, Location(0.7 * size, 0.5 * size)),
                 Hospital(2, Location(0.5 * size, 0.8 * size))]
    cleaning = [CleaningBase(0, Location(0.5 * size, 0.2 * size)), CleaningBase(1, Location(0.5 * size, 0.5 * size))]
    return Facilities(bases, hospitals, cleaning)


def round_robin_fleet(n: int, n_bases: int, templates: Sequence[int] = (0, 1, 1)) -> list[AmbulanceSpec]:
    """n ambulances; types cycle through ``templates``, bases through the base list."""
    return [AmbulanceSpec(i, templates[i % len(templates)], i % n_bases) for i in range(n)]


def synthetic_city(n_ambulances: int = 20, calls_per_hour: float = 8.0, size: float = 20.0, n_bases: int = 6,
                   type_mix: Sequence[float] = (0.2, 0.2, 0.3, 0.3), grid_n: int = 4):
    """A city instance and its periodic call process (one-day period, 30-min windows)."""
    from .scenario import CallProcess, CallProfile, GridSpec
    from .reassign import IntensityTable

    fac = city_facilities(size, n_bases)
    inst = Instance(PLANAR_60KMH, FOUR_CALL_TYPES, ALS_BLS_TYPES, ALS_BLS_QUALITY, fac,
                    round_robin_fleet(n_ambulances, n_bases))
    grid = GridSpec(0.0, 0.0, size, size, grid_n, grid_n, 1800.0, 86400.0)
    mix = np.asarray(type_mix, dtype=float)
    mix = mix / mix.sum()
    per_window = calls_per_hour / 2.0
    rates = np.broadcast_to(per_window * mix / grid.n_cells, (grid.n_cells, grid.n_windows, len(mix))).copy()
    table = IntensityTable(rates, grid.window, grid.period, grid.centroids())
    profiles = [
        CallProfile(time_on_scene=900.0, p_hospital=0.6, time_at_hospital=600.0, p_cleaning=0.2, cleaning_time=600.0),
        CallProfile(time_on_scene=900.0, p_hospital=0.4, time_at_hospital=600.0, p_cleaning=0.1, cleaning_time=600.0),
        CallProfile(time_on_scene=900.0, p_hospital=0.5, time_at_hospital=600.0, p_cleaning=0.2, cleaning_time=600.0),
        CallProfile(time_on_scene=900.0, p_hospital=0.3, time_at_hospital=600.0, p_cleaning=0.1, cleaning_time=600.0),
    ]
    return inst, CallProcess(table, grid, profiles)


def renumber(calls: Sequence[Call], first_id: int = 0) -> list[Call]:
    import dataclasses

    return [dataclasses.replace(c, id=first_id + i) for i, c in enumerate(sorted(calls, key=lambda c: (c.t, c.id)))]


# ---------------------------------------------------------------------------
# Alternating south / north bursts: 2 h on, 3 h off, over 30 h

BURST_SIZE = 40.0
BURST_BASES = {"N": (20.0, 35.0), "S": (20.0, 5.0), "W": (5.0, 20.0), "E": (35.0, 20.0)}
BURST_SOUTH = (12.0, 0.0, 28.0, 10.0)
BURST_NORTH = (12.0, 30.0, 28.0, 40.0)
BURST_SERVICE = 2700.0
BURST_CALLS_PER_WINDOW = 4
BURST_PERIOD = 30 * 3600.0
BURST_WINDOWS = [(0, 2, "S"), (5, 7, "S"), (10, 12, "S"), (15, 17, "N"), (20, 22, "N"), (25, 27, "N")]


def burst_instance() -> Instance:
    fac = Facilities([Base(i, Location(*p)) for i, p in enumerate(BURST_BASES.values())])
    return Instance(
        PLANAR_60KMH, [CallType(0, 1.0, "any")], [AmbulanceType(0, 0, "standard")], QualityMatrix([[0]]), fac,
        [AmbulanceSpec(i, 0, i) for i in range(len(BURST_BASES))],
    )


def burst_calls(rng: np.random.Generator) -> list[Call]:
    out = []
    for lo, hi, zone in BURST_WINDOWS:
        box = BURST_SOUTH if zone == "S" else BURST_NORTH
        ts = np.sort(rng.uniform(lo * 3600.0, hi * 3600.0, BURST_CALLS_PER_WINDOW))
        for t in ts:
            x, y = rng.uniform(box[0], box[2]), rng.uniform(box[1], box[3])
            out.append((float(t), Location(float(x), float(y))))
    out.sort(key=lambda p: p[0])
    return [Call(i, t, loc, 0, time_on_scene=BURST_SERVICE) for i, (t, loc) in enumerate(out)]


def burst_demand_caps():
    """Per-base, per-hour maximum call counts of the burst pattern (one period)."""
    from .reassign import IntensityTable

    names = list(BURST_BASES)
    caps = np.zeros((len(names), int(BURST_PERIOD // 3600), 1))
    for lo, hi, zone in BURST_WINDOWS:
        caps[names.index(zone), lo:hi, 0] = BURST_CALLS_PER_WINDOW
    return IntensityTable(caps, 3600.0, BURST_PERIOD, np.array(list(BURST_BASES.values())))


# ---------------------------------------------------------------------------
# JSON


def instance_to_json(inst: Instance) -> dict[str, Any]:
    fac = inst.facilities
    return {
        "geo": {"kind": inst.geo.kind, "speed_kmh": inst.geo.speed * 3600.0},
        "call_types": [{"id": c.id, "theta": c.theta, "label": c.label} for c in inst.call_types],
        "ambulance_types": [{"id": a.id, "rank": a.rank, "label": a.label} for a in inst.ambulance_types],
        "quality": inst.quality.to_json(),
        "bases": [{"id": b.id, "loc": list(b.loc)} for b in fac.bases],
        "hospitals": [{"id": h.id, "loc": list(h.loc),
                       "capacity": None if math.isinf(h.capacity) else h.capacity, "occupancy": h.occupancy,
                       "call_types": None if h.call_types is None else sorted(h.call_types)} for h in fac.hospitals],
        "cleaning_bases": [{"id": c.id, "loc": list(c.loc)} for c in fac.cleaning_bases],
        "fleet": [{"id": a.id, "type": a.type, "base": a.base} for a in inst.fleet],
    }


def instance_from_json(d: dict[str, Any]) -> Instance:
    geo = GeoMode.from_kmh(d["geo"].get("speed_kmh", 60.0), d["geo"].get("kind", "planar"))
    fac = Facilities(
        [Base(b["id"], Location(*b["loc"])) for b in d["bases"]],
        [Hospital(h["id"], Location(*h["loc"]), math.inf if h.get("capacity") is None else h["capacity"],
                  h.get("occupancy", 0), None if h.get("call_types") is None else frozenset(h["call_types"]))
         for h in d.get("hospitals", [])],
        [CleaningBase(c["id"], Location(*c["loc"])) for c in d.get("cleaning_bases", [])],
    )
    return Instance(
        geo,
        [CallType(c["id"], c["theta"], c.get("label", "")) for c in d["call_types"]],
        [AmbulanceType(a["id"], a["rank"], a.get("label", "")) for a in d["ambulance_types"]],
        QualityMatrix(d["quality"]),
        fac,
        [AmbulanceSpec(a["id"], a["type"], a["base"]) for a in d["fleet"]],
    )


def call_to_json(c: Call) -> dict[str, Any]:
    return {
        "id": c.id, "t": c.t, "loc": list(c.loc), "type": c.type, "time_on_scene": c.time_on_scene,
        "needs_hospital": c.needs_hospital, "time_at_hospital": c.time_at_hospital,
        "needs_cleaning": c.needs_cleaning, "cleaning_time": c.cleaning_time,
        "hospital": c.hospital, "cleaning_base": c.cleaning_base,
    }


def call_from_json(d: dict[str, Any]) -> Call:
    return Call(
        id=d["id"], t=float(d["t"]), loc=Location(*d["loc"]), type=d["type"],
        time_on_scene=d.get("time_on_scene", 0.0), needs_hospital=d.get("needs_hospital", False),
        time_at_hospital=d.get("time_at_hospital", 0.0), needs_cleaning=d.get("needs_cleaning", False),
        cleaning_time=d.get("cleaning_time", 0.0), hospital=d.get("hospital"), cleaning_base=d.get("cleaning_base"),
    )

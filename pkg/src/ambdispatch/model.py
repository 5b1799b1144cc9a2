"""Domain types, the penalized cost model and the trip taxonomy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .geo import GeoMode, Location, position_between, travel_time

INF = math.inf


class IncompatibleError(ValueError):
    """Ambulance type cannot serve the call type."""


@dataclass(frozen=True)
class CallType:
    id: int
    theta: float
    label: str = ""

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")


@dataclass(frozen=True)
class AmbulanceType:
    id: int
    rank: int
    label: str = ""


class QualityMatrix:
    """Quality-of-care penalties indexed by (ambulance type, call type); inf marks a forbidden pair."""

    def __init__(self, rows: Sequence[Sequence[Optional[float]]]):
        self.rows = [[INF if v is None else float(v) for v in row] for row in rows]
        if not self.rows:
            raise ValueError("empty quality matrix")
        n_calls = len(self.rows[0])
        for row in self.rows:
            if len(row) != n_calls:
                raise ValueError("ragged quality matrix")
            if any(v < 0 for v in row):
                raise ValueError("quality entries must be non-negative")
        for c in range(n_calls):
            if all(math.isinf(row[c]) for row in self.rows):
                raise ValueError(f"call type {c} has no compatible ambulance type")

    def __getitem__(self, key: tuple[int, int]) -> float:
        a, c = key
        return self.rows[a][c]

    @property
    def n_call_types(self) -> int:
        return len(self.rows[0])

    def compatible(self, a: int, c: int) -> bool:
        return not math.isinf(self.rows[a][c])

    def to_json(self) -> list:
        return [[None if math.isinf(v) else v for v in row] for row in self.rows]


# Quality-of-care penalties for an ALS/BLS fleet: rows ALS, BLS; columns call types 1..4.
ALS_BLS_QUALITY = QualityMatrix([[0, 0, 1500, 1500], [6000, 6000, 0, 0]])
FOUR_TYPE_THETA = (4.0, 1.0, 4.0, 1.0)


@dataclass(frozen=True)
class Base:
    id: int
    loc: Location


@dataclass(frozen=True)
class Hospital:
    id: int
    loc: Location
    capacity: float = INF
    occupancy: int = 0
    call_types: Optional[frozenset] = None

    def admits(self, call_type: int) -> bool:
        return self.call_types is None or call_type in self.call_types


@dataclass(frozen=True)
class CleaningBase:
    id: int
    loc: Location


@dataclass
class Facilities:
    bases: list[Base]
    hospitals: list[Hospital] = field(default_factory=list)
    cleaning_bases: list[CleaningBase] = field(default_factory=list)

    def __post_init__(self):
        if not self.bases:
            raise ValueError("at least one base is required")
        for h in self.hospitals:
            if not 0 <= h.occupancy <= h.capacity:
                raise ValueError(f"hospital {h.id} occupancy outside [0, capacity]")
        # nearest-facility lookups repeat for the same points (facility sites, scenes)
        self._cache: dict = {}

    def _remember(self, key, value):
        if len(self._cache) > 100_000:
            self._cache.clear()
        self._cache[key] = value
        return value

    def closest_hospital(self, loc: Location, call_type: int, geo: GeoMode) -> Hospital:
        key = ("h", loc, call_type, geo)
        hit = self._cache.get(key)
        if hit is None:
            options = [h for h in self.hospitals if h.admits(call_type)]
            if not options:
                raise ValueError(f"no hospital admits call type {call_type}")
            hit = self._remember(key, min(options, key=lambda h: (travel_time(loc, h.loc, 0.0, geo), h.id)))
        return hit

    def closest_cleaning_base(self, loc: Location, geo: GeoMode) -> CleaningBase:
        if not self.cleaning_bases:
            raise ValueError("no cleaning base configured")
        key = ("c", loc, geo)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._remember(key, min(self.cleaning_bases, key=lambda c: (travel_time(loc, c.loc, 0.0, geo), c.id)))
        return hit

    def closest_base(self, loc: Location, geo: GeoMode) -> Base:
        key = ("b", loc, geo)
        hit = self._cache.get(key)
        if hit is None:
            hit = self._remember(key, min(self.bases, key=lambda b: (travel_time(loc, b.loc, 0.0, geo), b.id)))
        return hit


@dataclass(frozen=True)
class Call:
    id: int
    t: float
    loc: Location
    type: int
    time_on_scene: float = 0.0
    needs_hospital: bool = False
    time_at_hospital: float = 0.0
    needs_cleaning: bool = False
    cleaning_time: float = 0.0
    restricted_to: Optional[frozenset] = None
    # facility pinned by the data (e.g. a recorded destination); None means closest
    hospital: Optional[int] = None
    cleaning_base: Optional[int] = None

    def __post_init__(self):
        if min(self.time_on_scene, self.time_at_hospital, self.cleaning_time) < 0:
            raise ValueError("durations must be non-negative")

    @property
    def sequence(self) -> str:
        """Trip sequence label C1..C4."""
        if self.needs_hospital:
            return "C1" if self.needs_cleaning else "C2"
        return "C3" if self.needs_cleaning else "C4"


class TripKind(str, Enum):
    TO_SCENE = "ToScene"
    ON_SCENE = "OnScene"
    TO_HOSPITAL = "ToHospital"
    AT_HOSPITAL = "AtHospital"
    TO_CLEANING = "ToCleaning"
    AT_CLEANING = "AtCleaning"
    TO_BASE = "ToBase"
    AT_BASE = "AtBase"


def service_trip_kinds(needs_hospital: bool, needs_cleaning: bool) -> list[TripKind]:
    """Trip kinds of one call, from dispatch to the base leg (sequences C1..C4)."""
    kinds = [TripKind.TO_SCENE, TripKind.ON_SCENE]
    if needs_hospital:
        kinds += [TripKind.TO_HOSPITAL, TripKind.AT_HOSPITAL]
    if needs_cleaning:
        kinds += [TripKind.TO_CLEANING, TripKind.AT_CLEANING]
    kinds.append(TripKind.TO_BASE)
    return kinds


@dataclass
class Trip:
    kind: TripKind
    origin: Location
    destination: Location
    depart: float
    arrive: float
    call_id: Optional[int] = None

    def to_json(self, ambulance_id: int) -> dict:
        return {
            "ambulance": ambulance_id,
            "kind": self.kind.value,
            "origin": list(self.origin),
            "destination": list(self.destination),
            "depart": self.depart,
            "arrive": self.arrive,
            "call": self.call_id,
        }


@dataclass
class CallRecord:
    call_id: int
    call_type: int
    which_ambulance: int
    dispatch_time: float
    waiting_on_scene: float
    waiting_on_scene_penalized: float
    allocation_cost: float
    waiting_to_hospital: Optional[float] = None
    waiting_to_hospital_penalized: Optional[float] = None


@dataclass(slots=True)
class AmbulanceState:
    """Per-ambulance state vector.

    Busy at ``t`` iff ``t < t_f``; parked at base ``base_id`` iff ``t_b <= t``.
    """

    id: int
    type: int
    home_base: int
    loc_f: Location
    t_f: float
    loc_b: Location
    t_b: float
    base_id: int
    trips: list = field(default_factory=list)
    pending_free: bool = False

    def available(self, now: float) -> bool:
        return self.t_f <= now

    def copy(self, with_trips: bool = False) -> "AmbulanceState":
        return AmbulanceState(
            self.id, self.type, self.home_base, self.loc_f, self.t_f, self.loc_b, self.t_b,
            self.base_id, list(self.trips) if with_trips else [], self.pending_free,
        )


@dataclass(frozen=True)
class AmbulanceSpec:
    id: int
    type: int
    base: int


@dataclass
class Instance:
    """Static description of an EMS: geography, fleet, types and costs."""

    geo: GeoMode
    call_types: list[CallType]
    ambulance_types: list[AmbulanceType]
    quality: QualityMatrix
    facilities: Facilities
    fleet: list[AmbulanceSpec]

    def __post_init__(self):
        if [c.id for c in self.call_types] != list(range(len(self.call_types))):
            raise ValueError("call type ids must be 0..n-1")
        if [a.id for a in self.ambulance_types] != list(range(len(self.ambulance_types))):
            raise ValueError("ambulance type ids must be 0..n-1")
        if len(self.quality.rows) != len(self.ambulance_types) or self.quality.n_call_types != len(self.call_types):
            raise ValueError("quality matrix shape does not match the type lists")
        base_ids = {b.id for b in self.facilities.bases}
        for spec in self.fleet:
            if spec.base not in base_ids:
                raise ValueError(f"ambulance {spec.id} starts at unknown base {spec.base}")
        self.theta = [c.theta for c in self.call_types]
        self.rank = [a.rank for a in self.ambulance_types]
        self.base_by_id = {b.id: b for b in self.facilities.bases}
        self.hospital_by_id = {h.id: h for h in self.facilities.hospitals}
        self.cleaning_by_id = {c.id: c for c in self.facilities.cleaning_bases}

    def initial_fleet(self, t0: float = 0.0) -> list[AmbulanceState]:
        out = []
        for spec in self.fleet:
            loc = self.base_by_id[spec.base].loc
            out.append(AmbulanceState(spec.id, spec.type, spec.base, loc, t0, loc, t0, spec.base))
        return out

    def with_fleet(self, fleet: list[AmbulanceSpec]) -> "Instance":
        return Instance(self.geo, self.call_types, self.ambulance_types, self.quality, self.facilities, fleet)


def penalization(t: float, call_type: CallType | float) -> float:
    """Penalized response time: theta_c * t."""
    if t < 0:
        raise ValueError("negative response time")
    theta = call_type.theta if isinstance(call_type, CallType) else call_type
    return theta * t


def cost_allocation(amb_type: int, call_type: int, t: float, quality: QualityMatrix, theta: Sequence[float]) -> float:
    m = quality[amb_type, call_type]
    if math.isinf(m):
        raise IncompatibleError(f"ambulance type {amb_type} cannot serve call type {call_type}")
    return penalization(t, theta[call_type]) + m


def compatible_ambulances(call: Call, fleet: Iterable[AmbulanceState], quality: QualityMatrix) -> list[int]:
    rows = quality.rows
    allowed = call.restricted_to
    return [
        a.id for a in fleet
        if rows[a.type][call.type] != INF and (allowed is None or a.id in allowed)
    ]


def response_time_if_assigned(amb: AmbulanceState, call: Call, now: float, geo: GeoMode) -> float:
    """Time from the call's arrival until ``amb`` would reach the scene if sent at ``now``.

    Covers the three state cases: parked at base, returning to base, and
    still in service (the ambulance leaves from its forecast free location).
    """
    waited = now - call.t
    if amb.t_b <= now:
        return waited + travel_time(amb.loc_b, call.loc, now, geo)
    if amb.t_f <= now:
        p = position_between(amb.loc_f, amb.loc_b, amb.t_f, now, geo)
        return waited + travel_time(p, call.loc, now, geo)
    return waited + (amb.t_f - now) + travel_time(amb.loc_f, call.loc, amb.t_f, geo)


def cost_key(cost: float) -> float:
    """Comparison key: costs equal to 1e-6 compare as ties."""
    return round(cost, 6)

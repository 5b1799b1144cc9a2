"""Locations, distances, travel times and en-route positions.

Times are in seconds. Planar coordinates are read as kilometres; geodesic
coordinates are (longitude, latitude) in degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

EARTH_RADIUS_KM = 6371.0


class Location(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class GeoMode:
    """Metric plus constant speed (length units per second)."""

    kind: str = "planar"
    speed: float = 60.0 / 3600.0

    def __post_init__(self):
        if self.kind not in ("planar", "geodesic"):
            raise ValueError(f"unknown geo kind {self.kind!r}")
        if not self.speed > 0:
            raise ValueError("speed must be strictly positive")

    @classmethod
    def from_kmh(cls, speed_kmh: float, kind: str = "planar") -> "GeoMode":
        return cls(kind=kind, speed=speed_kmh / 3600.0)


PLANAR_60KMH = GeoMode.from_kmh(60.0)


def _check_lat(p: Location) -> None:
    if not -90.0 <= p.y <= 90.0:
        raise ValueError(f"latitude {p.y} out of range")


def distance(a: Location, b: Location, mode: GeoMode = PLANAR_60KMH) -> float:
    if mode.kind == "planar":
        return math.hypot(b[0] - a[0], b[1] - a[1])
    _check_lat(a)
    _check_lat(b)
    lon1, lat1, lon2, lat2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def travel_time(a: Location, b: Location, t0: float = 0.0, mode: GeoMode = PLANAR_60KMH) -> float:
    """Travel time in seconds, rounded to the millisecond.

    ``t0`` is unused by the constant-speed model but kept so a
    time-dependent model can share the signature.
    """
    return round(distance(a, b, mode) / mode.speed, 3)


def position_between(a: Location, b: Location, t0: float, t: float, mode: GeoMode = PLANAR_60KMH) -> Location:
    """Position at ``t`` of a vehicle that left ``a`` for ``b`` at ``t0``."""
    if t < t0:
        raise ValueError("t must not precede the departure time")
    duration = travel_time(a, b, t0, mode)
    if duration <= 0 or t - t0 >= duration:
        return Location(b[0], b[1])
    s = (t - t0) / duration
    if s <= 0:
        return Location(a[0], a[1])
    if mode.kind == "planar":
        return Location(a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]))
    return _slerp(a, b, s)


def _to_vec(p: Location) -> tuple[float, float, float]:
    lon, lat = math.radians(p[0]), math.radians(p[1])
    return (math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat))


def _slerp(a: Location, b: Location, s: float) -> Location:
    va, vb = _to_vec(a), _to_vec(b)
    dot = max(-1.0, min(1.0, sum(p * q for p, q in zip(va, vb))))
    omega = math.acos(dot)
    if omega < 1e-15:
        return Location(a[0], a[1])
    wa = math.sin((1 - s) * omega) / math.sin(omega)
    wb = math.sin(s * omega) / math.sin(omega)
    v = [wa * p + wb * q for p, q in zip(va, vb)]
    lat = math.degrees(math.atan2(v[2], math.hypot(v[0], v[1])))
    lon = math.degrees(math.atan2(v[1], v[0]))
    return Location(lon, lat)

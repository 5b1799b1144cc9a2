"""Where an ambulance parks after service: home, closest, or best base."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .geo import distance, travel_time
from .model import INF, AmbulanceState

DEFAULT_DELTA = 5400.0
DEFAULT_ALPHA = 0.9


@dataclass
class IntensityTable:
    """Periodic Poisson rates, ``rates[cell, window, call_type]`` in calls per window."""

    rates: np.ndarray
    window: float
    period: float
    centroids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if self.rates.ndim != 3:
            raise ValueError("rates must be indexed by (cell, window, call type)")
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("rates must be finite and non-negative")
        if self.window <= 0:
            raise ValueError("window length must be positive")
        m = self.period / self.window
        if abs(m - round(m)) > 1e-9:
            raise ValueError("period must be a whole number of windows")
        if round(m) != self.rates.shape[1]:
            raise ValueError(f"expected {round(m)} windows, table has {self.rates.shape[1]}")
        if self.centroids is not None:
            self.centroids = np.asarray(self.centroids, dtype=float).reshape(-1, 2)
            if len(self.centroids) != self.rates.shape[0]:
                raise ValueError("one centroid per cell required")

    @property
    def n_cells(self) -> int:
        return self.rates.shape[0]

    @property
    def n_windows(self) -> int:
        return self.rates.shape[1]

    @property
    def n_types(self) -> int:
        return self.rates.shape[2]

    def scaled(self, k: float) -> "IntensityTable":
        return IntensityTable(self.rates * k, self.window, self.period, self.centroids)


def poisson_quantile(mean: float, alpha: float) -> int:
    """Smallest q with P(N <= q) >= alpha for N ~ Poisson(mean)."""
    if mean < 0 or math.isnan(mean):
        raise ValueError("Poisson mean must be non-negative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if mean == 0.0:
        return 0
    if mean > 700.0:
        # exp(-mean) underflows; the library inverse CDF is exact enough here
        return int(stats.poisson.ppf(alpha, mean))
    p = math.exp(-mean)
    cdf = p
    q = 0
    while cdf < alpha:
        q += 1
        p *= mean / q
        cdf += p
        if p == 0.0 and q > mean:
            break
    return q


def window_overlaps(start: float, end: float, window: float, n_windows: int) -> list[tuple[int, float]]:
    """(window index mod period, overlap in window units) for [start, end]."""
    if end < start:
        raise ValueError("interval end precedes start")
    out = []
    k = math.floor(start / window)
    while k * window < end:
        lo = max(start, k * window)
        hi = min(end, (k + 1) * window)
        if hi > lo:
            out.append((k % n_windows, (hi - lo) / window))
        k += 1
    return out


def mean_count_over_window(table: IntensityTable, cell: int, call_type: int, start: float, end: float) -> float:
    rates = table.rates[cell, :, call_type]
    return math.fsum(rates[i] * f for i, f in window_overlaps(start, end, table.window, table.n_windows))


def max_count_over_window(caps: IntensityTable, cell: int, call_type: int, start: float, end: float) -> int:
    """Bounded demand: sum of per-window call caps over every window the interval touches."""
    rates = caps.rates[cell, :, call_type]
    return int(sum(math.ceil(rates[i]) for i, _ in window_overlaps(start, end, caps.window, caps.n_windows)))


def aggregate_by_base(table: IntensityTable, base_locs: Sequence, geo) -> IntensityTable:
    """Pool grid-cell rates into base Voronoi cells by nearest base to each cell centroid."""
    if table.centroids is None:
        raise ValueError("table has no cell centroids")
    if len(base_locs) == 0:
        raise ValueError("no bases")
    out = np.zeros((len(base_locs), table.n_windows, table.n_types))
    for cell, c in enumerate(table.centroids):
        d = [distance(tuple(c), b, geo) for b in base_locs]
        out[int(np.argmin(d))] += table.rates[cell]
    return IntensityTable(out, table.window, table.period, np.asarray(base_locs, dtype=float))


class HomeBaseRule:
    name = "hbr"

    def __init__(self, home: Optional[Mapping[int, int]] = None):
        self.home = dict(home) if home is not None else None

    def _home(self, amb: AmbulanceState) -> int:
        if self.home is None:
            return amb.home_base
        if amb.id not in self.home:
            raise KeyError(f"no home base for ambulance {amb.id}")
        return self.home[amb.id]

    def provisional(self, world, amb: AmbulanceState) -> int:
        return self._home(amb)

    def choose(self, world, amb: AmbulanceState) -> int:
        return self._home(amb)


class ClosestBaseRule:
    name = "cbr"

    def provisional(self, world, amb: AmbulanceState) -> int:
        return world.instance.facilities.closest_base(amb.loc_f, world.geo).id

    def choose(self, world, amb: AmbulanceState) -> int:
        return world.instance.facilities.closest_base(amb.loc_f, world.geo).id


def priority_types(world, amb: AmbulanceState) -> list[int]:
    """Call types the ambulance can serve, most urgent first."""
    inst = world.instance
    row = inst.quality.rows[amb.type]
    types = [c for c in range(inst.quality.n_call_types) if row[c] != INF]
    return sorted(types, key=lambda c: (-inst.theta[c], c))


def ambulance_deficit(world, amb: AmbulanceState, base_index: int, call_type: int, table: IntensityTable,
                      delta: float = DEFAULT_DELTA, alpha: float = DEFAULT_ALPHA, mode: str = "poisson") -> int:
    """Expected shortfall at a base: demand quantile minus ambulances forecast there in time."""
    inst = world.instance
    base = inst.facilities.bases[base_index]
    arrive = world.clock + travel_time(amb.loc_f, base.loc, world.clock, world.geo)
    if mode == "poisson":
        q = poisson_quantile(mean_count_over_window(table, base_index, call_type, arrive, arrive + delta), alpha)
    elif mode == "max":
        q = max_count_over_window(table, base_index, call_type, arrive, arrive + delta)
    else:
        raise ValueError(f"unknown demand mode {mode!r}")
    supply = 0
    for k in world.fleet:
        if k.id == amb.id or k.base_id != base.id or k.t_b > arrive:
            continue
        if inst.quality.rows[k.type][call_type] == INF:
            continue
        supply += 1
    return q - supply


class BestBaseRule:
    """Send the ambulance where the most urgent forecast shortfall is.

    ``table`` must be indexed by base position (see :func:`aggregate_by_base`).
    In ``mode="max"`` its entries are per-window call caps instead of rates.
    """

    name = "bbr"

    def __init__(self, table: IntensityTable, delta: float = DEFAULT_DELTA, alpha: float = DEFAULT_ALPHA,
                 mode: str = "poisson"):
        if delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if mode not in ("poisson", "max"):
            raise ValueError(f"unknown demand mode {mode!r}")
        self.table, self.delta, self.alpha, self.mode = table, delta, alpha, mode

    def provisional(self, world, amb: AmbulanceState) -> int:
        return world.instance.facilities.closest_base(amb.loc_f, world.geo).id

    def choose(self, world, amb: AmbulanceState) -> int:
        bases = world.instance.facilities.bases
        if not bases:
            raise ValueError("no bases")
        if self.table.n_cells != len(bases):
            raise ValueError("intensity table must have one cell per base")
        order = sorted(range(len(bases)), key=lambda i: bases[i].id)
        best_global = None
        for c in priority_types(world, amb):
            best_here = None
            for i in order:
                d = ambulance_deficit(world, amb, i, c, self.table, self.delta, self.alpha, self.mode)
                if best_here is None or d > best_here[0]:
                    best_here = (d, i)
            if best_here[0] > 0:
                return bases[best_here[1]].id
            if best_global is None or best_here[0] > best_global[0]:
                best_global = best_here
        return bases[best_global[1]].id


def make_rule(kind: str, **kw):
    kind = kind.lower()
    if kind == "hbr":
        return HomeBaseRule(kw.get("home"))
    if kind == "cbr":
        return ClosestBaseRule()
    if kind == "bbr":
        return BestBaseRule(kw["table"], kw.get("delta", DEFAULT_DELTA), kw.get("alpha", DEFAULT_ALPHA),
                            kw.get("mode", "poisson"))
    raise ValueError(f"unknown base rule {kind!r}")

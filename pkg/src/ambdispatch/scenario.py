"""Call-process calibration and sampling, and the rollout decision rule.

A rollout decision evaluates every first-stage candidate by applying it to a
copy of the world and letting a base heuristic serve a batch of sampled
futures; the candidate with the smallest immediate cost plus mean future
cost wins. All candidates see the same sampled futures.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geo import Location
from .model import Call, IncompatibleError
from .reassign import ClosestBaseRule, IntensityTable, window_overlaps
from .simulator import ConfigurationError, Decision, Dispatch, Enqueue, StallError, ToBase, World, run

SCENARIO_ID_OFFSET = 1_000_000_000


@dataclass(frozen=True)
class GridSpec:
    """Rectangular region cut into nx * ny half-open cells; periodic time windows."""

    x0: float
    y0: float
    x1: float
    y1: float
    nx: int
    ny: int
    window: float
    period: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("empty bounding box")
        if self.window <= 0:
            raise ValueError("window length must be positive")
        m = self.period / self.window
        if abs(m - round(m)) > 1e-9 or round(m) < 1:
            raise ValueError("period must be a whole number of windows")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_windows(self) -> int:
        return int(round(self.period / self.window))

    @property
    def dx(self) -> float:
        return (self.x1 - self.x0) / self.nx

    @property
    def dy(self) -> float:
        return (self.y1 - self.y0) / self.ny

    def cell_of(self, x: float, y: float) -> Optional[int]:
        """Cell index (row-major over x) or None outside the box."""
        if not (self.x0 <= x < self.x1 and self.y0 <= y < self.y1):
            return None
        i = min(int((x - self.x0) / self.dx), self.nx - 1)
        j = min(int((y - self.y0) / self.dy), self.ny - 1)
        return j * self.nx + i

    def cell_bounds(self, cell: int) -> tuple[float, float, float, float]:
        j, i = divmod(cell, self.nx)
        return (self.x0 + i * self.dx, self.y0 + j * self.dy, self.x0 + (i + 1) * self.dx, self.y0 + (j + 1) * self.dy)

    def centroids(self) -> np.ndarray:
        out = np.empty((self.n_cells, 2))
        for c in range(self.n_cells):
            a, b, x, y = self.cell_bounds(c)
            out[c] = ((a + x) / 2, (b + y) / 2)
        return out

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def estimate_intensities(events: Sequence[tuple[float, float, float, int]], grid: GridSpec, n_types: int,
                         n_periods: Optional[int] = None) -> IntensityTable:
    """Per (cell, window, type) event counts divided by the number of observed periods.

    ``events`` are (time, x, y, call type) with times measured from the start
    of the first period. Events outside the box are ignored.
    """
    counts = np.zeros((grid.n_cells, grid.n_windows, n_types))
    t_max = 0.0
    for t, x, y, c in events:
        cell = grid.cell_of(x, y)
        t_max = max(t_max, t)
        if cell is None:
            continue
        w = int(math.floor(t / grid.window)) % grid.n_windows
        counts[cell, w, int(c)] += 1
    if n_periods is None:
        n_periods = max(1, math.ceil(t_max / grid.period)) if events else 1
    if n_periods < 1:
        raise ValueError("need at least one observed period")
    return IntensityTable(counts / n_periods, grid.window, grid.period, grid.centroids())


@dataclass(frozen=True)
class CallProfile:
    """Service characteristics of one call type. Durations in seconds."""

    time_on_scene: float = 1800.0
    p_hospital: float = 0.0
    time_at_hospital: float = 0.0
    p_cleaning: float = 0.0
    cleaning_time: float = 0.0


def sample_scenario(table: IntensityTable, grid: GridSpec, t_start: float, t_end: float, rng: np.random.Generator,
                    profiles: Sequence[CallProfile], first_id: int = SCENARIO_ID_OFFSET) -> list[Call]:
    """Poisson calls on (t_start, t_end], uniform in time within each window overlap and in space within cells."""
    if t_end <= t_start:
        raise ValueError("scenario end must follow its start")
    times, cells, types = [], [], []
    for k, (w, frac) in enumerate(_absolute_overlaps(t_start, t_end, grid.window, grid.n_windows)):
        lo, hi, widx = w
        counts = rng.poisson(table.rates[:, widx, :] * frac)
        n = int(counts.sum())
        if n == 0:
            continue
        flat = np.repeat(np.arange(counts.size), counts.ravel())
        c_idx, t_idx = np.divmod(flat, counts.shape[1])
        times.append(rng.uniform(lo, hi, n))
        cells.append(c_idx)
        types.append(t_idx)
    if not times:
        return []
    t = np.concatenate(times)
    cell = np.concatenate(cells)
    typ = np.concatenate(types)
    n = len(t)
    u = rng.random((n, 4))
    order = np.lexsort((np.arange(n), t))
    out = []
    for rank, i in enumerate(order):
        a, b, x, y = grid.cell_bounds(int(cell[i]))
        p = profiles[int(typ[i])]
        hosp = bool(u[i, 2] < p.p_hospital)
        clean = bool(u[i, 3] < p.p_cleaning)
        out.append(Call(
            id=first_id + rank, t=float(t[i]), loc=Location(a + u[i, 0] * (x - a), b + u[i, 1] * (y - b)),
            type=int(typ[i]), time_on_scene=p.time_on_scene, needs_hospital=hosp,
            time_at_hospital=p.time_at_hospital if hosp else 0.0, needs_cleaning=clean,
            cleaning_time=p.cleaning_time if clean else 0.0,
        ))
    return out


def _absolute_overlaps(start: float, end: float, window: float, n_windows: int):
    """((lo, hi, window index), fraction) for each window piece of (start, end]."""
    k = math.floor(start / window)
    while k * window < end:
        lo = max(start, k * window)
        hi = min(end, (k + 1) * window)
        if hi > lo:
            yield (lo, hi, k % n_windows), (hi - lo) / window
        k += 1


def expected_count(table: IntensityTable, t_start: float, t_end: float) -> float:
    total = 0.0
    for w, frac in window_overlaps(t_start, t_end, table.window, table.n_windows):
        total += table.rates[:, w, :].sum() * frac
    return total


# ---------------------------------------------------------------------------
# Rollout


@dataclass
class RolloutConfig:
    n_scenarios: int = 25
    horizon: float = 7200.0
    seed: int = 0
    combinatorial_hospitals: bool = False

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ValueError("need at least one scenario")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass
class CallProcess:
    table: IntensityTable
    grid: GridSpec
    profiles: Sequence[CallProfile]

    def sample(self, t_start: float, t_end: float, rng: np.random.Generator) -> list[Call]:
        return sample_scenario(self.table, self.grid, t_start, t_end, rng, self.profiles)


def enumerate_first_stage(world: World, call: Optional[Call] = None, amb_id: Optional[int] = None,
                          combinatorial_hospitals: bool = False) -> list[Decision]:
    """Candidate decisions at a call arrival (``call``) or a service completion (``amb_id``)."""
    inst = world.instance

    def hospitals(c: Call):
        if not c.needs_hospital or not combinatorial_hospitals or c.hospital is not None:
            return [None]
        return [h.id for h in inst.facilities.hospitals if h.admits(c.type)]

    if call is not None:
        out: list[Decision] = [Enqueue(call.id)]
        for a in world.fleet:
            if a.t_f <= world.clock and world.can_serve(a, call):
                out += [Dispatch(a.id, call.id, h) for h in hospitals(call)]
        return out
    if amb_id is None:
        raise ValueError("need an event")
    amb = world.amb[amb_id]
    out = [ToBase(amb_id, b.id) for b in sorted(inst.facilities.bases, key=lambda b: b.id)]
    for q in sorted(world.queue, key=lambda c: (c.t, c.id)):
        if world.can_serve(amb, q):
            out += [Dispatch(amb_id, q.id, h) for h in hospitals(q)]
    return out


def _restrict(call: Call, allowed: frozenset) -> Call:
    cur = call.restricted_to
    return dataclasses.replace(call, restricted_to=allowed if cur is None else cur & allowed)


def apply_with_restrictions(world: World, d: Decision, busy_before: frozenset) -> None:
    """Apply a first-stage decision, tagging the queue as the scenario rules require.

    An enqueued call may only go to an ambulance busy at decision time; a
    ToBase for ambulance j removes j from every queued call's allowed set.
    """
    if isinstance(d, Enqueue):
        c = _restrict(world.calls[d.call], busy_before)
        world.calls[c.id] = c
        world.apply(d)
        world.queue = [c if q.id == c.id else q for q in world.queue]
    elif isinstance(d, ToBase):
        world.apply(d)
        everyone = frozenset(a.id for a in world.fleet)
        new = []
        for q in world.queue:
            q2 = _restrict(q, everyone - {d.ambulance})
            world.calls[q2.id] = q2
            new.append(q2)
        world.queue = new
    else:
        world.apply(d)


def augment_scenario(raw: Sequence[Call], world_after: World) -> list[Call]:
    """Second-stage call list: the carried-over queue (with restrictions) then the sampled future."""
    return sorted(list(world_after.queue) + list(raw), key=lambda c: (c.t, c.id))


def immediate_cost(world: World, d: Decision) -> float:
    if isinstance(d, Dispatch):
        return world.records[d.call].allocation_cost
    return 0.0


def evaluate_candidate(world: World, d: Decision, scenarios: Sequence[Sequence[Call]],
                       heuristic: Callable[[], object]) -> float:
    """Immediate cost plus mean second-stage cost; inf if the heuristic cannot serve a scenario."""
    busy = world.busy_ids()
    first = world.clone()
    try:
        apply_with_restrictions(first, d, busy)
    except (ValueError, IncompatibleError):
        return math.inf
    f = immediate_cost(first, d)
    first.records = {}
    total = 0.0
    for raw in scenarios:
        w = first.clone()
        w.reassignment = ClosestBaseRule()
        calls = augment_scenario(raw, w)
        w.queue = []
        try:
            res = run(w.instance, calls, heuristic(), world=w, record_trips=False)
        except (StallError, ConfigurationError, IncompatibleError):
            return math.inf
        total += res.total_cost()
    return f + total / len(scenarios)


def rollout_decide(world: World, candidates: Sequence[Decision], process: CallProcess, heuristic: Callable[[], object],
                   config: RolloutConfig, rng: np.random.Generator) -> tuple[Decision, list[float]]:
    """Candidate minimizing immediate cost plus mean heuristic cost over shared sampled futures."""
    if not candidates:
        raise ValueError("no candidate decisions")
    if len(candidates) == 1:
        return candidates[0], [0.0]
    t0 = world.clock
    scenarios = [process.sample(t0, t0 + config.horizon, rng) for _ in range(config.n_scenarios)]
    values = [evaluate_candidate(world, d, scenarios, heuristic) for d in candidates]
    best = min(range(len(values)), key=lambda i: (values[i], i))
    if math.isinf(values[best]):
        raise StallError("every first-stage candidate is infeasible")
    return candidates[best], values


class RolloutPolicy:
    """Online policy: one rollout decision per event, base heuristic in the second stage."""

    forecast_busy = False

    def __init__(self, heuristic: Callable[[], object], process: CallProcess, config: RolloutConfig = RolloutConfig()):
        self.heuristic = heuristic
        self.process = process
        self.config = config
        self.name = "rollout-" + getattr(heuristic(), "name", "h")
        self._n = 0

    def prepare(self, world: World, calls: Sequence[Call]) -> None:
        self._n = 0

    def _rng(self) -> np.random.Generator:
        self._n += 1
        return np.random.default_rng([self.config.seed, self._n])

    def _decide(self, world: World, candidates: list[Decision]) -> list[Decision]:
        d, _ = rollout_decide(world, candidates, self.process, self.heuristic, self.config, self._rng())
        apply_with_restrictions(world, d, world.busy_ids())
        return [d]

    def on_call(self, world: World, call: Call) -> list[Decision]:
        return self._decide(world, enumerate_first_stage(world, call=call,
                                                         combinatorial_hospitals=self.config.combinatorial_hospitals))

    def on_free(self, world: World, amb_id: int) -> list[Decision]:
        return self._decide(world, enumerate_first_stage(world, amb_id=amb_id,
                                                         combinatorial_hospitals=self.config.combinatorial_hospitals))

"""Ambulance selection policies.

Every policy reacts to two events, a call arrival and a service completion,
and returns the decisions it applied to the world.
"""
from __future__ import annotations

import bisect
from typing import Optional, Sequence

from .model import INF, AmbulanceState, Call, cost_key, response_time_if_assigned
from .simulator import Decision, Dispatch, Enqueue, World


def allocation_cost(world: World, amb: AmbulanceState, call: Call, at: Optional[float] = None) -> float:
    """Cost of sending ``amb`` to ``call`` at time ``at`` (after its forecast rides)."""
    inst = world.instance
    m = inst.quality.rows[amb.type][call.type]
    if m == INF:
        return INF
    at = world.clock if at is None else max(at, call.t)
    return inst.theta[call.type] * response_time_if_assigned(amb, call, at, world.geo) + m


def penalized_wait(world: World, call: Call) -> float:
    return world.instance.theta[call.type] * max(0.0, world.clock - call.t)


def queue_by_penalized_wait(world: World) -> list[Call]:
    return sorted(world.queue, key=lambda c: (-cost_key(penalized_wait(world, c)), c.t, c.id))


def rank_key(world: World, amb: AmbulanceState) -> tuple:
    return (world.instance.rank[amb.type], amb.id)


def best_set(world: World, call: Call, ambulances: Sequence[AmbulanceState],
             at: Optional[float] = None) -> tuple[float, list[AmbulanceState]]:
    """Minimal allocation cost and its attaining ambulances, least advanced first."""
    best = INF
    winners: list[AmbulanceState] = []
    for a in ambulances:
        if not world.can_serve(a, call):
            continue
        c = cost_key(allocation_cost(world, a, call, at))
        if c < best:
            best, winners = c, [a]
        elif c == best and c != INF:
            winners.append(a)
    winners.sort(key=lambda a: rank_key(world, a))
    return best, winners


class _Base:
    name = "base"
    forecast_busy = False

    def prepare(self, world: World, calls: Sequence[Call]) -> None:
        pass

    def _dispatch(self, world: World, amb: AmbulanceState, call: Call) -> Decision:
        return world.apply(Dispatch(amb.id, call.id))


class ClosestAvailable(_Base):
    """Closest available compatible ambulance; the queue is served oldest-penalty first."""

    name = "ca"

    def _closest(self, world: World, call: Call) -> Optional[AmbulanceState]:
        best, best_key = None, None
        for a in world.fleet:
            if a.t_f > world.clock or not world.can_serve(a, call):
                continue
            key = (cost_key(response_time_if_assigned(a, call, world.clock, world.geo)),) + rank_key(world, a)
            if best_key is None or key < best_key:
                best, best_key = a, key
        return best

    def on_call(self, world: World, call: Call) -> list[Decision]:
        a = self._closest(world, call)
        if a is None:
            return [world.apply(Enqueue(call.id))]
        return [self._dispatch(world, a, call)]

    def on_free(self, world: World, amb_id: int) -> list[Decision]:
        out = []
        for call in queue_by_penalized_wait(world):
            a = self._closest(world, call)
            if a is not None:
                out.append(self._dispatch(world, a, call))
        return out


class BestMyopic(_Base):
    """Cheapest allocation over the whole fleet, forecasting busy ambulances."""

    name = "bm"
    forecast_busy = True

    def select(self, world: World, call: Call) -> AmbulanceState:
        cost, winners = best_set(world, call, world.fleet)
        if not winners:
            raise ValueError(f"no compatible ambulance for call {call.id}")
        return winners[0]

    def on_call(self, world: World, call: Call) -> list[Decision]:
        return [self._dispatch(world, self.select(world, call), call)]

    def on_free(self, world: World, amb_id: int) -> list[Decision]:
        return [self._dispatch(world, self.select(world, c), c) for c in queue_by_penalized_wait(world)]


class GreedyPriority1(_Base):
    """Serve the queue in decreasing penalized wait, sending only a best ambulance that is free now.

    With ``available_only`` the best set is taken among free ambulances.
    """

    def __init__(self, available_only: bool = False):
        self.available_only = available_only
        self.name = "ghcap1" if available_only else "ghp1"

    def _process(self, world: World) -> list[Decision]:
        out = []
        for call in queue_by_penalized_wait(world):
            pool = [a for a in world.fleet if a.t_f <= world.clock] if self.available_only else world.fleet
            _, winners = best_set(world, call, pool)
            free = [a for a in winners if a.t_f <= world.clock]
            if free:
                out.append(self._dispatch(world, free[0], call))
        return out

    def on_call(self, world: World, call: Call) -> list[Decision]:
        return [world.apply(Enqueue(call.id))] + self._process(world)

    def on_free(self, world: World, amb_id: int) -> list[Decision]:
        return self._process(world)


class GreedyPriority2(_Base):
    """Repeatedly serve the queued call whose best allocation is the most expensive."""

    def __init__(self, available_only: bool = False):
        self.available_only = available_only
        self.name = "ghcap2" if available_only else "ghp2"

    def _cost(self, world: World, amb: AmbulanceState, call: Call) -> float:
        if not world.can_serve(amb, call):
            return INF
        if self.available_only and amb.t_f > world.clock:
            return INF
        return cost_key(allocation_cost(world, amb, call))

    def _best(self, world: World, row: dict) -> tuple[float, list[AmbulanceState]]:
        m = min(row.values(), default=INF)
        if m == INF:
            return INF, []
        winners = [world.amb[j] for j, c in row.items() if c == m]
        winners.sort(key=lambda a: rank_key(world, a))
        return m, winners

    def _process(self, world: World) -> list[Decision]:
        now = world.clock
        remaining = sorted(world.queue, key=lambda c: c.id)
        costs = {c.id: {a.id: self._cost(world, a, c) for a in world.fleet} for c in remaining}
        best = {c.id: self._best(world, costs[c.id]) for c in remaining}
        out = []
        while remaining:
            def key(c):
                m, winners = best[c.id]
                has_free = any(a.t_f <= now for a in winners)
                return (-m, not has_free, c.id)

            call = min(remaining, key=key)
            remaining.remove(call)
            _, winners = best[call.id]
            free = [a for a in winners if a.t_f <= now]
            if not free:
                continue
            amb = free[0]
            out.append(self._dispatch(world, amb, call))
            # the chosen ambulance now carries a new ride: refresh its column
            for c in remaining:
                if costs[c.id][amb.id] == INF:
                    continue
                costs[c.id][amb.id] = self._cost(world, amb, c)
                if any(a is amb for a in best[c.id][1]):
                    best[c.id] = self._best(world, costs[c.id])
        return out

    def on_call(self, world: World, call: Call) -> list[Decision]:
        return [world.apply(Enqueue(call.id))] + self._process(world)

    def on_free(self, world: World, amb_id: int) -> list[Decision]:
        return self._process(world)


class NonMyopic(_Base):
    """Look at calls due before a busy best ambulance frees up and reserve it for the worst of them.

    Needs the call list in advance (scenario mode). Reservations depart no
    earlier than the reserved call's arrival.
    """

    name = "nm"
    forecast_busy = True

    def __init__(self):
        self._calls: list[Call] = []
        self._times: list[float] = []

    def prepare(self, world: World, calls: Sequence[Call]) -> None:
        self._calls = sorted(calls, key=lambda c: (c.t, c.id))
        self._times = [c.t for c in self._calls]

    def _due_before(self, world: World, t: float, exclude: int) -> list[Call]:
        hi = bisect.bisect_right(self._times, t)
        out = [c for c in self._calls[:hi] if c.id != exclude and c.id not in world.records]
        seen = {c.id for c in out}
        out += [c for c in world.queue if c.id != exclude and c.t <= t and c.id not in seen]
        return out

    def _allocate(self, world: World, call: Call) -> list[Decision]:
        now = world.clock
        cost_i, winners = best_set(world, call, world.fleet)
        if not winners:
            raise ValueError(f"no compatible ambulance for call {call.id}")
        free = [a for a in winners if a.t_f <= now]
        if free:
            return [self._dispatch(world, free[0], call)]
        out = []
        for amb in winners:
            worst, worst_cost = None, None
            for k in self._due_before(world, amb.t_f, call.id):
                if not world.can_serve(amb, k):
                    continue
                cost_k, best_k = best_set(world, k, world.fleet, at=max(now, k.t))
                if cost_k <= cost_i or not any(a is amb for a in best_k):
                    continue
                if worst is None or cost_k > worst_cost:
                    worst, worst_cost = k, cost_k
            if worst is None:
                return out + [self._dispatch(world, amb, call)]
            out.append(self._dispatch(world, amb, worst))
        if all(c.id != call.id for c in world.queue):
            out.append(world.apply(Enqueue(call.id)))
        return out

    def on_call(self, world: World, call: Call) -> list[Decision]:
        if not self._calls:
            self.prepare(world, list(world.calls.values()))
        return self._allocate(world, call)

    def on_free(self, world: World, amb_id: int) -> list[Decision]:
        out = []
        for call in sorted(world.queue, key=lambda c: (c.t, c.id)):
            if call.id not in world.records:
                out += self._allocate(world, call)
        return out


POLICIES = {
    "ca": ClosestAvailable,
    "bm": BestMyopic,
    "nm": NonMyopic,
    "ghp1": lambda: GreedyPriority1(False),
    "ghcap1": lambda: GreedyPriority1(True),
    "ghp2": lambda: GreedyPriority2(False),
    "ghcap2": lambda: GreedyPriority2(True),
}


def make_policy(name: str):
    try:
        return POLICIES[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None

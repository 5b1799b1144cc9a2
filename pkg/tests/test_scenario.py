import math

import numpy as np
import pytest

from ambdispatch.geo import Location
from ambdispatch.heuristics import make_policy
from ambdispatch.model import Call
from ambdispatch.reassign import IntensityTable
from ambdispatch.scenario import (
    CallProcess,
    CallProfile,
    GridSpec,
    RolloutConfig,
    RolloutPolicy,
    apply_with_restrictions,
    augment_scenario,
    enumerate_first_stage,
    estimate_intensities,
    evaluate_candidate,
    expected_count,
    rollout_decide,
    sample_scenario,
)
from ambdispatch.simulator import Dispatch, Enqueue, ToBase, World, run

from helpers import check_conservation, small_instance

ALS, BLS = 0, 1
GRID = GridSpec(0.0, 0.0, 10.0, 10.0, 2, 2, 3600.0, 7 * 86400.0)
PROFILES = [CallProfile(600.0)] * 4


def test_grid_cells_are_half_open():
    assert GRID.cell_of(0.0, 0.0) == 0
    assert GRID.cell_of(5.0, 0.0) == 1
    assert GRID.cell_of(4.999, 5.0) == 2
    assert GRID.cell_of(10.0, 10.0) is None
    assert GRID.cell_of(-0.1, 1.0) is None


def test_grid_rejects_fractional_windows():
    with pytest.raises(ValueError):
        GridSpec(0, 0, 1, 1, 1, 1, 7000.0, 86400.0)


def test_estimate_from_no_events():
    assert not estimate_intensities([], GRID, 4).rates.any()


def test_estimate_mean_over_periods():
    week = 7 * 86400.0
    events = [(p * week + 100.0 + i, 1.0, 1.0, 2) for p in range(5) for i in range(2)]
    table = estimate_intensities(events, GRID, 4, n_periods=5)
    assert table.rates[0, 0, 2] == 2.0
    assert table.rates.sum() == 2.0


def test_boundary_event_goes_to_the_upper_cell():
    table = estimate_intensities([(0.0, 5.0, 5.0, 0)], GRID, 1)
    assert table.rates[3, 0, 0] == 1.0


def _table(rate):
    return IntensityTable(np.full((GRID.n_cells, GRID.n_windows, 4), rate), GRID.window, GRID.period)


def test_zero_intensity_gives_no_calls():
    assert sample_scenario(_table(0.0), GRID, 0.0, 7200.0, np.random.default_rng(0), PROFILES) == []


def test_sampling_is_deterministic_under_a_seed():
    a = sample_scenario(_table(0.3), GRID, 100.0, 9000.0, np.random.default_rng(4), PROFILES)
    b = sample_scenario(_table(0.3), GRID, 100.0, 9000.0, np.random.default_rng(4), PROFILES)
    assert a == b and a
    assert [c.t for c in a] == sorted(c.t for c in a)
    assert all(100.0 < c.t <= 9000.0 for c in a)
    assert all(GRID.cell_of(*c.loc) is not None for c in a)


def test_sample_count_matches_expectation():
    table = _table(0.05)
    t0, t1 = 1800.0, 1800.0 + 3 * 3600.0 + 900.0
    mean = expected_count(table, t0, t1)
    assert mean == pytest.approx(0.05 * 16 * 3.25)
    rng = np.random.default_rng(8)
    counts = np.array([len(sample_scenario(table, GRID, t0, t1, rng, PROFILES)) for _ in range(10_000)])
    se = math.sqrt(mean / len(counts))
    assert abs(counts.mean() - mean) < 3 * se


def test_hospital_and_cleaning_draws_follow_the_profile():
    prof = [CallProfile(600.0, p_hospital=1.0, time_at_hospital=300.0, p_cleaning=0.0)] * 4
    calls = sample_scenario(_table(0.5), GRID, 0.0, 7200.0, np.random.default_rng(1), prof)
    assert calls and all(c.needs_hospital and not c.needs_cleaning for c in calls)
    assert all(c.time_at_hospital == 300.0 for c in calls)


# -- first stage ---------------------------------------------------------------

def _w(bases, fleet, **kw):
    return World(small_instance(bases, fleet, **kw))


def test_call_event_candidates_combinatorial():
    w = _w([(0, 0)], [(ALS, 0), (ALS, 0)], hospitals=((10, 0), (0, 10)))
    c = Call(0, 0.0, Location(1, 1), 0, needs_hospital=True)
    w.register([c])
    got = enumerate_first_stage(w, call=c, combinatorial_hospitals=True)
    assert len(got) == 1 + 4
    assert got[0] == Enqueue(0)
    assert len(enumerate_first_stage(w, call=c)) == 1 + 2


def test_completion_candidates_with_empty_queue():
    w = _w([(0, 0), (5, 0), (9, 0)], [(ALS, 0)])
    assert enumerate_first_stage(w, amb_id=0) == [ToBase(0, 0), ToBase(0, 1), ToBase(0, 2)]


def test_completion_candidates_include_compatible_queued_calls():
    w = _w([(0, 0)], [(BLS, 0)])
    calls = [Call(0, 0.0, Location(1, 0), 2), Call(1, 0.0, Location(2, 0), 3)]
    w.register(calls)
    w.queue = list(calls)
    assert enumerate_first_stage(w, amb_id=0) == [ToBase(0, 0), Dispatch(0, 0), Dispatch(0, 1)]


def test_no_available_ambulance_only_enqueue():
    w = _w([(0, 0)], [(ALS, 0)])
    w.amb[0].t_f = 100.0
    c = Call(0, 0.0, Location(1, 1), 0)
    w.register([c])
    assert enumerate_first_stage(w, call=c) == [Enqueue(0)]


def test_dispatch_keeps_queue_and_appends_future():
    w = _w([(0, 0)], [(ALS, 0), (ALS, 0)])
    old, new = Call(0, 0.0, Location(1, 0), 0), Call(1, 5.0, Location(2, 0), 0)
    w.register([old, new])
    w.queue = [old]
    w.clock = 5.0
    apply_with_restrictions(w, Dispatch(0, 1), w.busy_ids())
    future = [Call(99, 50.0, Location(3, 0), 1)]
    assert [c.id for c in augment_scenario(future, w)] == [0, 99]


def test_enqueue_restricts_to_busy_ambulances():
    w = _w([(0, 0)], [(ALS, 0), (ALS, 0)])
    w.amb[1].t_f = 100.0
    c = Call(0, 0.0, Location(1, 0), 0)
    w.register([c])
    apply_with_restrictions(w, Enqueue(0), w.busy_ids())
    assert w.queue[0].restricted_to == frozenset({1})


def test_to_base_excludes_the_ambulance_from_the_queue():
    w = _w([(0, 0), (9, 0)], [(ALS, 0), (ALS, 1)])
    c = Call(0, 0.0, Location(1, 0), 0)
    w.register([c])
    w.queue = [c]
    apply_with_restrictions(w, ToBase(0, 1), w.busy_ids())
    assert w.queue[0].restricted_to == frozenset({1})


# -- rollout decisions -------------------------------------------------------------

class FixedFuture:
    """Stand-in call process that returns the same future every time."""

    def __init__(self, calls):
        self.calls = calls

    def sample(self, t0, t1, rng):
        return [c for c in self.calls if t0 < c.t <= t1]


def test_single_candidate_needs_no_simulation():
    w = _w([(0, 0)], [(ALS, 0)])
    d, values = rollout_decide(w, [Enqueue(0)], FixedFuture([]), lambda: make_policy("bm"), RolloutConfig(), None)
    assert d == Enqueue(0)


def test_empty_future_reduces_to_the_cheapest_dispatch():
    w = _w([(0, 0), (50, 0)], [(ALS, 0), (ALS, 1)])
    c = Call(0, 0.0, Location(40, 0), 0)
    w.register([c])
    cands = enumerate_first_stage(w, call=c)
    d, values = rollout_decide(w, cands, FixedFuture([]), lambda: make_policy("bm"), RolloutConfig(5), None)
    assert d == Dispatch(1, 0)
    assert math.isinf(values[0])  # nobody is busy, so an enqueued call could never be served
    assert values[1:] == [160.0, 40.0]


def test_enqueue_wins_when_an_urgent_call_is_imminent():
    # idle ALS at the origin; BLS busy until t=50 at (100,0).
    # Low-priority call at (100,0) now; an urgent ALS-only call always lands at the origin at t=10.
    w = _w([(0, 0), (100, 0)], [(ALS, 0), (BLS, 1)])
    b = w.amb[1]
    b.t_f, b.loc_f, b.t_b, b.loc_b, b.pending_free = 50.0, Location(100, 0), 50.0, Location(100, 0), True
    low = Call(0, 0.0, Location(100, 0), 3, time_on_scene=1000.0)
    urgent = Call(1_000_000_000, 10.0, Location(0, 0), 0, time_on_scene=1000.0)
    w.register([low])
    cands = enumerate_first_stage(w, call=low)
    assert cands == [Enqueue(0), Dispatch(0, 0)]
    d, values = rollout_decide(w, cands, FixedFuture([urgent]), lambda: make_policy("bm"), RolloutConfig(3), None)
    # enqueue: BLS takes the low call at t=50 (cost 50), ALS serves the urgent one at once (0)
    # dispatch: 100 + 1500 now, then the ALS reaches the urgent call at 1200: 4 * 1190
    assert values == [50.0, 1600.0 + 4 * 1190.0]
    assert d == Enqueue(0)


def test_candidate_value_is_order_independent():
    inst = small_instance([(0, 0), (8, 0)], [(ALS, 0), (BLS, 1), (BLS, 0)], hospitals=((4, 4),))
    proc = CallProcess(_table(0.002), GRID, [CallProfile(300.0, 0.5, 200.0)] * 4)
    w = World(inst)
    c = Call(0, 0.0, Location(3, 3), 1, time_on_scene=300.0)
    w.register([c])
    rng = np.random.default_rng(0)
    scen = [proc.sample(0.0, 3600.0, rng) for _ in range(4)]
    cands = enumerate_first_stage(w, call=c)
    fwd = [evaluate_candidate(w, d, scen, lambda: make_policy("bm")) for d in cands]
    rev = [evaluate_candidate(w, d, scen, lambda: make_policy("bm")) for d in reversed(cands)][::-1]
    assert fwd == rev


def test_rollout_policy_runs_and_conserves():
    inst = small_instance([(0, 0), (10, 10)], [(ALS, 0), (BLS, 1), (BLS, 0)], hospitals=((5, 5),))
    proc = CallProcess(_table(0.01), GRID, [CallProfile(600.0, 0.5, 300.0, 0.2, 300.0)] * 4)
    calls = proc.sample(0.0, 4 * 3600.0, np.random.default_rng(2))
    calls = [Call(i, c.t, c.loc, c.type, c.time_on_scene, c.needs_hospital, c.time_at_hospital,
                  c.needs_cleaning, c.cleaning_time) for i, c in enumerate(calls)]
    pol = RolloutPolicy(lambda: make_policy("bm"), proc, RolloutConfig(3, 1800.0, seed=1))
    res = run(inst, calls, pol)
    check_conservation(inst, calls, res)
    again = run(inst, calls, RolloutPolicy(lambda: make_policy("bm"), proc, RolloutConfig(3, 1800.0, seed=1)))
    assert res.trips_jsonl() == again.trips_jsonl()

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ambdispatch.geo import Location
from ambdispatch.model import AmbulanceType, CallType, QualityMatrix
from ambdispatch.reassign import (
    BestBaseRule,
    ClosestBaseRule,
    HomeBaseRule,
    IntensityTable,
    aggregate_by_base,
    ambulance_deficit,
    max_count_over_window,
    mean_count_over_window,
    poisson_quantile,
    priority_types,
    window_overlaps,
)
from ambdispatch.simulator import World

from helpers import small_instance


def cdf_quantile(mean, alpha):
    k, p, cdf = 0, math.exp(-mean), math.exp(-mean)
    while cdf < alpha:
        k += 1
        p *= mean / k
        cdf += p
    return k


@pytest.mark.parametrize("mean,alpha,expected", [(0, 0.9, 0), (1, 0.9, 2), (5, 0.9, 8)])
def test_poisson_quantile_examples(mean, alpha, expected):
    assert poisson_quantile(mean, alpha) == expected


@given(st.floats(0, 60), st.floats(0.01, 0.999))
def test_poisson_quantile_matches_scipy(mean, alpha):
    q = poisson_quantile(mean, alpha)
    assert stats.poisson.cdf(q, mean) >= alpha - 1e-12
    if q > 0:
        assert stats.poisson.cdf(q - 1, mean) < alpha + 1e-12


def test_poisson_quantile_large_mean():
    assert poisson_quantile(2000.0, 0.9) == int(stats.poisson.ppf(0.9, 2000.0))


def test_poisson_quantile_validation():
    with pytest.raises(ValueError):
        poisson_quantile(-1, 0.5)
    with pytest.raises(ValueError):
        poisson_quantile(1, 1.0)


def _table(rates_per_window, window=100.0):
    r = np.asarray(rates_per_window, dtype=float).reshape(1, -1, 1)
    return IntensityTable(r, window, window * r.shape[1])


def test_mean_count_examples():
    assert mean_count_over_window(_table([2, 0]), 0, 0, 10.0, 60.0) == 1.0
    assert mean_count_over_window(_table([2, 4]), 0, 0, 50.0, 150.0) == 3.0
    assert mean_count_over_window(_table([0, 0]), 0, 0, 0.0, 500.0) == 0.0


def test_window_overlaps_wrap_the_period():
    assert window_overlaps(150.0, 250.0, 100.0, 2) == [(1, 0.5), (0, 0.5)]


@given(st.floats(0, 1000), st.floats(1, 500))
def test_mean_count_is_rate_times_length_when_constant(start, length):
    t = _table([3, 3, 3])
    assert mean_count_over_window(t, 0, 0, start, start + length) == pytest.approx(3 * length / 100.0)


def test_max_count_sums_touched_windows():
    caps = _table([4, 0, 2])
    assert max_count_over_window(caps, 0, 0, 50.0, 150.0) == 4
    assert max_count_over_window(caps, 0, 0, 50.0, 250.0) == 6


def test_aggregate_by_base_uses_nearest_base():
    rates = np.array([[[1.0]], [[2.0]], [[4.0]]])
    t = IntensityTable(rates, 10.0, 10.0, np.array([[0, 0], [9, 0], [11, 0]]))
    from helpers import UNIT_SPEED
    agg = aggregate_by_base(t, [Location(0, 0), Location(10, 0)], UNIT_SPEED)
    assert agg.rates[:, 0, 0].tolist() == [1.0, 6.0]


def _world(bases, fleet):
    return World(small_instance(bases, fleet))


def test_home_base_rule():
    w = _world([(0, 0), (50, 0)], [(0, 1)])
    amb = w.amb[0]
    amb.loc_f = Location(1, 0)
    assert HomeBaseRule().choose(w, amb) == 1
    assert HomeBaseRule({0: 0}).choose(w, amb) == 0


def test_closest_base_rule():
    w = _world([(0, 0), (10, 0), (-10, 0)], [(0, 0)])
    amb = w.amb[0]
    amb.loc_f = Location(0, 0)
    assert ClosestBaseRule().choose(w, amb) == 0
    amb.loc_f = Location(8, 0)
    assert ClosestBaseRule().choose(w, amb) == 1
    amb.loc_f = Location(-5, 0)  # equidistant from bases 0 and 2
    assert ClosestBaseRule().choose(w, amb) == 0


def test_priority_types_order():
    w = _world([(0, 0)], [(0, 0), (1, 0)])
    assert priority_types(w, w.amb[0]) == [0, 2, 1, 3]


def _demand(n_bases, per_base):
    r = np.zeros((n_bases, 1, 4))
    for b, rate in per_base.items():
        r[b, 0, :] = rate
    return IntensityTable(r, 86400.0, 86400.0)


def test_deficit_arithmetic():
    w = _world([(0, 0), (10, 0)], [(0, 0), (0, 1)])
    amb = w.amb[0]
    # quantile of Poisson(1) at 0.9 is 2; one other ALS sits at base 1
    table = _demand(2, {1: 1.0})
    assert ambulance_deficit(w, amb, 1, 0, table, delta=86400.0, alpha=0.9) == 1
    # no demand, three ambulances present
    w3 = _world([(0, 0), (10, 0)], [(0, 0), (0, 1), (0, 1), (0, 1)])
    assert ambulance_deficit(w3, w3.amb[0], 1, 0, _demand(2, {}), delta=86400.0) == -3


def test_best_base_single_base():
    w = _world([(0, 0)], [(0, 0)])
    assert BestBaseRule(_demand(1, {0: 5.0})).choose(w, w.amb[0]) == 0


def test_best_base_goes_to_positive_deficit():
    w = _world([(0, 0), (10, 0), (20, 0)], [(0, 0), (0, 0), (0, 2)])
    # base 1 has demand but nobody; base 2 has demand and one ambulance
    table = _demand(3, {1: 1.0, 2: 1.0})
    assert BestBaseRule(table, delta=86400.0).choose(w, w.amb[0]) == 1


def test_best_base_least_negative_when_nothing_is_short():
    w = _world([(0, 0), (10, 0), (20, 0)], [(0, 0), (0, 0), (0, 0), (0, 1), (0, 2), (0, 2)])
    # no demand: deficits are -(others at the base): base0 -2, base1 -1, base2 -2
    assert BestBaseRule(_demand(3, {}), delta=86400.0).choose(w, w.amb[0]) == 1


def test_best_base_validates_arguments():
    t = _demand(1, {})
    with pytest.raises(ValueError):
        BestBaseRule(t, delta=0)
    with pytest.raises(ValueError):
        BestBaseRule(t, alpha=1.0)
    with pytest.raises(ValueError):
        BestBaseRule(t, mode="median")


def test_best_base_scans_the_most_urgent_type_first():
    ct = [CallType(0, 4.0), CallType(1, 1.0)]
    at = [AmbulanceType(0, 0)]
    inst = small_instance([(0, 0), (10, 0), (20, 0)], [(0, 0)], quality=QualityMatrix([[0, 0]]), call_types=ct, amb_types=at)
    w = World(inst)
    r = np.zeros((3, 1, 2))
    r[2, 0, 1] = 30.0   # many low-priority calls near base 2
    r[1, 0, 0] = 1.0    # a few urgent ones near base 1
    table = IntensityTable(r, 86400.0, 86400.0)
    assert BestBaseRule(table, delta=86400.0).choose(w, w.amb[0]) == 1

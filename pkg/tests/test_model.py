import math

import pytest

from ambdispatch.geo import Location
from ambdispatch.model import (
    ALS_BLS_QUALITY,
    FOUR_TYPE_THETA,
    AmbulanceState,
    Call,
    CallType,
    IncompatibleError,
    QualityMatrix,
    compatible_ambulances,
    cost_allocation,
    cost_key,
    penalization,
    response_time_if_assigned,
)

from helpers import UNIT_SPEED

ALS, BLS = 0, 1


def test_penalization():
    assert penalization(100, CallType(0, 4.0)) == 400
    assert penalization(0, CallType(0, 4.0)) == 0
    assert penalization(250, CallType(1, 1.0)) == 250
    with pytest.raises(ValueError):
        penalization(-1, 1.0)


def test_cost_allocation_examples():
    th = FOUR_TYPE_THETA
    assert cost_allocation(ALS, 0, 60, ALS_BLS_QUALITY, th) == 240
    assert cost_allocation(BLS, 0, 60, ALS_BLS_QUALITY, th) == 6240
    assert cost_allocation(ALS, 3, 0, ALS_BLS_QUALITY, th) == 1500


def test_forbidden_pair():
    q = QualityMatrix([[0, 0], [None, 0]])
    with pytest.raises(IncompatibleError):
        cost_allocation(1, 0, 10, q, (4, 1))


def test_quality_matrix_validation():
    with pytest.raises(ValueError):
        QualityMatrix([[0, None], [0, None]])
    with pytest.raises(ValueError):
        QualityMatrix([[0, -1]])
    with pytest.raises(ValueError):
        QualityMatrix([[0, 0], [0]])


def _amb(i, typ, loc=(0, 0), t_f=0.0, loc_b=None, t_b=0.0):
    loc = Location(*loc)
    return AmbulanceState(i, typ, 0, loc, t_f, Location(*(loc_b or loc)), t_b, 0)


def test_compatible_ambulances():
    q = QualityMatrix([[0, 0], [None, 0]])
    fleet = [_amb(0, 0), _amb(1, 1), _amb(3, 1)]
    assert compatible_ambulances(Call(0, 0, Location(0, 0), 1), fleet, q) == [0, 1, 3]
    assert compatible_ambulances(Call(0, 0, Location(0, 0), 0), fleet, q) == [0]
    restricted = Call(0, 0, Location(0, 0), 1, restricted_to=frozenset({3}))
    assert compatible_ambulances(restricted, fleet, q) == [3]


def test_response_time_parked():
    amb = _amb(0, 0, loc=(10, 0))
    call = Call(0, 0.0, Location(0, 0), 0)
    assert response_time_if_assigned(amb, call, 0.0, UNIT_SPEED) == 10.0


def test_response_time_returning_halfway():
    # left (0,0) at t=0 heading to (20,0); at t=10 it is at (10,0)
    amb = _amb(0, 0, loc=(0, 0), t_f=0.0, loc_b=(20, 0), t_b=20.0)
    call = Call(0, 10.0, Location(10, 0), 0)
    assert response_time_if_assigned(amb, call, 10.0, UNIT_SPEED) == 0.0


def test_response_time_busy():
    now = 1000.0
    amb = _amb(0, 0, loc=(60, 0), t_f=now + 300, loc_b=(60, 0), t_b=now + 300)
    call = Call(0, now, Location(0, 0), 0)
    assert response_time_if_assigned(amb, call, now, UNIT_SPEED) == 360.0


def test_response_time_counts_waiting():
    amb = _amb(0, 0, loc=(5, 0))
    call = Call(0, 100.0, Location(0, 0), 0)
    assert response_time_if_assigned(amb, call, 130.0, UNIT_SPEED) == 35.0


def test_call_sequence_labels():
    base = dict(id=0, t=0.0, loc=Location(0, 0), type=0)
    assert Call(**base, needs_hospital=True, needs_cleaning=True).sequence == "C1"
    assert Call(**base, needs_hospital=True).sequence == "C2"
    assert Call(**base, needs_cleaning=True).sequence == "C3"
    assert Call(**base).sequence == "C4"


def test_cost_key_ties_float_noise():
    assert cost_key(0.1 + 0.2) == cost_key(0.3)
    assert cost_key(1.0) != cost_key(1.001)
    assert math.isinf(cost_key(math.inf))

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from railforge import build_catalog, parse_instance, route_all
from railforge.anneal import initial_solution, mandatory_design, potential_services
from railforge.energy import PenaltyConfig, energy
from railforge.routing import (
    CyclicAssignmentError, DesignError, FlowState, InfeasibleRoutingError, ServiceDesign, check_design,
    design_violations, itinerary_of, propagate_flows,
)

from conftest import tiny_doc


def _random_design(inst, cat, rnd):
    design = mandatory_design(inst, cat)
    for pair in potential_services(inst, cat):
        if rnd.random() < 0.3:
            design = design.with_service(pair, rnd.randrange(len(cat.get(pair))))
    return design


def _residual(inst, state):
    """Largest violation of f_ij = N_ij + sum of f_sj over yards s whose next yard toward j is i."""
    worst = 0
    for (i, j), f in state.car_flow.items():
        inflow = sum(state.car_flow.get((s, j), 0) for (s, jj), k in state.next_service.items() if jj == j and k == i)
        worst = max(worst, abs(f - inst.demand_volume.get((i, j), 0) - inflow))
    for (i, j), v in inst.demand_volume.items():
        if v > 0:
            worst = max(worst, abs(state.car_flow.get((i, j), 0) - v
                                   - sum(state.car_flow.get((s, j), 0)
                                         for (s, jj), k in state.next_service.items() if jj == j and k == i)))
    return worst


@given(seed=st.integers(0, 10_000), scale=st.sampled_from([None, 0.0, 1.0, 2.0]))
def test_route_all_flows_are_consistent(seed, scale):
    inst = parse_instance(tiny_doc(seed, 6, capacity_scale=scale, demand_density=0.5))
    cat = build_catalog(inst)
    design = _random_design(inst, cat, random.Random(seed))
    state = route_all(inst, cat, design, PenaltyConfig())
    assert _residual(inst, state) == 0
    # every assignment uses a provided service and every shipment arrives
    for (i, j), k in state.next_service.items():
        assert (i, k) in design.path_choice
    for (o, d), v in inst.demand_volume.items():
        if v > 0:
            seq = itinerary_of(state, o, d)
            assert seq[0] == o and seq[-1] == d and len(set(seq)) == len(seq)
    # service flow is the sum of the car flows routed onto it
    total = {}
    for (i, j), k in state.next_service.items():
        total[(i, k)] = total.get((i, k), 0) + state.car_flow.get((i, j), 0)
    for pair in design.path_choice:
        assert state.service_flow[pair] == total.get(pair, 0)
    # cars that board a service equal the cars on every leg of their itineraries
    legs = sum(v * (len(itinerary_of(state, o, d)) - 1) for (o, d), v in inst.demand_volume.items() if v > 0)
    assert sum(state.service_flow.values()) == legs


def test_propagate_by_hand():
    inst = parse_instance(tiny_doc(0, 3, line_density=1.0, demand_density=1.0))
    assignment = {}
    for (o, d) in inst.demand_volume:
        mid = ({"1", "2", "3"} - {o, d}).pop()
        assignment[(o, d)] = d if o != "1" else mid
    assignment.setdefault(("3", "2"), "2")
    car, svc = propagate_flows(inst, assignment)
    n = inst.demand_volume
    # flows from 1 detour through the third yard
    assert car[("2", "3")] == n[("2", "3")] + n[("1", "3")]
    assert car[("3", "2")] == n[("3", "2")] + n[("1", "2")]
    assert svc[("1", "2")] == n[("1", "3")]


def _one_demand_triangle():
    doc = tiny_doc(0, 3, line_density=1.0, demand_density=1.0)
    doc["demands"] = [d for d in doc["demands"] if (d["origin"], d["destination"]) == ("1", "3")]
    return parse_instance(doc)


def test_cycle_is_detected():
    inst = _one_demand_triangle()
    with pytest.raises(CyclicAssignmentError):
        propagate_flows(inst, {("1", "3"): "2", ("2", "3"): "1"})


def test_missing_next_is_stranded():
    inst = _one_demand_triangle()
    with pytest.raises(InfeasibleRoutingError):
        propagate_flows(inst, {("1", "3"): "2"})


def test_unreachable_design_raises(six_yard):
    inst, cat, pen = six_yard
    design = mandatory_design(inst, cat).without(("1", "2"))
    with pytest.raises(InfeasibleRoutingError):
        route_all(inst, cat, design, pen)


def test_design_rules(six_doc):
    six_doc["forced_services"] = [["1", "6"]]
    six_doc["forbidden_services"] = [["3", "6"]]
    six_doc["prescribed_paths"] = [{"pair": ["2", "5"], "yards": ["2", "4", "5"]}]
    inst = parse_instance(six_doc)
    cat = build_catalog(inst)
    base = mandatory_design(inst, cat)
    assert ("1", "6") in base.path_choice
    check_design(inst, cat, base)
    assert design_violations(inst, cat, base.without(("1", "6")))
    assert design_violations(inst, cat, base.with_service(("3", "6"), 0))
    assert design_violations(inst, cat, base.with_service(("2", "5"), 0))
    assert not design_violations(inst, cat, base.with_service(("2", "5"), cat.mandatory_index(("2", "5"))))
    assert design_violations(inst, cat, base.with_service(("2", "6"), 9))
    with pytest.raises(DesignError):
        check_design(inst, cat, base.with_service(("3", "6"), 0))


def test_design_identity():
    a = ServiceDesign({("1", "2"): 0, ("2", "3"): 1})
    b = ServiceDesign({("2", "3"): 1, ("1", "2"): 0})
    assert a == b and hash(a) == hash(b)
    assert a.with_service(("1", "3"), 0).without(("1", "3")) == a
    assert len(a) == 2


def test_flow_state_round_trip(six_yard):
    inst, cat, pen = six_yard
    _, state = initial_solution(inst, cat, pen)
    assert FlowState.from_dict(state.to_dict(inst)) == state


def test_strategy_two_itineraries(six_yard):
    inst, cat, pen = six_yard
    s1_design, s1 = initial_solution(inst, cat, pen)
    s2_design = s1_design.with_service(("3", "6"), 0)
    s2 = route_all(inst, cat, s2_design, pen)
    assert itinerary_of(s1, "3", "6") == ["3", "5", "6"]
    assert itinerary_of(s2, "3", "6") == ["3", "6"]
    assert itinerary_of(s2, "1", "6") == ["1", "2", "3", "6"]
    assert itinerary_of(s2, "2", "6") == ["2", "3", "6"]
    assert s2.service_flow[("3", "6")] == 190
    assert energy(inst, cat, s2_design, s2, pen).feasible


def test_routing_relieves_overloaded_link(six_yard):
    """Flows through (2,3) and (3,5) stay within their 4-train limit."""
    inst, cat, pen = six_yard
    design = mandatory_design(inst, cat).with_service(("3", "6"), 0)
    state = route_all(inst, cat, design, pen)
    b = energy(inst, cat, design, state, pen)
    assert b.link_overflow == 0


def test_route_all_is_deterministic(six_yard):
    inst, cat, pen = six_yard
    rnd = random.Random(4)
    for _ in range(10):
        design = _random_design(inst, cat, rnd)
        assert route_all(inst, cat, design, pen) == route_all(inst, cat, ServiceDesign(dict(design.key)), pen)

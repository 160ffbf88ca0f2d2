import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from railforge import build_catalog, parse_instance, route_all
from railforge.anneal import initial_solution, mandatory_design, potential_services
from railforge.energy import PenaltyConfig, energy
from railforge.oracle import OracleLimits, OracleSizeError, _enumerate_trees, _service_arcs, enumerate_optimum
from railforge.oracle import optimal_assignment
from railforge.routing import propagate_flows

from conftest import line_doc, tiny_doc


def test_limits_must_be_positive():
    with pytest.raises(ValueError):
        OracleLimits(0, 5)


def test_six_yard_optimum(six_yard):
    inst, cat, pen = six_yard
    result = enumerate_optimum(inst, cat, pen)
    assert set(result.design.provided) - inst.adjacent_pairs == {("3", "6")}
    d0, s0 = initial_solution(inst, cat, pen)
    assert energy(inst, cat, d0, s0, pen).E - result.energy == 20
    assert result.breakdown.feasible


def test_zero_demand_keeps_adjacent_services():
    doc = line_doc()
    doc["demands"] = []
    inst = parse_instance(doc)
    cat = build_catalog(inst)
    result = enumerate_optimum(inst, cat, PenaltyConfig())
    assert result.design.provided == inst.adjacent_pairs
    assert result.breakdown.E == result.breakdown.accumulation


def test_zero_demand_no_lines_is_zero():
    doc = line_doc()
    doc["demands"] = []
    doc["lines"] = []
    inst = parse_instance(doc)
    assert enumerate_optimum(inst, build_catalog(inst), PenaltyConfig()).energy == 0


def test_three_yard_line_keeps_reclassification():
    # 10 cars x tau 3 = 30 is far below 11 x 50 = 550 for a direct A -> C train
    inst = parse_instance(line_doc(volume=10))
    cat = build_catalog(inst)
    result = enumerate_optimum(inst, cat, PenaltyConfig())
    assert ("A", "C") not in result.design.provided
    assert result.state.next_service[("A", "C")] == "B"
    assert result.energy == 4 * 550 + 30


def test_three_yard_line_opens_direct_service_when_worth_it():
    inst = parse_instance(line_doc(volume=200))  # 600 > 550
    result = enumerate_optimum(inst, build_catalog(inst), PenaltyConfig())
    assert ("A", "C") in result.design.provided
    assert result.energy == 5 * 550


def _brute_trees(inst, dest, origins, provided):
    """Every next-service map on the loaded yards, filtered to acyclic, as flow patterns."""
    yards = [y for y in inst.yard_ids if y != dest]
    out = {}
    for y in yards:
        out[y] = sorted({k for (i, k) in provided if i == y})
    patterns = set()
    for combo in itertools.product(*[out[y] or [None] for y in yards]):
        nxt = {y: k for y, k in zip(yards, combo) if k is not None}
        ok, used = True, {}
        for o, _ in origins:
            u, seen = o, set()
            while u != dest:
                if u in seen or u not in nxt:
                    ok = False
                    break
                seen.add(u)
                used[u] = nxt[u]
                u = nxt[u]
            if not ok:
                break
        if ok:
            patterns.add(tuple(sorted(used.items())))
    return patterns


@given(seed=st.integers(0, 2000), n=st.integers(3, 5))
@settings(max_examples=40)
def test_tree_enumeration_is_complete_and_unique(seed, n):
    inst = parse_instance(tiny_doc(seed, n, line_density=0.6, demand_density=0.6))
    cat = build_catalog(inst)
    rnd = random.Random(seed)
    provided = set(mandatory_design(inst, cat).provided)
    provided |= {p for p in potential_services(inst, cat) if rnd.random() < 0.4}
    arcs = _service_arcs(inst, provided)
    for dest, origins in inst.demands_by_destination.items():
        trees = _enumerate_trees(inst, dest, origins, arcs)
        got = [tuple(sorted(t.next)) for t in trees]
        assert len(got) == len(set(got))
        assert set(got) == _brute_trees(inst, dest, origins, provided)


def _tiny(seed, scale):
    doc = tiny_doc(seed, 4, capacity_scale=scale, line_density=0.3, demand_density=0.35,
                   volume_range=(20, 200))
    doc["options"]["path_count_k"] = 2
    return parse_instance(doc)


@given(seed=st.integers(0, 5000), scale=st.sampled_from([None, 1.0, 2.0]))
@settings(max_examples=25)
def test_pruning_does_not_change_the_optimum(seed, scale):
    inst = _tiny(seed, scale)
    cat = build_catalog(inst)
    pen = PenaltyConfig(500, 500, 500)
    fast = enumerate_optimum(inst, cat, pen)
    slow = enumerate_optimum(inst, cat, pen, prune=False)
    assert fast.energy == pytest.approx(slow.energy, rel=1e-12)
    assert fast.design == slow.design
    assert fast.state.next_service == slow.state.next_service


@given(seed=st.integers(0, 5000), scale=st.sampled_from([None, 0.5, 1.0, 2.0]))
@settings(max_examples=40)
def test_oracle_bounds_heuristic_routing(seed, scale):
    inst = parse_instance(tiny_doc(seed, 5, capacity_scale=scale, demand_density=0.5))
    cat = build_catalog(inst)
    pen = PenaltyConfig()
    rnd = random.Random(seed)
    design = mandatory_design(inst, cat)
    for p in potential_services(inst, cat):
        if rnd.random() < 0.25:
            design = design.with_service(p, rnd.randrange(len(cat.get(p))))
    heuristic = energy(inst, cat, design, route_all(inst, cat, design, pen), pen)
    state, exact = optimal_assignment(inst, cat, design, pen)
    assert exact.E <= heuristic.E + 1e-9
    car, svc = propagate_flows(inst, state.next_service)
    assert car == state.car_flow


def test_exact_assignment_not_worse_than_pruned_free_search(six_yard):
    inst, cat, pen = six_yard
    design = mandatory_design(inst, cat).with_service(("3", "6"), 0)
    _, a = optimal_assignment(inst, cat, design, pen)
    _, b = optimal_assignment(inst, cat, design, pen, prune=False, limits=OracleLimits(10**6, 10**7))
    assert a.E == b.E == 7450


def _relabel(doc, mapping):
    out = {**doc}
    out["yards"] = [{**y, "id": mapping[y["id"]]} for y in doc["yards"]]
    out["lines"] = [{**ln, "endpoints": [mapping[e] for e in ln["endpoints"]]} for ln in doc["lines"]]
    out["demands"] = [{**d, "origin": mapping[d["origin"]], "destination": mapping[d["destination"]]}
                      for d in doc["demands"]]
    return out


def test_relabeling_symmetry():
    # a symmetric line: relabel A <-> C and mirror the demand
    doc = line_doc(volume=200)
    doc["demands"].append({"origin": "C", "destination": "A", "volume": 200})
    mirrored = _relabel(doc, {"A": "C", "B": "B", "C": "A"})
    a = enumerate_optimum(parse_instance(doc), build_catalog(parse_instance(doc)), PenaltyConfig())
    b = enumerate_optimum(parse_instance(mirrored), build_catalog(parse_instance(mirrored)), PenaltyConfig())
    assert a.energy == b.energy
    swap = {"A": "C", "B": "B", "C": "A"}
    assert {(swap[i], swap[k]) for i, k in a.design.provided} == set(b.design.provided)


@given(seed=st.integers(0, 3000))
@settings(max_examples=15)
def test_relabeling_invariance_of_energy(seed):
    doc = tiny_doc(seed, 4, line_density=0.5, demand_density=0.5, volume_range=(20, 200))
    doc["options"]["path_count_k"] = 2
    perm = list(range(1, 5))
    random.Random(seed).shuffle(perm)
    mapping = {str(i + 1): f"y{perm[i]}" for i in range(4)}
    inst_a, inst_b = parse_instance(doc), parse_instance(_relabel(doc, mapping))
    pen = PenaltyConfig()
    a = enumerate_optimum(inst_a, build_catalog(inst_a), pen)
    b = enumerate_optimum(inst_b, build_catalog(inst_b), pen)
    assert a.energy == pytest.approx(b.energy, rel=1e-12)


def test_size_limit_reports_count(six_yard):
    inst, cat, pen = six_yard
    with pytest.raises(OracleSizeError) as err:
        enumerate_optimum(inst, cat, pen, OracleLimits(max_designs=1))
    assert err.value.counted == 2 and err.value.limit == 1
    with pytest.raises(OracleSizeError):
        enumerate_optimum(inst, cat, pen, OracleLimits(max_assignments=1))

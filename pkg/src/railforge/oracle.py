"""Exact minimum-energy solutions for toy instances.

The oracle searches the full decision space: every subset of potential
services, every candidate path for each provided service, and every acyclic
next-service map for every destination. It does not reuse :func:`route_all`,
so it also measures how far the heuristic assignment is from optimal.

Two exact reductions keep the six-yard fixture well under a minute:

* Only yards that actually carry cars toward a destination need a next
  service; choices at empty yards change no flow and no cost. In-trees are
  therefore grown chain by chain from the loaded origins, which makes each one
  acyclic by construction and lists each flow pattern exactly once.
* Partial designs and partial assignments are discarded when a valid lower
  bound already exceeds the incumbent. Setting ``prune=False`` disables every
  bound and falls back to plain enumeration, which the test-suite compares
  against the pruned search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from math import fsum

from .anneal import InfeasibleInstanceError, mandatory_design, potential_services
from .energy import EnergyBreakdown, PenaltyConfig, default_penalties, energy, track_demand
from .energy import link_usable_capacity, yard_usable_capacity
from .instance import Instance, Pair
from .paths import PathCatalog
from .routing import FlowState, ServiceDesign, propagate_flows, route_all

_TOL = 1e-9


class OracleSizeError(RuntimeError):
    """The search needed more combinations than the configured limits allow."""

    def __init__(self, what: str, counted: int, limit: int):
        super().__init__(f"oracle limit exceeded: {counted} {what} counted (limit {limit})")
        self.what = what
        self.counted = counted
        self.limit = limit


@dataclass(frozen=True)
class OracleLimits:
    max_designs: int = 1_000_000
    max_assignments: int = 1_000_000

    def __post_init__(self):
        if self.max_designs <= 0 or self.max_assignments <= 0:
            raise ValueError("oracle limits must be positive")


@dataclass
class OracleResult:
    design: ServiceDesign
    state: FlowState
    breakdown: EnergyBreakdown
    designs_evaluated: int
    assignments_evaluated: int

    @property
    def energy(self) -> float:
        return self.breakdown.E


@dataclass(frozen=True)
class _Tree:
    """Flow-carrying part of one in-tree toward a destination."""

    next: tuple[tuple[str, str], ...]  # (yard, next yard), yard-rank order
    flow: tuple[tuple[str, int], ...]  # cars at each yard with a next service


def _enumerate_trees(inst: Instance, dest: str, origins, out_arcs) -> list[_Tree]:
    """All flow patterns toward ``dest`` over the given service arcs."""
    rank = inst.rank
    loaded = sorted((o for o, _ in origins), key=rank.__getitem__)
    volume = dict(origins)
    found: list[_Tree] = []

    def grow(idx: int, nxt: dict[str, str]):
        while idx < len(loaded) and loaded[idx] in nxt:
            idx += 1
        if idx == len(loaded):
            flow: dict[str, int] = {}
            for o in loaded:
                u = o
                while u != dest:
                    flow[u] = flow.get(u, 0) + volume[o]
                    u = nxt[u]
            found.append(_Tree(tuple(sorted(nxt.items(), key=lambda kv: rank[kv[0]])),
                               tuple(sorted(flow.items(), key=lambda kv: rank[kv[0]]))))
            return
        start = loaded[idx]

        def extend(u: str, chain: set[str]):
            for k in out_arcs.get(u, ()):
                if k in chain:
                    continue
                nxt[u] = k
                if k == dest or k in nxt:
                    grow(idx + 1, nxt)
                else:
                    chain.add(k)
                    extend(k, chain)
                    chain.discard(k)
                del nxt[u]

        extend(start, {start})

    if not loaded:
        return [_Tree((), ())]
    grow(0, {})
    return found


class _Scorer:
    """Cost and penalty of assignments for one service design."""

    def __init__(self, inst: Instance, catalog: PathCatalog, design: ServiceDesign, penalties: PenaltyConfig):
        self.inst = inst
        self.pen = penalties
        tw = inst.service_params.transport_weight
        self.step = inst.track_breakpoint_step
        self.tau = {y: inst.yard[y].relative_delay for y in inst.yard_ids}
        self.unit = {pair: tw * catalog.path(pair, idx).transport_cost for pair, idx in design.path_choice.items()}
        self.links = {pair: catalog.path(pair, idx).links for pair, idx in design.path_choice.items()}
        self.train_size = {pair: inst.train_size(pair) for pair in design.path_choice}
        self.link_cap = {lk: link_usable_capacity(inst, lk) for lk in inst.link}
        self.yard_cap = {y: yard_usable_capacity(inst, y) for y in inst.yard_ids}
        self.track_cap = {y: inst.yard[y].track_count for y in inst.yard_ids}

    def base(self, dest: str, tree: _Tree) -> float:
        nxt = dict(tree.next)
        return fsum(f * (self.unit[(i, nxt[i])] + (self.tau[nxt[i]] if nxt[i] != dest else 0.0))
                    for i, f in tree.flow)

    def usage(self, dest: str, tree: _Tree) -> tuple[tuple[Pair, int], ...]:
        nxt = dict(tree.next)
        return tuple(((i, nxt[i]), f) for i, f in tree.flow)

    def penalty(self, service_flow: dict[Pair, int], reclass: dict[str, int]) -> float:
        per_link: dict[Pair, list[float]] = {}
        tracks: dict[str, int] = {}
        for pair, d in service_flow.items():
            if d <= 0:
                continue
            share = d / self.train_size[pair]
            for lk in self.links[pair]:
                per_link.setdefault(lk, []).append(share)
            tracks[pair[0]] = tracks.get(pair[0], 0) + track_demand(d, self.step)
        p = self.pen
        return (
            p.beta_link * fsum(max(0.0, fsum(v) - self.link_cap[lk]) for lk, v in per_link.items())
            + p.beta_yard * fsum(max(0.0, r - self.yard_cap[y]) for y, r in reclass.items())
            + p.beta_track * fsum(max(0.0, t - self.track_cap[y]) for y, t in tracks.items())
        )


def _service_arcs(inst: Instance, provided) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for i, k in provided:
        out.setdefault(i, []).append(k)
    for arcs in out.values():
        arcs.sort(key=inst.rank.__getitem__)
    return out


class _AssignmentSearch:
    """Exact minimum over every acyclic assignment for a fixed design."""

    def __init__(self, inst, catalog, design, penalties, limits: OracleLimits, prune: bool, trees=None):
        self.inst = inst
        self.scorer = _Scorer(inst, catalog, design, penalties)
        self.limits = limits
        self.prune = prune
        demand = inst.demands_by_destination
        rank = inst.rank
        self.dests = sorted(demand, key=lambda j: (-sum(v for _, v in demand[j]), rank[j]))
        if trees is None:
            out_arcs = _service_arcs(inst, design.provided)
            trees = {j: _enumerate_trees(inst, j, demand[j], out_arcs) for j in self.dests}
        self.feasible = all(trees[j] for j in self.dests)
        self.options = []
        for j in self.dests:
            scored = [(self.scorer.base(j, t), t.next, t) for t in trees.get(j, ())]
            scored.sort(key=lambda s: (s[0], s[1]))
            self.options.append([(b, self.scorer.usage(j, t), t) for b, _, t in scored])
        self.suffix_min = [0.0] * (len(self.options) + 1)
        for d in range(len(self.options) - 1, -1, -1):
            head = self.options[d][0][0] if self.options[d] else math.inf
            self.suffix_min[d] = head + self.suffix_min[d + 1]
        self.count = 0

    def min_base(self) -> float:
        return self.suffix_min[0]

    def run(self, offset: float, bound: float):
        """Best ``(cost, assignment)`` with ``offset + cost <= bound``, or ``None``."""
        if not self.feasible:
            return None
        best: list = [bound - offset, None]
        chosen: list[_Tree] = []
        flows: dict[Pair, int] = {}
        reclass: dict[str, int] = {}
        opts = self.options
        dests = self.dests
        prune = self.prune
        penalty = self.scorer.penalty

        def visit(d: int, base: float, pen: float):
            if d == len(opts):
                self.count += 1
                if self.count > self.limits.max_assignments:
                    raise OracleSizeError("assignments", self.count, self.limits.max_assignments)
                total = base + pen
                cur = best[1]
                key = _assignment_key(chosen)
                if _improves(total, key, best[0], None if cur is None else cur[1]):
                    best[0] = total
                    best[1] = (total, key)
                return
            j = dests[d]
            rest = self.suffix_min[d + 1]
            for b, use, tree in opts[d]:
                if prune and base + b + rest + pen > best[0] + _tol(best[0]):
                    break
                for pair, f in use:
                    flows[pair] = flows.get(pair, 0) + f
                    if pair[1] != j:
                        reclass[pair[1]] = reclass.get(pair[1], 0) + f
                chosen.append(tree)
                visit(d + 1, base + b, penalty(flows, reclass))
                chosen.pop()
                for pair, f in use:
                    flows[pair] -= f
                    if pair[1] != j:
                        reclass[pair[1]] -= f

        visit(0, 0.0, 0.0)
        if best[1] is None:
            return None
        total, key = best[1]
        assignment = {(i, j): k for j, nxt in zip(dests, key) for i, k in nxt}
        return total, assignment


def _assignment_key(chosen) -> tuple:
    return tuple(t.next for t in chosen)


def _improves(total: float, key, cur_total: float, cur_key) -> bool:
    """Lower energy wins; near-equal energies fall back to the smaller key.

    With no current key, ``cur_total`` is only a bound that must not be exceeded.
    """
    tol = _tol(cur_total)
    if cur_key is None:
        return total <= cur_total + tol
    if total < cur_total - tol:
        return True
    return total <= cur_total + tol and key < cur_key


def _tol(x: float) -> float:
    return _TOL * max(1.0, abs(x))


def _finish(inst, catalog, design, assignment, penalties) -> tuple[FlowState, EnergyBreakdown]:
    car_flow, service_flow = propagate_flows(inst, assignment)
    state = FlowState(dict(assignment), car_flow, {pair: service_flow.get(pair, 0) for pair in design.path_choice})
    return state, energy(inst, catalog, design, state, penalties)


def optimal_assignment(
    inst: Instance,
    catalog: PathCatalog,
    design: ServiceDesign,
    penalties: PenaltyConfig | None = None,
    limits: OracleLimits = OracleLimits(),
    prune: bool = True,
) -> tuple[FlowState, EnergyBreakdown]:
    """Best car-flow assignment for a fixed design, over all acyclic assignments."""
    penalties = penalties or default_penalties(inst, catalog)
    search = _AssignmentSearch(inst, catalog, design, penalties, limits, prune)
    found = search.run(0.0, math.inf)
    if found is None:
        raise InfeasibleInstanceError("some shipment cannot reach its destination under this design")
    return _finish(inst, catalog, design, found[1], penalties)


def _routing_lower_bound(inst: Instance, services, min_unit: dict[Pair, float]) -> float:
    """Uncapacitated routing cost with every service on its cheapest path."""
    ids = inst.yard_ids
    tau = {y: inst.yard[y].relative_delay for y in ids}
    dist = {a: {b: (0.0 if a == b else math.inf) for b in ids} for a in ids}
    for i, k in services:
        w = min_unit[(i, k)] + tau[k]
        if w < dist[i][k]:
            dist[i][k] = w
    for m in ids:
        dm = dist[m]
        for a in ids:
            da = dist[a]
            am = da[m]
            if am == math.inf:
                continue
            for b in ids:
                c = am + dm[b]
                if c < da[b]:
                    da[b] = c
    terms = []
    for (o, j), v in inst.demand_volume.items():
        if v <= 0:
            continue
        d = dist[o][j]
        if d == math.inf:
            return math.inf
        terms.append(v * (d - tau[j]))
    return fsum(terms)


def enumerate_optimum(
    inst: Instance,
    catalog: PathCatalog,
    penalties: PenaltyConfig | None = None,
    limits: OracleLimits = OracleLimits(),
    prune: bool = True,
) -> OracleResult:
    """Global minimum of the energy over designs, path choices and assignments.

    Ties in energy are broken by the design key, then by the assignment, both
    compared lexicographically in yard-rank order.
    """
    penalties = penalties or default_penalties(inst, catalog)
    base_design = mandatory_design(inst, catalog)
    mandatory_acc = fsum(inst.accumulation_cost(p) for p in base_design.path_choice)
    potential = potential_services(inst, catalog)
    tw = inst.service_params.transport_weight

    def choices(pair: Pair) -> list[int]:
        fixed = catalog.mandatory_index(pair)
        return [fixed] if fixed is not None else list(range(len(catalog.get(pair))))

    min_unit = {}
    for pair in list(base_design.path_choice) + potential:
        min_unit[pair] = min(tw * catalog.path(pair, i).transport_cost for i in choices(pair))
    for pair, idx in base_design.path_choice.items():
        min_unit[pair] = tw * catalog.path(pair, idx).transport_cost

    best: dict = {"E": math.inf, "rank": None, "design": None, "assignment": None}
    counters = {"designs": 0, "assignments": 0}
    demand = inst.demands_by_destination

    # Seed the incumbent with the heuristic solution of the mandatory design.
    if prune:
        state0 = route_all(inst, catalog, base_design, penalties)
        e0 = energy(inst, catalog, base_design, state0, penalties).E
        best.update(E=e0)

    def consider(design: ServiceDesign):
        counters["designs"] += 1
        if counters["designs"] > limits.max_designs:
            raise OracleSizeError("designs", counters["designs"], limits.max_designs)

    def leaf(included: list[Pair]):
        services = list(base_design.path_choice) + included
        out_arcs = _service_arcs(inst, services)
        trees = {j: _enumerate_trees(inst, j, demand[j], out_arcs) for j in demand}
        if not all(trees.values()):
            return
        acc = mandatory_acc + fsum(inst.accumulation_cost(p) for p in included)
        for combo in itertools.product(*(choices(p) for p in included)):
            design = base_design
            for pair, idx in zip(included, combo):
                design = design.with_service(pair, idx)
            consider(design)
            search = _AssignmentSearch(inst, catalog, design, penalties, limits, prune, trees)
            if prune and acc + search.min_base() > best["E"] + _tol(best["E"]):
                continue
            found = search.run(acc, best["E"] if prune else math.inf)
            counters["assignments"] += search.count
            if found is None:
                continue
            total = acc + found[0]
            rank_key = (_design_rank(inst, design), tuple(sorted(found[1].items(), key=_pair_rank(inst))))
            if _improves(total, rank_key, best["E"], best["rank"]):
                best.update(E=total, rank=rank_key, design=design, assignment=found[1])

    def dfs(d: int, included: list[Pair], acc_included: float):
        if prune:
            lb = mandatory_acc + acc_included + _routing_lower_bound(
                inst, list(base_design.path_choice) + included + potential[d:], min_unit)
            if lb > best["E"] + _tol(best["E"]):
                return
        if d == len(potential):
            leaf(included)
            return
        dfs(d + 1, included, acc_included)
        pair = potential[d]
        included.append(pair)
        dfs(d + 1, included, acc_included + inst.accumulation_cost(pair))
        included.pop()

    dfs(0, [], 0.0)
    if best["design"] is None:
        raise InfeasibleInstanceError("no design routes every shipment")
    state, breakdown = _finish(inst, catalog, best["design"], best["assignment"], penalties)
    return OracleResult(best["design"], state, breakdown, counters["designs"], counters["assignments"])


def _design_rank(inst: Instance, design: ServiceDesign) -> tuple:
    rank = inst.rank
    return tuple(sorted((rank[i], rank[k], idx) for (i, k), idx in design.path_choice.items()))


def _pair_rank(inst: Instance):
    rank = inst.rank
    return lambda kv: (rank[kv[0][0]], rank[kv[0][1]])

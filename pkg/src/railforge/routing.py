"""Assigning car flows to train services.

Given the provided services and their physical paths, every car flow at yard
``i`` bound for ``j`` picks one next service ``i -> k``. Per destination these
choices form an in-tree; car flows ``f`` and service flows ``D`` follow by
accumulating demand down each tree.
"""

from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from math import fsum
from typing import Mapping

from .energy import PenaltyConfig, link_usable_capacity, track_demand, yard_usable_capacity
from .instance import Instance, Pair
from .paths import PathCatalog


class RoutingError(Exception):
    pass


class InfeasibleRoutingError(RoutingError):
    """Some car flow cannot reach its destination over the provided services."""

    def __init__(self, stranded: Pair):
        super().__init__(f"flow {stranded[0]}->{stranded[1]} cannot reach its destination over provided services")
        self.stranded = stranded


class CyclicAssignmentError(RoutingError):
    def __init__(self, destination: str, cycle: list[str]):
        super().__init__(f"assignment for destination {destination} cycles through {' -> '.join(cycle)}")
        self.destination = destination
        self.cycle = cycle


class DesignError(ValueError):
    """A design breaks the forced / forbidden / prescribed-path rules."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True, eq=False)
class ServiceDesign:
    """Provided services and the candidate-path index each one runs on."""

    path_choice: Mapping[Pair, int]
    key: tuple = field(init=False, repr=False)

    def __post_init__(self):
        choice = dict(self.path_choice)
        object.__setattr__(self, "path_choice", choice)
        object.__setattr__(self, "key", tuple(sorted(choice.items())))

    @property
    def provided(self) -> frozenset[Pair]:
        return frozenset(self.path_choice)

    def __eq__(self, other):
        return isinstance(other, ServiceDesign) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __len__(self):
        return len(self.path_choice)

    def with_service(self, pair: Pair, index: int) -> "ServiceDesign":
        choice = dict(self.path_choice)
        choice[pair] = index
        return ServiceDesign(choice)

    def without(self, pair: Pair) -> "ServiceDesign":
        choice = dict(self.path_choice)
        del choice[pair]
        return ServiceDesign(choice)


def design_violations(inst: Instance, catalog: PathCatalog, design: ServiceDesign) -> list[str]:
    ops = inst.operational_sets
    out = []
    missing = sorted(ops.forced_services - design.provided)
    if missing:
        out.append(f"forced services not provided: {missing}")
    banned = sorted(ops.forbidden_services & design.provided)
    if banned:
        out.append(f"forbidden services provided: {banned}")
    for pair, idx in sorted(design.path_choice.items()):
        paths = catalog.get(pair)
        if not 0 <= idx < len(paths):
            out.append(f"service {pair}: no candidate path with index {idx}")
            continue
        fixed = catalog.mandatory_index(pair)
        if fixed is not None and idx != fixed:
            out.append(f"service {pair}: must run on its prescribed path (index {fixed})")
    return out


def check_design(inst: Instance, catalog: PathCatalog, design: ServiceDesign) -> None:
    problems = design_violations(inst, catalog, design)
    if problems:
        raise DesignError(problems)


@dataclass
class FlowState:
    next_service: dict[Pair, str]
    car_flow: dict[Pair, int]
    service_flow: dict[Pair, int]

    def to_dict(self, inst: Instance) -> dict:
        def key(p):
            return (inst.rank[p[0]], inst.rank[p[1]])

        return {
            "assignment": [{"at": i, "dest": j, "next": k}
                           for (i, j), k in sorted(self.next_service.items(), key=lambda kv: key(kv[0]))],
            "car_flows": [{"at": i, "dest": j, "cars": f}
                          for (i, j), f in sorted(self.car_flow.items(), key=lambda kv: key(kv[0]))],
            "service_flows": [{"from": i, "to": k, "cars": d}
                              for (i, k), d in sorted(self.service_flow.items(), key=lambda kv: key(kv[0]))],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FlowState":
        return cls(
            {(a["at"], a["dest"]): a["next"] for a in doc["assignment"]},
            {(c["at"], c["dest"]): c["cars"] for c in doc["car_flows"]},
            {(s["from"], s["to"]): s["cars"] for s in doc["service_flows"]},
        )


def propagate_flows(inst: Instance, assignment: Mapping[Pair, str]) -> tuple[dict[Pair, int], dict[Pair, int]]:
    """Accumulate car flows ``f`` and service flows ``D`` over per-destination in-trees.

    ``f_ij = N_ij + sum of f_sj over yards s whose next yard toward j is i``,
    solved exactly by walking each tree from the leaves. ``D_ik`` is the sum of
    ``f_ij`` over destinations j routed onto service ``i -> k``.
    """
    by_dest: dict[str, dict[str, str]] = defaultdict(dict)
    for (i, j), k in assignment.items():
        by_dest[j][i] = k
    dests = set(by_dest) | set(inst.demands_by_destination)

    car_flow: dict[Pair, int] = {}
    service_flow: dict[Pair, int] = defaultdict(int)
    for j in sorted(dests, key=inst.rank.__getitem__):
        nxt = by_dest.get(j, {})
        depth: dict[str, int] = {j: 0}
        for start in sorted(nxt, key=inst.rank.__getitem__):
            walk = []
            on_walk = set()
            u = start
            while u not in depth:
                if u in on_walk:
                    cyc = walk[walk.index(u):] + [u]
                    raise CyclicAssignmentError(j, cyc)
                if u not in nxt:
                    raise InfeasibleRoutingError((start, j))
                walk.append(u)
                on_walk.add(u)
                u = nxt[u]
            d = depth[u]
            for v in reversed(walk):
                d += 1
                depth[v] = d

        flow: dict[str, int] = defaultdict(int)
        for o, v in inst.demands_by_destination.get(j, ()):
            if o not in nxt:
                raise InfeasibleRoutingError((o, j))
            flow[o] += v
        for i in sorted(nxt, key=lambda y: (-depth[y], inst.rank[y])):
            f = flow.get(i, 0)
            if f:
                k = nxt[i]
                flow[k] += f
                car_flow[(i, j)] = f
                service_flow[(i, k)] += f
    return car_flow, dict(service_flow)


def itinerary_of(state: FlowState, origin: str, dest: str) -> list[str]:
    """Yards where a car from ``origin`` to ``dest`` is (re)classified, endpoints included."""
    seq = [origin]
    u = origin
    while u != dest:
        u = state.next_service[(u, dest)]
        seq.append(u)
        if len(seq) > len(state.next_service) + 2:
            raise CyclicAssignmentError(dest, seq)
    return seq


# ---------------------------------------------------------------------------
# Heuristic assignment


class _Loads:
    """Resource usage induced by committed flows, with exact penalty deltas."""

    def __init__(self, inst: Instance, catalog: PathCatalog, design: ServiceDesign, penalties: PenaltyConfig):
        self.inst = inst
        self.pen = penalties
        self.step = inst.track_breakpoint_step
        self.path_links: dict[Pair, tuple[Pair, ...]] = {}
        self.inv_m: dict[Pair, float] = {}
        self.on_link: dict[Pair, list[Pair]] = defaultdict(list)
        for pair, idx in design.path_choice.items():
            links = catalog.path(pair, idx).links
            self.path_links[pair] = links
            self.inv_m[pair] = 1.0 / inst.train_size(pair)
            for lk in links:
                self.on_link[lk].append(pair)
        self.link_cap = {lk: link_usable_capacity(inst, lk) for lk in inst.link}
        self.yard_cap = {y: yard_usable_capacity(inst, y) for y in inst.yard_ids}
        self.track_cap = {y: inst.yard[y].track_count for y in inst.yard_ids}
        self.D: dict[Pair, int] = defaultdict(int)
        self.trains: dict[Pair, float] = defaultdict(float)
        self.reclass: dict[str, int] = defaultdict(int)
        self.tracks: dict[str, int] = defaultdict(int)

    def _refresh_link(self, lk: Pair) -> None:
        D = self.D
        self.trains[lk] = fsum(D[s] * self.inv_m[s] for s in self.on_link[lk] if D[s])

    def apply(self, changes) -> None:
        dirty = set()
        for pair, dest, q in changes:
            old = self.D[pair]
            new = old + q
            self.D[pair] = new
            self.tracks[pair[0]] += track_demand(new, self.step) - track_demand(old, self.step)
            if pair[1] != dest:
                self.reclass[pair[1]] += q
            dirty.update(self.path_links[pair])
        for lk in dirty:
            self._refresh_link(lk)

    def _penalty(self, links, ryards, tyards) -> float:
        p = self.pen
        return (
            p.beta_link * fsum(max(0.0, self.trains[lk] - self.link_cap[lk]) for lk in links)
            + p.beta_yard * fsum(max(0.0, self.reclass[y] - self.yard_cap[y]) for y in ryards)
            + p.beta_track * fsum(max(0.0, self.tracks[y] - self.track_cap[y]) for y in tyards)
        )

    def delta(self, changes) -> float:
        """Change in total penalty if ``changes`` were applied (state is untouched)."""
        d_flow: dict[Pair, int] = defaultdict(int)
        d_reclass: dict[str, int] = defaultdict(int)
        for pair, dest, q in changes:
            d_flow[pair] += q
            if pair[1] != dest:
                d_reclass[pair[1]] += q
        d_trains: dict[Pair, float] = defaultdict(float)
        d_tracks: dict[str, int] = defaultdict(int)
        for pair, q in d_flow.items():
            if not q:
                continue
            share = q * self.inv_m[pair]
            for lk in self.path_links[pair]:
                d_trains[lk] += share
            old = self.D[pair]
            d_tracks[pair[0]] += track_demand(old + q, self.step) - track_demand(old, self.step)
        p = self.pen
        out = 0.0
        for lk, dt in d_trains.items():
            cap, u = self.link_cap[lk], self.trains[lk]
            out += p.beta_link * (max(0.0, u + dt - cap) - max(0.0, u - cap))
        for y, dr in d_reclass.items():
            cap, r = self.yard_cap[y], self.reclass[y]
            out += p.beta_yard * (max(0.0, r + dr - cap) - max(0.0, r - cap))
        for y, dt in d_tracks.items():
            cap, t = self.track_cap[y], self.tracks[y]
            out += p.beta_track * (max(0.0, t + dt - cap) - max(0.0, t - cap))
        return out

    def total_penalty(self) -> float:
        return self._penalty(self.link_cap, self.yard_cap, self.track_cap)

    def overloaded(self) -> tuple[set[Pair], set[str], set[str]]:
        links = {lk for lk, u in self.trains.items() if u > self.link_cap[lk] + 1e-9}
        ryards = {y for y, r in self.reclass.items() if r > self.yard_cap[y]}
        tyards = {y for y, t in self.tracks.items() if t > self.track_cap[y]}
        return links, ryards, tyards

    def saturated(self) -> tuple[set[Pair], set[str]]:
        links = {lk for lk, u in self.trains.items() if u >= self.link_cap[lk] - 1e-9}
        yards = {y for y, r in self.reclass.items() if r >= self.yard_cap[y]}
        return links, yards


def _tol(x: float) -> float:
    return 1e-9 * max(1.0, abs(x))


class _Tree:
    """Shortest-path in-tree toward one destination plus the flows it carries."""

    def __init__(self, dest: str, arc_cost, in_arcs, out_arcs, rank):
        self.dest = dest
        self.arc_cost = arc_cost
        self.out_arcs = out_arcs
        self.rank = rank
        self.dist: dict[str, float] = {dest: 0.0}
        self.pos: dict[str, int] = {}
        heap = [(0.0, rank[dest], dest)]
        while heap:
            d, _, k = heapq.heappop(heap)
            if k in self.pos:
                continue
            self.pos[k] = len(self.pos)
            for i, pair in in_arcs.get(k, ()):
                if i in self.pos:
                    continue
                c = d + arc_cost(pair)
                if c < self.dist.get(i, math.inf):
                    self.dist[i] = c
                    heapq.heappush(heap, (c, rank[i], i))
        self.next: dict[str, str] = {}
        self.flow: dict[str, int] = {}

    def shortest_next(self, i: str) -> str:
        """Best next yard from ``i``; ties go to the smallest yard id."""
        best_k, best_v = None, math.inf
        pi = self.pos[i]
        for k, pair in self.out_arcs.get(i, ()):
            pk = self.pos.get(k)
            if pk is None or pk >= pi:
                continue
            v = self.arc_cost(pair) + self.dist[k]
            if best_k is None or v < best_v - _tol(best_v):
                best_k, best_v = k, v
        return best_k

    def default_next(self, i: str) -> str | None:
        if i in self.next:
            return self.next[i]
        if i not in self.pos:
            return None
        return self.shortest_next(i)

    def route(self, origins: list[tuple[str, int]]) -> None:
        j = self.dest
        flow: dict[str, int] = defaultdict(int)
        for o, v in origins:
            if o not in self.pos:
                raise InfeasibleRoutingError((o, j))
            flow[o] += v
            u = o
            while u != j and u not in self.next:
                k = self.shortest_next(u)
                self.next[u] = k
                u = k
        for i in sorted(self.next, key=lambda y: -self.pos[y]):
            f = flow.get(i, 0)
            if f:
                flow[self.next[i]] += f
        self.flow = {i: f for i, f in flow.items() if f}


def route_all(
    inst: Instance,
    catalog: PathCatalog,
    design: ServiceDesign,
    penalties: PenaltyConfig | None = None,
) -> FlowState:
    """Assign every OD flow to a sequence of provided services.

    Destinations are handled in descending order of total inbound demand. For
    each, a shortest-path in-tree is grown over the provided services, where
    boarding ``i -> k`` costs its transport plus the relative delay at ``k``
    (none when ``k`` is the destination) plus the marginal penalty of any link
    or yard already saturated by flows committed so far. If the finished
    assignment still overflows some capacity, single flows are re-hung onto
    other services whenever that lowers the energy.
    """
    penalties = penalties or PenaltyConfig()
    rank = inst.rank
    tw = inst.service_params.transport_weight
    tau = {y: inst.yard[y].relative_delay for y in inst.yard_ids}

    base: dict[Pair, float] = {}
    in_arcs: dict[str, list[tuple[str, Pair]]] = defaultdict(list)
    out_arcs: dict[str, list[tuple[str, Pair]]] = defaultdict(list)
    for pair, idx in design.path_choice.items():
        base[pair] = tw * catalog.path(pair, idx).transport_cost
        in_arcs[pair[1]].append((pair[0], pair))
        out_arcs[pair[0]].append((pair[1], pair))
    for arcs in out_arcs.values():
        arcs.sort(key=lambda kp: rank[kp[0]])
    for arcs in in_arcs.values():
        arcs.sort(key=lambda ip: rank[ip[0]])

    loads = _Loads(inst, catalog, design, penalties)
    demand = inst.demands_by_destination
    dests = sorted(demand, key=lambda j: (-sum(v for _, v in demand[j]), rank[j]))

    def plain_cost(pair: Pair, j: str) -> float:
        return base[pair] + (tau[pair[1]] if pair[1] != j else 0.0)

    def build(j: str, full_links, full_yards) -> _Tree:
        extra: dict[Pair, float] = defaultdict(float)
        for lk in full_links:
            for pair in loads.on_link[lk]:
                extra[pair] += penalties.beta_link * loads.inv_m[pair]

        def arc_cost(pair):
            c = plain_cost(pair, j) + extra.get(pair, 0.0)
            if pair[1] != j and pair[1] in full_yards:
                c += penalties.beta_yard
            return c

        tree = _Tree(j, arc_cost, in_arcs, out_arcs, rank)
        tree.route(demand[j])
        return tree

    trees: dict[str, _Tree] = {}
    for j in dests:
        tree = build(j, *loads.saturated())
        trees[j] = tree
        loads.apply([((i, tree.next[i]), j, f) for i, f in tree.flow.items() if i != j])
        if loads.total_penalty() > 0:
            # settle this destination's overloads before later trees price around them
            _repair(inst, trees, [j], loads, out_arcs, plain_cost)

    if loads.total_penalty() > 0:
        _repair(inst, trees, dests, loads, out_arcs, plain_cost)

    assignment = {(i, j): tree.next[i] for j, tree in trees.items() for i in tree.flow if i != j}
    car_flow, service_flow = propagate_flows(inst, assignment)
    full_flow = {pair: service_flow.get(pair, 0) for pair in design.path_choice}
    return FlowState(assignment, car_flow, full_flow)


def _repair(inst, trees, dests, loads: _Loads, out_arcs, plain_cost, max_rounds: int = 200) -> None:
    """Re-hang single (yard, destination) flows off overloaded resources.

    Each round scores every candidate move, then walks them best first,
    re-deriving each against the current trees and loads and applying it if it
    still lowers the energy. Rounds repeat until no move helps.
    """
    rank = inst.rank
    for _ in range(max_rounds):
        over_links, over_r, over_t = loads.overloaded()
        if not (over_links or over_r or over_t):
            return
        found = []
        for order, j in enumerate(dests):
            tree = trees[j]
            for i in sorted(tree.flow, key=rank.__getitem__):
                if i == j:
                    continue
                old_chain = _chain(tree, i)
                if not any(
                    pair[0] in over_t
                    or (pair[1] != j and pair[1] in over_r)
                    or any(lk in over_links for lk in loads.path_links[pair])
                    for pair in old_chain
                ):
                    continue
                for k, pair in out_arcs.get(i, ()):
                    move = _move(tree, i, k, pair, old_chain, plain_cost)
                    if move is None:
                        continue
                    gain, changes, _ = move
                    d = gain + loads.delta(changes)
                    if d < -1e-7:
                        found.append((d, order, rank[i], rank[k], j, i, k, pair))
        if not found:
            return
        found.sort(key=lambda c: c[:4])
        applied = False
        for _, _, _, _, j, i, k, pair in found:
            tree = trees[j]
            if i not in tree.flow:
                continue
            move = _move(tree, i, k, pair, _chain(tree, i), plain_cost)
            if move is None:
                continue
            gain, changes, tail = move
            if gain + loads.delta(changes) >= -1e-7:
                continue
            loads.apply(changes)
            _rehang(tree, i, k, tail, tree.flow[i])
            applied = True
        if not applied:
            return


def _move(tree: _Tree, i: str, k: str, pair: Pair, old_chain: list[Pair], plain_cost):
    """Plain-cost change, net load changes and new tail for re-hanging ``i`` onto ``k``."""
    if k == tree.next[i]:
        return None
    tail = _extension(tree, k, forbid=i)
    if tail is None:
        return None
    j, q = tree.dest, tree.flow[i]
    # both chains share the tree suffix after they meet; it cancels out
    new_chain = [pair] + [(a, b) for a, b in zip(tail, tail[1:])]
    common = set(old_chain).intersection(new_chain)
    dropped = [p for p in old_chain if p not in common]
    added = [p for p in new_chain if p not in common]
    changes = [(p, j, -q) for p in dropped] + [(p, j, q) for p in added]
    gain = q * (fsum(plain_cost(p, j) for p in added) - fsum(plain_cost(p, j) for p in dropped))
    return gain, changes, tail


def _chain(tree: _Tree, i: str) -> list[Pair]:
    out = []
    u = i
    while u != tree.dest:
        k = tree.next[u]
        out.append((u, k))
        u = k
    return out


def _extension(tree: _Tree, k: str, forbid: str) -> list[str] | None:
    """Yards from ``k`` to the destination following tree / shortest pointers."""
    seq = [k]
    u = k
    seen = {k}
    while u != tree.dest:
        if u == forbid:
            return None
        nxt = tree.default_next(u)
        if nxt is None or nxt in seen:
            return None
        seen.add(nxt)
        seq.append(nxt)
        u = nxt
    return seq if forbid not in seen else None


def _rehang(tree: _Tree, i: str, k: str, tail: list[str], q: int) -> None:
    u = tree.next[i]
    while True:
        tree.flow[u] -= q
        if u == tree.dest:
            break
        u = tree.next[u]
    tree.next[i] = k
    for a, b in zip(tail, tail[1:]):
        tree.next.setdefault(a, b)
    for u in tail:
        tree.flow[u] = tree.flow.get(u, 0) + q
    for u in [y for y, f in tree.flow.items() if f == 0]:
        del tree.flow[u]
        tree.next.pop(u, None)

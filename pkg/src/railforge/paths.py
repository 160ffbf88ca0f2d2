"""Candidate physical paths for train services.

Paths between each ordered yard pair are enumerated with Yen's loopless
k-shortest-paths algorithm. Ranking is by transport cost; equal-cost paths are
ordered by their yard sequence (compared by yard rank), which makes every
catalog fully deterministic.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable

from .instance import Instance, InstanceIntegrityError, Pair


@dataclass(frozen=True)
class CandidatePath:
    service_pair: Pair
    index: int
    yards: tuple[str, ...]
    transport_cost: float
    links: tuple[Pair, ...]
    mandatory: bool = False

    @property
    def length(self) -> int:
        return len(self.links)


def links_of(path: CandidatePath | Iterable[str]) -> set[Pair]:
    """Directed links traversed by ``path`` (the path-link incidence)."""
    yards = path.yards if isinstance(path, CandidatePath) else tuple(path)
    return set(zip(yards, yards[1:]))


def path_cost(inst: Instance, yards: Iterable[str]) -> float:
    seq = tuple(yards)
    total = 0.0
    for a, b in zip(seq, seq[1:]):
        total += inst.link[(a, b)].transport_cost_per_car
    return total


def _dijkstra(
    inst: Instance,
    source: str,
    target: str,
    banned_nodes: set[str],
    banned_links: set[Pair],
) -> tuple[str, ...] | None:
    """Cheapest path by (cost, rank sequence); ``None`` if unreachable."""
    rank = inst.rank
    link = inst.link
    heap: list[tuple[float, tuple[int, ...], str, tuple[str, ...]]] = [(0.0, (rank[source],), source, (source,))]
    done: set[str] = set()
    while heap:
        cost, key, node, path = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == target:
            return path
        for nxt in inst.successors[node]:
            if nxt in done or nxt in banned_nodes or (node, nxt) in banned_links:
                continue
            heapq.heappush(
                heap,
                (cost + link[(node, nxt)].transport_cost_per_car, key + (rank[nxt],), nxt, path + (nxt,)),
            )
    return None


def k_shortest_simple_paths(inst: Instance, source: str, target: str, k: int) -> list[tuple[str, ...]]:
    """Yen's algorithm with a total order on paths: (cost, yard-rank sequence)."""
    if source == target or k < 1:
        return []
    rank = inst.rank

    def order_key(p: tuple[str, ...]) -> tuple[float, tuple[int, ...]]:
        return (path_cost(inst, p), tuple(rank[y] for y in p))

    first = _dijkstra(inst, source, target, set(), set())
    if first is None:
        return []
    accepted = [first]
    candidates: list[tuple[tuple[float, tuple[int, ...]], tuple[str, ...]]] = []
    seen = {first}
    while len(accepted) < k:
        last = accepted[-1]
        for i in range(len(last) - 1):
            spur = last[i]
            root = last[: i + 1]
            banned_links = {(p[i], p[i + 1]) for p in accepted if p[: i + 1] == root}
            banned_nodes = set(root[:-1])
            tail = _dijkstra(inst, spur, target, banned_nodes, banned_links)
            if tail is None:
                continue
            full = root[:-1] + tail
            if full not in seen:
                seen.add(full)
                heapq.heappush(candidates, (order_key(full), full))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates)[1])
    return accepted


def enumerate_candidate_paths(inst: Instance, pair: Pair, k: int) -> list[CandidatePath]:
    seqs = k_shortest_simple_paths(inst, pair[0], pair[1], k)
    return [
        CandidatePath(pair, i, seq, path_cost(inst, seq), tuple(zip(seq, seq[1:])))
        for i, seq in enumerate(seqs)
    ]


@dataclass(frozen=True)
class PathCatalog:
    paths: dict[Pair, tuple[CandidatePath, ...]]
    k: int

    def get(self, pair: Pair) -> tuple[CandidatePath, ...]:
        return self.paths.get(pair, ())

    def path(self, pair: Pair, index: int) -> CandidatePath:
        return self.paths[pair][index]

    def mandatory_index(self, pair: Pair) -> int | None:
        for p in self.paths.get(pair, ()):
            if p.mandatory:
                return p.index
        return None

    def pairs(self) -> list[Pair]:
        return list(self.paths)

    def to_records(self) -> list[dict]:
        return [
            {"pair": list(p.service_pair), "index": p.index, "yards": list(p.yards),
             "cost": p.transport_cost, "mandatory": p.mandatory}
            for paths in self.paths.values()
            for p in paths
        ]


def build_catalog(inst: Instance, k: int | None = None) -> PathCatalog:
    """Enumerate candidate paths for every ordered pair of yards.

    A prescribed path is always present and flagged ``mandatory``; when it is
    not among the ``k`` shortest it is added as an extra entry.
    """
    k = inst.path_count_k if k is None else k
    prescribed = inst.operational_sets.prescribed_paths
    rank = inst.rank
    table: dict[Pair, tuple[CandidatePath, ...]] = {}
    for a in inst.yard_ids:
        for b in inst.yard_ids:
            if a == b:
                continue
            pair = (a, b)
            seqs = k_shortest_simple_paths(inst, a, b, k)
            fixed = prescribed.get(pair)
            if fixed is not None:
                if not inst.path_links_exist(fixed) or len(set(fixed)) != len(fixed):
                    raise InstanceIntegrityError(f"prescribed path for {pair} is not a simple path in the network")
                if fixed not in seqs:
                    seqs.append(fixed)
                    seqs.sort(key=lambda s: (path_cost(inst, s), tuple(rank[y] for y in s)))
            if not seqs:
                continue
            table[pair] = tuple(
                CandidatePath(pair, i, s, path_cost(inst, s), tuple(zip(s, s[1:])), mandatory=(s == fixed))
                for i, s in enumerate(seqs)
            )
    return PathCatalog(table, k)

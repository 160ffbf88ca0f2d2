"""Plan cost, capacity usage and the penalised energy minimised by the solvers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from math import fsum
from typing import TYPE_CHECKING

from .instance import Instance, Pair

if TYPE_CHECKING:
    from .paths import PathCatalog
    from .routing import FlowState, ServiceDesign

PENALTY_FLOOR = 1e3


@dataclass(frozen=True)
class PenaltyConfig:
    beta_link: float = PENALTY_FLOOR
    beta_yard: float = PENALTY_FLOOR
    beta_track: float = PENALTY_FLOOR

    def __post_init__(self):
        if not (self.beta_link > 0 and self.beta_yard > 0 and self.beta_track > 0):
            raise ValueError("penalty parameters must be strictly positive")


@dataclass(frozen=True)
class EnergyBreakdown:
    accumulation: float
    transportation: float
    reclassification: float
    link_overflow: float
    yard_overflow: float
    track_overflow: float
    Z: float
    E: float

    @property
    def feasible(self) -> bool:
        return self.link_overflow == 0 and self.yard_overflow == 0 and self.track_overflow == 0

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def compose(cls, accumulation, transportation, reclassification,
                link_overflow, yard_overflow, track_overflow, penalties: PenaltyConfig) -> "EnergyBreakdown":
        z = accumulation + transportation + reclassification
        e = z + (penalties.beta_link * link_overflow
                 + penalties.beta_yard * yard_overflow
                 + penalties.beta_track * track_overflow)
        return cls(accumulation, transportation, reclassification,
                   link_overflow, yard_overflow, track_overflow, z, e)


def track_demand(cars: float, step: float) -> int:
    """Classification tracks needed for a service carrying ``cars`` per day."""
    if cars <= 0:
        return 0
    return math.ceil(cars / step)


def usable(capacity: float, rate: float) -> float:
    # an unlimited capacity stays unlimited even at rate 0
    return math.inf if math.isinf(capacity) else rate * capacity


def link_usable_capacity(inst: Instance, link: Pair) -> float:
    lk = inst.link[link]
    return usable(lk.capacity_trains, lk.remaining_capacity_rate)


def yard_usable_capacity(inst: Instance, yard: str) -> float:
    y = inst.yard[yard]
    return usable(y.reclass_capacity, y.reclass_capacity_factor)


def reclassified_cars(state: "FlowState") -> dict[str, int]:
    """Cars re-sorted at each yard: flows whose next service ends short of their destination."""
    cars: dict[str, int] = {}
    for (i, j), k in state.next_service.items():
        if k != j:
            f = state.car_flow.get((i, j), 0)
            if f:
                cars[k] = cars.get(k, 0) + f
    return cars


def capacity_usage(
    inst: Instance, catalog: "PathCatalog", design: "ServiceDesign", state: "FlowState"
) -> tuple[dict[Pair, float], dict[str, int], dict[str, int]]:
    """Per-link trains, per-yard reclassified cars and per-yard occupied tracks."""
    per_link: dict[Pair, list[float]] = {lk: [] for lk in inst.link}
    tracks: dict[str, int] = {y: 0 for y in inst.yard_ids}
    for pair, idx in design.path_choice.items():
        d = state.service_flow.get(pair, 0)
        if d <= 0:
            continue
        m = inst.train_size(pair)
        for lk in catalog.path(pair, idx).links:
            per_link[lk].append(d / m)
        tracks[pair[0]] += track_demand(d, inst.track_breakpoint_step)
    trains = {lk: fsum(v) for lk, v in per_link.items()}
    cars = {y: 0 for y in inst.yard_ids}
    cars.update(reclassified_cars(state))
    return trains, cars, tracks


def overflow_totals(
    inst: Instance,
    trains: dict[Pair, float],
    cars: dict[str, float],
    tracks: dict[str, int],
) -> tuple[float, float, float]:
    link_over = fsum(max(0.0, u - link_usable_capacity(inst, lk)) for lk, u in trains.items())
    yard_over = fsum(max(0.0, c - yard_usable_capacity(inst, y)) for y, c in cars.items())
    track_over = fsum(max(0.0, t - inst.yard[y].track_count) for y, t in tracks.items())
    return link_over, yard_over, track_over


def plan_cost(
    inst: Instance, catalog: "PathCatalog", design: "ServiceDesign", state: "FlowState"
) -> tuple[float, float, float, float]:
    """Accumulation, transportation and reclassification cost, and their sum Z."""
    accumulation = fsum(inst.accumulation_cost(pair) for pair in design.path_choice)
    transportation = inst.service_params.transport_weight * fsum(
        state.service_flow.get(pair, 0) * catalog.path(pair, idx).transport_cost
        for pair, idx in design.path_choice.items()
    )
    reclassification = fsum(
        state.car_flow.get((i, j), 0) * inst.yard[k].relative_delay
        for (i, j), k in state.next_service.items()
        if k != j
    )
    return accumulation, transportation, reclassification, accumulation + transportation + reclassification


def energy(
    inst: Instance,
    catalog: "PathCatalog",
    design: "ServiceDesign",
    state: "FlowState",
    penalties: PenaltyConfig,
) -> EnergyBreakdown:
    acc, trans, recl, _ = plan_cost(inst, catalog, design, state)
    trains, cars, tracks = capacity_usage(inst, catalog, design, state)
    lo, yo, to = overflow_totals(inst, trains, cars, tracks)
    return EnergyBreakdown.compose(acc, trans, recl, lo, yo, to, penalties)


def default_penalties(inst: Instance, catalog: "PathCatalog") -> PenaltyConfig:
    """``10 * Z0 / total usable link capacity``, floored at 1e3.

    ``Z0`` is the plan cost of the initial (adjacent-services) solution, routed
    with floor-level penalties.
    """
    from .anneal import initial_solution

    provisional = PenaltyConfig()
    design, state = initial_solution(inst, catalog, provisional)
    z0 = plan_cost(inst, catalog, design, state)[3]
    total_capacity = fsum(link_usable_capacity(inst, lk) for lk in inst.link)
    beta = PENALTY_FLOOR
    if 0 < total_capacity < math.inf:
        beta = max(PENALTY_FLOOR, 10.0 * z0 / total_capacity)
    return PenaltyConfig(beta, beta, beta)


def utilization_rows(
    inst: Instance, catalog: "PathCatalog", design: "ServiceDesign", state: "FlowState"
) -> tuple[list[dict], list[dict]]:
    """Per-link and per-yard usage against usable capacity, for reports."""
    trains, cars, tracks = capacity_usage(inst, catalog, design, state)

    def pct(used: float, cap: float) -> float | None:
        if math.isinf(cap):
            return None
        if cap == 0:
            return None if used == 0 else math.inf
        return 100.0 * used / cap

    link_rows = []
    for lk in sorted(inst.link, key=lambda p: (inst.rank[p[0]], inst.rank[p[1]])):
        cap = link_usable_capacity(inst, lk)
        link_rows.append({"link": list(lk), "trains": trains[lk], "usable": cap,
                          "overflow": max(0.0, trains[lk] - cap), "utilization_pct": pct(trains[lk], cap)})
    yard_rows = []
    for y in inst.yard_ids:
        cap = yard_usable_capacity(inst, y)
        tc = inst.yard[y].track_count
        yard_rows.append({"yard": y, "reclassified_cars": cars[y], "usable_cars": cap,
                          "reclass_overflow": max(0.0, cars[y] - cap),
                          "reclass_utilization_pct": pct(cars[y], cap),
                          "tracks": tracks[y], "track_count": tc,
                          "track_overflow": max(0.0, tracks[y] - tc)})
    return link_rows, yard_rows

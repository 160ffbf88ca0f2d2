"""Simulated annealing over service designs.

A design is the set of provided services plus the path each one runs on; the
car flows are re-derived from it with :func:`route_all` after every move.
Services between adjacent yards and forced services are always provided, so
every visited design can deliver every shipment.

Random numbers come from numpy's PCG64. ``SeedSequence(seed).spawn(3)`` gives
three independent streams: initial-temperature sampling, move proposals, and
acceptance draws (one uniform per generated move).
"""

from __future__ import annotations

import math
import statistics
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from .energy import EnergyBreakdown, PenaltyConfig, default_penalties, energy
from .instance import Instance, Pair
from .paths import PathCatalog
from .routing import FlowState, ServiceDesign, check_design, route_all

RNG_NAME = "numpy.random.PCG64 via SeedSequence(seed).spawn(3): [init, moves, accept]"


class InfeasibleInstanceError(ValueError):
    pass


class StopReason(str, Enum):
    ACCEPTANCE_FLOOR = "acceptance_floor"
    STALLED = "stalled"
    MOVE_BUDGET = "move_budget"
    COOLING_LIMIT = "cooling_limit"


@dataclass(frozen=True)
class SaConfig:
    seed: int = 0
    h1: float = 5.0
    h2: float = 2.0
    h3: float = 0.97
    delta: float = 0.4
    stat_cooling_iters: int = 70
    accept_floor: float = 0.001
    stall_coolings: int = 30
    stall_rel_tol: float = 1e-4
    init_accept_ratio: float = 0.95
    init_samples: int = 100
    init_temp_fallback: float = 1.0
    path_reselect_prob: float = 0.2
    max_coolings: int = 5000
    max_moves: int | None = None
    cache_size: int = 200_000
    debug: bool = False

    def __post_init__(self):
        if not 0 < self.h3 < 1:
            raise ValueError("h3 must lie in (0, 1)")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not 0 < self.init_accept_ratio < 1:
            raise ValueError("init_accept_ratio must lie in (0, 1)")
        if not self.h1 >= self.h2 > 0:
            raise ValueError("need h1 >= h2 > 0")
        if not 0 <= self.path_reselect_prob <= 1:
            raise ValueError("path_reselect_prob must lie in [0, 1]")
        if self.init_samples < 100:
            raise ValueError("init_samples must be >= 100")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass(frozen=True)
class CoolingRecord:
    step: int
    sigma: float
    mean_energy: float
    stderr_energy: float  # spread of the energy at this temperature (std. deviation)
    accept_rate: float
    best_energy: float
    generated: int
    accepted: int


@dataclass
class SaRun:
    best_design: ServiceDesign
    best_state: FlowState
    best_breakdown: EnergyBreakdown
    trace: list[CoolingRecord]
    iterations: int
    stop_reason: StopReason
    initial_temperature: float
    config: SaConfig
    penalties: PenaltyConfig
    rng: str = RNG_NAME
    evaluations: int = field(default=0, compare=False)

    @property
    def best_energy(self) -> float:
        return self.best_breakdown.E


def mandatory_design(inst: Instance, catalog: PathCatalog) -> ServiceDesign:
    """Adjacent-pair services plus forced services on their shortest or prescribed path."""
    choice: dict[Pair, int] = {}
    for pair in sorted(inst.adjacent_pairs | inst.operational_sets.forced_services,
                       key=lambda p: (inst.rank[p[0]], inst.rank[p[1]])):
        paths = catalog.get(pair)
        if not paths:
            raise InfeasibleInstanceError(f"forced service {pair[0]}->{pair[1]} has no candidate path")
        fixed = catalog.mandatory_index(pair)
        choice[pair] = 0 if fixed is None else fixed
    return ServiceDesign(choice)


def initial_solution(
    inst: Instance, catalog: PathCatalog, penalties: PenaltyConfig | None = None
) -> tuple[ServiceDesign, FlowState]:
    design = mandatory_design(inst, catalog)
    return design, route_all(inst, catalog, design, penalties)


def potential_services(inst: Instance, catalog: PathCatalog) -> list[Pair]:
    """Services the search may switch on or off, in yard-rank order."""
    ops = inst.operational_sets
    fixed = inst.adjacent_pairs | ops.forced_services | ops.forbidden_services
    return sorted((p for p in catalog.pairs() if p not in fixed),
                  key=lambda p: (inst.rank[p[0]], inst.rank[p[1]]))


def propose(
    rng: np.random.Generator,
    catalog: PathCatalog,
    design: ServiceDesign,
    potential: list[Pair],
    reselect_prob: float,
) -> ServiceDesign:
    """One random move: toggle a potential service, or re-draw a service's path."""
    def reselect_targets():
        return [p for p in potential
                if p in design.path_choice and len(catalog.get(p)) > 1 and catalog.mandatory_index(p) is None]

    if reselect_prob > 0 and rng.random() < reselect_prob:
        targets = reselect_targets()
        if targets:
            return _reselect(rng, catalog, design, targets)
    if potential:
        pair = potential[int(rng.integers(len(potential)))]
        if pair in design.path_choice:
            return design.without(pair)
        fixed = catalog.mandatory_index(pair)
        idx = fixed if fixed is not None else int(rng.integers(len(catalog.get(pair))))
        return design.with_service(pair, idx)
    targets = reselect_targets()
    if targets:
        return _reselect(rng, catalog, design, targets)
    return design


def _reselect(rng, catalog, design, targets) -> ServiceDesign:
    pair = targets[int(rng.integers(len(targets)))]
    others = [p.index for p in catalog.get(pair) if p.index != design.path_choice[pair]]
    return design.with_service(pair, others[int(rng.integers(len(others)))])


def neighbor(
    rng: np.random.Generator,
    inst: Instance,
    catalog: PathCatalog,
    current: tuple[ServiceDesign, FlowState],
    penalties: PenaltyConfig | None = None,
    reselect_prob: float = 0.2,
) -> tuple[ServiceDesign, FlowState]:
    design = propose(rng, catalog, current[0], potential_services(inst, catalog), reselect_prob)
    return design, route_all(inst, catalog, design, penalties)


class Evaluator:
    """Energy of a design, memoised on the design key (bounded LRU)."""

    def __init__(self, inst: Instance, catalog: PathCatalog, penalties: PenaltyConfig, cache_size: int = 200_000):
        self.inst = inst
        self.catalog = catalog
        self.penalties = penalties
        self.cache_size = cache_size
        self.cache: OrderedDict[tuple, EnergyBreakdown] = OrderedDict()
        self.evaluations = 0

    def __call__(self, design: ServiceDesign) -> EnergyBreakdown:
        hit = self.cache.get(design.key)
        if hit is not None:
            self.cache.move_to_end(design.key)
            return hit
        self.evaluations += 1
        state = route_all(self.inst, self.catalog, design, self.penalties)
        result = energy(self.inst, self.catalog, design, state, self.penalties)
        self.cache[design.key] = result
        if len(self.cache) > self.cache_size:
            self.cache.popitem(last=False)
        return result


def initial_temperature(
    rng: np.random.Generator,
    inst: Instance,
    catalog: PathCatalog,
    design0: ServiceDesign,
    cfg: SaConfig,
    penalties: PenaltyConfig | None = None,
    evaluate: Evaluator | None = None,
) -> float:
    """Temperature at which an average uphill move is accepted with ``init_accept_ratio``."""
    if evaluate is None:
        evaluate = Evaluator(inst, catalog, penalties or default_penalties(inst, catalog))
    potential = potential_services(inst, catalog)
    e0 = evaluate(design0).E
    uphill = []
    for _ in range(cfg.init_samples):
        d = evaluate(propose(rng, catalog, design0, potential, cfg.path_reselect_prob)).E - e0
        if d > 0:
            uphill.append(d)
    if not uphill:
        return cfg.init_temp_fallback
    return statistics.fmean(uphill) / math.log(1.0 / cfg.init_accept_ratio)


def update_temperature(i: int, sigma: float, spread: float, cfg: SaConfig) -> float:
    """Statistical cooling for the first ``stat_cooling_iters`` steps, geometric afterwards.

    A spread too small to give a positive temperature counts as no spread.
    """
    if i <= cfg.stat_cooling_iters and spread > 0:
        nxt = sigma / (1.0 + sigma * math.log1p(cfg.delta) / (3.0 * spread))
        if nxt > 0:
            return nxt
    return cfg.h3 * sigma


def metropolis_accept(delta_e: float, sigma: float, u: float) -> bool:
    return delta_e <= 0 or u < math.exp(-delta_e / sigma)


def anneal(
    inst: Instance,
    catalog: PathCatalog,
    cfg: SaConfig | None = None,
    penalties: PenaltyConfig | None = None,
) -> SaRun:
    cfg = cfg or SaConfig()
    penalties = penalties or default_penalties(inst, catalog)
    init_ss, move_ss, accept_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_init = np.random.Generator(np.random.PCG64(init_ss))
    rng_move = np.random.Generator(np.random.PCG64(move_ss))
    rng_accept = np.random.Generator(np.random.PCG64(accept_ss))

    evaluate = Evaluator(inst, catalog, penalties, cfg.cache_size)
    potential = potential_services(inst, catalog)
    current = mandatory_design(inst, catalog)
    current_e = evaluate(current).E
    best, best_e = current, current_e
    sigma = initial_temperature(rng_init, inst, catalog, current, cfg, penalties, evaluate)
    sigma0 = sigma

    trace: list[CoolingRecord] = []
    moves = 0
    stall = 0
    prev_mean = None
    step = 0
    while True:
        size = len(potential) + len(current)
        gen_limit = max(1, math.ceil(cfg.h1 * size))
        acc_limit = max(1, math.ceil(cfg.h2 * size))
        generated = accepted = 0
        energies = []
        budget_hit = False
        while generated < gen_limit and accepted < acc_limit:
            if cfg.max_moves is not None and moves >= cfg.max_moves:
                budget_hit = True
                break
            cand = propose(rng_move, catalog, current, potential, cfg.path_reselect_prob)
            if cfg.debug:
                check_design(inst, catalog, cand)
                assert inst.adjacent_pairs <= cand.provided
            generated += 1
            moves += 1
            cand_e = evaluate(cand).E
            u = rng_accept.random()
            if metropolis_accept(cand_e - current_e, sigma, u):
                current, current_e = cand, cand_e
                accepted += 1
                if current_e < best_e:
                    best, best_e = current, current_e
            energies.append(current_e)

        if generated:
            mean = statistics.fmean(energies)
            spread = statistics.pstdev(energies) if len(energies) > 1 else 0.0
            rate = accepted / generated
            trace.append(CoolingRecord(step, sigma, mean, spread, rate, best_e, generated, accepted))
        if budget_hit or (cfg.max_moves is not None and moves >= cfg.max_moves):
            reason = StopReason.MOVE_BUDGET
            break
        if rate < cfg.accept_floor:
            reason = StopReason.ACCEPTANCE_FLOOR
            break
        if prev_mean is not None and abs(mean - prev_mean) <= cfg.stall_rel_tol * max(abs(prev_mean), 1e-12):
            stall += 1
        else:
            stall = 0
        prev_mean = mean
        if stall >= cfg.stall_coolings:
            reason = StopReason.STALLED
            break
        if step + 1 >= cfg.max_coolings:
            reason = StopReason.COOLING_LIMIT
            break
        sigma = update_temperature(step, sigma, spread, cfg)
        step += 1

    state = route_all(inst, catalog, best, penalties)
    breakdown = energy(inst, catalog, best, state, penalties)
    return SaRun(best, state, breakdown, trace, moves, reason, sigma0, cfg, penalties,
                 evaluations=evaluate.evaluations)


def _run_seed(args) -> SaRun:
    inst, catalog, cfg, penalties = args
    return anneal(inst, catalog, cfg, penalties)


def multistart(
    inst: Instance,
    catalog: PathCatalog,
    cfg: SaConfig,
    starts: int,
    penalties: PenaltyConfig | None = None,
    workers: int | None = None,
) -> SaRun:
    """Independent runs with seeds ``cfg.seed + r``; the lowest energy wins (ties: lower seed)."""
    penalties = penalties or default_penalties(inst, catalog)
    cfgs = [SaConfig(**{**asdict(cfg), "seed": cfg.seed + r}) for r in range(starts)]
    jobs = [(inst, catalog, c, penalties) for c in cfgs]
    if starts == 1 or workers == 1:
        runs = [_run_seed(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_run_seed, jobs))
    return min(runs, key=lambda r: (r.best_energy, r.config.seed))

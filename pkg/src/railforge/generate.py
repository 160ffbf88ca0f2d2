"""Random connected instances for experiments and scale tests.

Parameter ranges bracket the six-yard fixture: accumulation parameters in
[8, 12] hours, relative delays in [2, 5], train sizes from {40, 50, 60}.
The network is a random spanning tree plus extra lines, so it is always
connected. Output is a pure function of the arguments and the seed.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .energy import capacity_usage
from .instance import SCHEMA_TAG, Instance, parse_instance
from .paths import build_catalog

TRAIN_SIZES = (40, 50, 60)


def generate_document(
    n_yards: int,
    line_density: float,
    demand_density: float,
    seed: int,
    *,
    volume_range: tuple[int, int] = (5, 60),
    length_range: tuple[float, float] = (50.0, 300.0),
    transport_weight: float = 0.01,
    track_breakpoint_step: float = 200.0,
    path_count_k: int = 3,
) -> dict:
    """Instance document with unlimited capacities.

    ``line_density`` is the fraction of non-tree yard pairs joined by an extra
    line; ``demand_density`` the fraction of ordered yard pairs with a demand.
    """
    if n_yards < 2:
        raise ValueError("a network needs at least 2 yards")
    if not 0.0 <= line_density <= 1.0:
        raise ValueError("line_density must lie in [0, 1]")
    if not 0.0 <= demand_density <= 1.0:
        raise ValueError("demand_density must lie in [0, 1]")
    lo, hi = volume_range
    if not 1 <= lo <= hi:
        raise ValueError("volume_range must satisfy 1 <= low <= high")

    rng = np.random.default_rng(seed)
    ids = [str(i + 1) for i in range(n_yards)]
    yards = [
        {
            "id": y,
            "accumulation_param": round(float(rng.uniform(8.0, 12.0)), 2),
            "relative_delay": round(float(rng.uniform(2.0, 5.0)), 2),
            "reclass_capacity": None,
            "reclass_capacity_factor": 1.0,
            "track_count": None,
        }
        for y in ids
    ]

    # random spanning tree: each yard attaches to one earlier yard of a shuffled order
    order = [ids[i] for i in rng.permutation(n_yards)]
    edges = set()
    for pos in range(1, n_yards):
        other = order[int(rng.integers(pos))]
        edges.add(tuple(sorted((order[pos], other), key=int)))
    rest = [p for p in itertools.combinations(ids, 2) if p not in edges]
    extra = int(round(line_density * len(rest)))
    for idx in sorted(rng.choice(len(rest), size=extra, replace=False).tolist()) if extra else ():
        edges.add(rest[idx])
    lines = [
        {"endpoints": [a, b], "length": round(float(rng.uniform(*length_range)), 1), "capacity_trains": None}
        for a, b in sorted(edges, key=lambda e: (int(e[0]), int(e[1])))
    ]

    pairs = [(a, b) for a in ids for b in ids if a != b]
    count = int(round(demand_density * len(pairs)))
    chosen = sorted(rng.choice(len(pairs), size=count, replace=False).tolist()) if count else []
    demands = [
        {"origin": pairs[i][0], "destination": pairs[i][1], "volume": int(rng.integers(lo, hi + 1))}
        for i in chosen
    ]

    return {
        "schema": SCHEMA_TAG,
        "yards": yards,
        "lines": lines,
        "demands": demands,
        "service_params": {
            "train_size": int(rng.choice(TRAIN_SIZES)),
            "accumulation_conversion": 1.0,
            "transport_weight": transport_weight,
        },
        "forced_services": [],
        "forbidden_services": [],
        "prescribed_paths": [],
        "options": {"track_breakpoint_step": track_breakpoint_step, "path_count_k": path_count_k},
    }


def apply_capacity_factor(doc: dict, factor: float) -> dict:
    """Set every capacity to ``factor`` times its use by the initial solution (rounded up).

    Unused links get room for one train and unused yards one track, so the
    search still has some slack to open new services.
    """
    from .anneal import initial_solution

    if not factor > 0:
        raise ValueError("capacity factor must be > 0")
    inst = parse_instance(doc)
    catalog = build_catalog(inst)
    design, state = initial_solution(inst, catalog)
    trains, cars, tracks = capacity_usage(inst, catalog, design, state)
    out = {**doc, "yards": [dict(y) for y in doc["yards"]], "lines": [dict(ln) for ln in doc["lines"]]}
    for y in out["yards"]:
        y["reclass_capacity"] = math.ceil(factor * cars[y["id"]])
        y["track_count"] = max(1, math.ceil(factor * tracks[y["id"]]))
    for ln in out["lines"]:
        a, b = ln["endpoints"]
        use = max(trains[(a, b)], trains[(b, a)])
        ln["capacity_trains"] = max(1, math.ceil(factor * use - 1e-9))
    return out


def generate_instance(
    n_yards: int,
    line_density: float,
    demand_density: float,
    seed: int,
    capacity_factor: float | None = None,
    **kwargs,
) -> Instance:
    doc = generate_document(n_yards, line_density, demand_density, seed, **kwargs)
    if capacity_factor is not None:
        doc = apply_capacity_factor(doc, capacity_factor)
    return parse_instance(doc)

"""Solution and design documents, and trace dumps.

A solution document carries everything needed to re-check a plan: the
instance digest, the design, the flows, the energy breakdown and the solver
settings. It deliberately holds no timestamps or wall-clock figures, so the
same instance, configuration and seed always give a byte-identical file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterable

from .anneal import CoolingRecord, SaRun
from .energy import EnergyBreakdown, PenaltyConfig
from .instance import Instance
from .paths import PathCatalog
from .routing import FlowState, ServiceDesign

SOLUTION_TAG = "railforge-solution/1"
DESIGN_TAG = "railforge-design/1"
TRACE_COLUMNS = ("step", "sigma", "mean_E", "stderr_E", "accept_rate", "best_E")


class DocumentError(ValueError):
    pass


def instance_digest(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode()
    return "sha256:" + hashlib.sha256(data).hexdigest()


def design_records(inst: Instance, catalog: PathCatalog, design: ServiceDesign) -> list[dict]:
    rank = inst.rank
    out = []
    for (i, k), idx in sorted(design.path_choice.items(), key=lambda kv: (rank[kv[0][0]], rank[kv[0][1]])):
        out.append({"pair": [i, k], "path_index": idx, "yards": list(catalog.path((i, k), idx).yards)})
    return out


def design_from_records(records: Iterable[dict], catalog: PathCatalog) -> ServiceDesign:
    """Rebuild a design; a ``yards`` entry, when present, must match the catalog path."""
    choice = {}
    for rec in records:
        try:
            pair = (rec["pair"][0], rec["pair"][1])
        except (KeyError, IndexError, TypeError) as exc:
            raise DocumentError(f"malformed service entry: {rec!r}") from exc
        if pair in choice:
            raise DocumentError(f"service {pair[0]}->{pair[1]} listed twice")
        paths = catalog.get(pair)
        if "path_index" in rec:
            idx = rec["path_index"]
        elif "yards" in rec:
            matches = [p.index for p in paths if list(p.yards) == list(rec["yards"])]
            if not matches:
                raise DocumentError(f"service {pair[0]}->{pair[1]}: path {rec['yards']} is not a candidate path")
            idx = matches[0]
        else:
            idx = 0
        if not isinstance(idx, int) or not 0 <= idx < len(paths):
            raise DocumentError(f"service {pair[0]}->{pair[1]}: no candidate path with index {idx}")
        if "yards" in rec and list(paths[idx].yards) != list(rec["yards"]):
            raise DocumentError(f"service {pair[0]}->{pair[1]}: yards do not match candidate path {idx}")
        choice[pair] = idx
    return ServiceDesign(choice)


def design_document(inst: Instance, catalog: PathCatalog, design: ServiceDesign) -> dict:
    return {"schema": DESIGN_TAG, "services": design_records(inst, catalog, design)}


def _finite(value: float) -> float | None:
    return None if isinstance(value, float) and math.isinf(value) else value


def solution_document(
    inst: Instance,
    catalog: PathCatalog,
    digest: str,
    design: ServiceDesign,
    state: FlowState,
    breakdown: EnergyBreakdown,
    solver: dict[str, Any],
) -> dict:
    return {
        "schema": SOLUTION_TAG,
        "instance_digest": digest,
        "design": design_records(inst, catalog, design),
        "flows": state.to_dict(inst),
        "energy": breakdown.to_dict(),
        "feasible": breakdown.feasible,
        "solver": solver,
    }


def sa_solver_metadata(run: SaRun, starts: int = 1) -> dict[str, Any]:
    return {
        "method": "simulated_annealing",
        "seed": run.config.seed,
        "starts": starts,
        "config": {k: _finite(v) for k, v in asdict(run.config).items()},
        "penalties": asdict(run.penalties),
        "rng": run.rng,
        "stop_reason": run.stop_reason.value,
        "iterations": run.iterations,
        "cooling_steps": len(run.trace),
        "initial_temperature": run.initial_temperature,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


def read_document(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or doc.get("schema") not in (SOLUTION_TAG, DESIGN_TAG):
        raise DocumentError(f"{path}: expected schema {SOLUTION_TAG!r} or {DESIGN_TAG!r}")
    return doc


def write_trace_csv(path: str | Path, trace: Iterable[CoolingRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for rec in trace:
            w.writerow([rec.step, repr(rec.sigma), repr(rec.mean_energy), repr(rec.stderr_energy),
                        repr(rec.accept_rate), repr(rec.best_energy)])


def penalties_from(doc: dict, default: PenaltyConfig) -> PenaltyConfig:
    stored = (doc.get("solver") or {}).get("penalties")
    return PenaltyConfig(**stored) if stored else default

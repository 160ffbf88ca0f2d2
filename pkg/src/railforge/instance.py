"""Problem instances: yards, rail lines, OD demands and operating rules.

Instances are immutable. The on-disk format is a single JSON document tagged
``schema: "railforge/1"``; undirected ``lines`` are expanded into one
:class:`Link` per direction when loaded.
"""

from __future__ import annotations

import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema

SCHEMA_TAG = "railforge/1"

Pair = tuple[str, str]


class InstanceError(Exception):
    """Base class for instance loading failures."""


class InstanceParseError(InstanceError):
    """The document does not match the instance file schema."""

    def __init__(self, message: str, location: str = "$"):
        super().__init__(f"{location}: {message}")
        self.location = location


class InstanceIntegrityError(InstanceError):
    """The document refers to yards, links or paths that do not exist."""


@dataclass(frozen=True)
class Yard:
    id: str
    accumulation_param: float
    relative_delay: float
    reclass_capacity: float = math.inf
    reclass_capacity_factor: float = 1.0
    track_count: float = math.inf

    @property
    def usable_reclass_capacity(self) -> float:
        return self.reclass_capacity_factor * self.reclass_capacity


@dataclass(frozen=True)
class Link:
    """One direction of a rail line."""

    endpoints: Pair
    length: float
    transport_cost_per_car: float
    capacity_trains: float = math.inf
    remaining_capacity_rate: float = 1.0

    @property
    def usable_capacity(self) -> float:
        return self.remaining_capacity_rate * self.capacity_trains


@dataclass(frozen=True)
class Demand:
    origin: str
    destination: str
    volume: int


@dataclass(frozen=True)
class ServiceParams:
    train_size: float = 50
    train_size_overrides: Mapping[Pair, float] = field(default_factory=dict)
    accumulation_conversion: float = 1.0
    transport_weight: float = 1.0

    def train_size_for(self, pair: Pair) -> float:
        return self.train_size_overrides.get(pair, self.train_size)


@dataclass(frozen=True)
class OperationalSets:
    forced_services: frozenset[Pair] = frozenset()
    forbidden_services: frozenset[Pair] = frozenset()
    prescribed_paths: Mapping[Pair, tuple[str, ...]] = field(default_factory=dict)


def _natural_key(yard_id: str) -> tuple:
    return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", yard_id) if tok != "") or ("",)


@dataclass(frozen=True)
class Instance:
    yards: tuple[Yard, ...]
    links: tuple[Link, ...]
    demands: tuple[Demand, ...]
    service_params: ServiceParams = field(default_factory=ServiceParams)
    operational_sets: OperationalSets = field(default_factory=OperationalSets)
    track_breakpoint_step: float = 200
    path_count_k: int = 3

    # Derived lookups. Yards are ranked by natural id order ("2" < "10"); the
    # rank drives every deterministic tie-break in the package.

    @cached_property
    def yard_ids(self) -> tuple[str, ...]:
        return tuple(sorted((y.id for y in self.yards), key=_natural_key))

    @cached_property
    def rank(self) -> dict[str, int]:
        return {y: i for i, y in enumerate(self.yard_ids)}

    @cached_property
    def yard(self) -> dict[str, Yard]:
        return {y.id: y for y in self.yards}

    @cached_property
    def link(self) -> dict[Pair, Link]:
        return {lk.endpoints: lk for lk in self.links}

    @cached_property
    def successors(self) -> dict[str, tuple[str, ...]]:
        out: dict[str, list[str]] = {y: [] for y in self.yard_ids}
        for a, b in self.link:
            if a in out:
                out[a].append(b)
        return {a: tuple(sorted(bs, key=self.rank.__getitem__)) for a, bs in out.items()}

    @cached_property
    def adjacent_pairs(self) -> frozenset[Pair]:
        return frozenset(self.link)

    @cached_property
    def demand_volume(self) -> dict[Pair, int]:
        vol: dict[Pair, int] = defaultdict(int)
        for d in self.demands:
            vol[(d.origin, d.destination)] += d.volume
        return dict(vol)

    @cached_property
    def demands_by_destination(self) -> dict[str, list[tuple[str, int]]]:
        by_dest: dict[str, list[tuple[str, int]]] = defaultdict(list)
        for (o, d), v in self.demand_volume.items():
            if v > 0:
                by_dest[d].append((o, v))
        for d in by_dest:
            by_dest[d].sort(key=lambda ov: self.rank[ov[0]])
        return dict(by_dest)

    def train_size(self, pair: Pair) -> float:
        return self.service_params.train_size_for(pair)

    def accumulation_cost(self, pair: Pair) -> float:
        """Converted accumulation cost of one service departing ``pair[0]``."""
        sp = self.service_params
        return sp.accumulation_conversion * self.yard[pair[0]].accumulation_param * sp.train_size_for(pair)

    def path_links_exist(self, yards: Iterable[str]) -> bool:
        seq = list(yards)
        return all((a, b) in self.link for a, b in zip(seq, seq[1:]))


# ---------------------------------------------------------------------------
# JSON document handling

_NUM = {"type": ["number", "null"]}
_ID = {"type": "string"}
_PAIR = {"type": "array", "items": _ID, "minItems": 2, "maxItems": 2}

INSTANCE_JSON_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["schema", "yards", "lines", "demands"],
    "properties": {
        "schema": {"const": SCHEMA_TAG},
        "yards": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "accumulation_param", "relative_delay"],
                "properties": {
                    "id": _ID,
                    "accumulation_param": {"type": "number"},
                    "relative_delay": {"type": "number"},
                    "reclass_capacity": _NUM,
                    "reclass_capacity_factor": {"type": "number"},
                    "track_count": _NUM,
                },
                "additionalProperties": False,
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["endpoints", "length"],
                "properties": {
                    "endpoints": _PAIR,
                    "length": {"type": "number"},
                    "transport_cost_per_car": {"type": "number"},
                    "capacity_trains": _NUM,
                    "capacity_cars": _NUM,
                    "remaining_capacity_rate": {"type": "number"},
                    "directed": {"type": "boolean"},
                },
                "not": {"required": ["capacity_trains", "capacity_cars"]},
                "additionalProperties": False,
            },
        },
        "demands": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["origin", "destination", "volume"],
                "properties": {"origin": _ID, "destination": _ID, "volume": {"type": "integer"}},
                "additionalProperties": False,
            },
        },
        "service_params": {
            "type": "object",
            "properties": {
                "train_size": {"type": "number"},
                "train_size_overrides": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["pair", "train_size"],
                        "properties": {"pair": _PAIR, "train_size": {"type": "number"}},
                        "additionalProperties": False,
                    },
                },
                "accumulation_conversion": {"type": "number"},
                "transport_weight": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "forced_services": {"type": "array", "items": _PAIR},
        "forbidden_services": {"type": "array", "items": _PAIR},
        "prescribed_paths": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["pair", "yards"],
                "properties": {"pair": _PAIR, "yards": {"type": "array", "items": _ID, "minItems": 2}},
                "additionalProperties": False,
            },
        },
        "options": {
            "type": "object",
            "properties": {
                "track_breakpoint_step": {"type": "number"},
                "path_count_k": {"type": "integer"},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _num(value: float | None) -> float:
    return math.inf if value is None else value


def _json_num(value: float) -> float | None:
    return None if math.isinf(value) else value


def parse_instance(text: str | bytes | Mapping[str, Any]) -> Instance:
    """Build an :class:`Instance` from a JSON document (text or decoded)."""
    if isinstance(text, Mapping):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InstanceParseError(f"invalid JSON ({exc.msg})", f"line {exc.lineno} col {exc.colno}") from exc

    validator = jsonschema.Draft7Validator(INSTANCE_JSON_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        loc = "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        raise InstanceParseError(err.message, loc)

    yards = tuple(
        Yard(
            id=y["id"],
            accumulation_param=y["accumulation_param"],
            relative_delay=y["relative_delay"],
            reclass_capacity=_num(y.get("reclass_capacity")),
            reclass_capacity_factor=y.get("reclass_capacity_factor", 1.0),
            track_count=_num(y.get("track_count")),
        )
        for y in doc["yards"]
    )
    ids = [y.id for y in yards]
    dupes = sorted({y for y in ids if ids.count(y) > 1})
    if dupes:
        raise InstanceIntegrityError(f"duplicate yard ids: {dupes}")
    known = set(ids)

    def check_ref(yard_id: str, where: str) -> None:
        if yard_id not in known:
            raise InstanceIntegrityError(f"{where}: unknown yard {yard_id!r}")

    sp_doc = doc.get("service_params", {})
    overrides: dict[Pair, float] = {}
    for n, item in enumerate(sp_doc.get("train_size_overrides", [])):
        pair = tuple(item["pair"])
        for y in pair:
            check_ref(y, f"$.service_params.train_size_overrides[{n}]")
        overrides[pair] = item["train_size"]
    params = ServiceParams(
        train_size=sp_doc.get("train_size", 50),
        train_size_overrides=overrides,
        accumulation_conversion=sp_doc.get("accumulation_conversion", 1.0),
        transport_weight=sp_doc.get("transport_weight", 1.0),
    )

    links: dict[Pair, Link] = {}
    for n, ln in enumerate(doc["lines"]):
        a, b = ln["endpoints"]
        check_ref(a, f"$.lines[{n}]")
        check_ref(b, f"$.lines[{n}]")
        if "capacity_cars" in ln:
            cars = ln["capacity_cars"]
            cap = math.inf if cars is None else float(math.floor(cars / params.train_size))
        else:
            cap = _num(ln.get("capacity_trains"))
        dirs = [(a, b)] if ln.get("directed", False) else [(a, b), (b, a)]
        for ends in dirs:
            if ends in links:
                raise InstanceIntegrityError(f"$.lines[{n}]: link {ends[0]}->{ends[1]} declared twice")
            links[ends] = Link(
                endpoints=ends,
                length=ln["length"],
                transport_cost_per_car=ln.get("transport_cost_per_car", ln["length"]),
                capacity_trains=cap,
                remaining_capacity_rate=ln.get("remaining_capacity_rate", 1.0),
            )

    demands = []
    for n, d in enumerate(doc["demands"]):
        check_ref(d["origin"], f"$.demands[{n}]")
        check_ref(d["destination"], f"$.demands[{n}]")
        demands.append(Demand(d["origin"], d["destination"], int(d["volume"])))

    def pair_set(key: str) -> frozenset[Pair]:
        out = set()
        for n, p in enumerate(doc.get(key, [])):
            for y in p:
                check_ref(y, f"$.{key}[{n}]")
            out.add(tuple(p))
        return frozenset(out)

    prescribed: dict[Pair, tuple[str, ...]] = {}
    for n, item in enumerate(doc.get("prescribed_paths", [])):
        pair = tuple(item["pair"])
        seq = tuple(item["yards"])
        where = f"$.prescribed_paths[{n}]"
        for y in (*pair, *seq):
            check_ref(y, where)
        if seq[0] != pair[0] or seq[-1] != pair[1]:
            raise InstanceIntegrityError(f"{where}: path {'->'.join(seq)} does not join {pair[0]} to {pair[1]}")
        for u, v in zip(seq, seq[1:]):
            if (u, v) not in links:
                raise InstanceIntegrityError(f"{where}: path uses missing link {u}->{v}")
        if len(set(seq)) != len(seq):
            raise InstanceIntegrityError(f"{where}: path {'->'.join(seq)} repeats a yard")
        prescribed[pair] = seq

    opts = doc.get("options", {})
    return Instance(
        yards=yards,
        links=tuple(links.values()),
        demands=tuple(demands),
        service_params=params,
        operational_sets=OperationalSets(
            forced_services=pair_set("forced_services"),
            forbidden_services=pair_set("forbidden_services"),
            prescribed_paths=prescribed,
        ),
        track_breakpoint_step=opts.get("track_breakpoint_step", 200),
        path_count_k=opts.get("path_count_k", 3),
    )


def load_instance(path: str | Path) -> Instance:
    return parse_instance(Path(path).read_text())


def instance_to_dict(inst: Instance) -> dict[str, Any]:
    """Serialize to the JSON document layout; ``parse_instance`` inverts it."""
    lines = []
    done: set[Pair] = set()
    for lk in inst.links:
        if lk.endpoints in done:
            continue
        a, b = lk.endpoints
        rev = inst.link.get((b, a))
        entry = {
            "endpoints": [a, b],
            "length": lk.length,
            "transport_cost_per_car": lk.transport_cost_per_car,
            "capacity_trains": _json_num(lk.capacity_trains),
            "remaining_capacity_rate": lk.remaining_capacity_rate,
        }
        if rev is not None and rev == Link((b, a), lk.length, lk.transport_cost_per_car,
                                           lk.capacity_trains, lk.remaining_capacity_rate):
            done.add((b, a))
        else:
            entry["directed"] = True
        done.add((a, b))
        lines.append(entry)

    sp = inst.service_params
    ops = inst.operational_sets
    order = inst.rank.__getitem__

    def pair_key(p: Pair) -> tuple[int, int]:
        return (order(p[0]), order(p[1]))

    return {
        "schema": SCHEMA_TAG,
        "yards": [
            {
                "id": y.id,
                "accumulation_param": y.accumulation_param,
                "relative_delay": y.relative_delay,
                "reclass_capacity": _json_num(y.reclass_capacity),
                "reclass_capacity_factor": y.reclass_capacity_factor,
                "track_count": _json_num(y.track_count),
            }
            for y in inst.yards
        ],
        "lines": lines,
        "demands": [{"origin": d.origin, "destination": d.destination, "volume": d.volume} for d in inst.demands],
        "service_params": {
            "train_size": sp.train_size,
            "train_size_overrides": [
                {"pair": list(p), "train_size": m}
                for p, m in sorted(sp.train_size_overrides.items(), key=lambda kv: pair_key(kv[0]))
            ],
            "accumulation_conversion": sp.accumulation_conversion,
            "transport_weight": sp.transport_weight,
        },
        "forced_services": [list(p) for p in sorted(ops.forced_services, key=pair_key)],
        "forbidden_services": [list(p) for p in sorted(ops.forbidden_services, key=pair_key)],
        "prescribed_paths": [
            {"pair": list(p), "yards": list(seq)}
            for p, seq in sorted(ops.prescribed_paths.items(), key=lambda kv: pair_key(kv[0]))
        ],
        "options": {"track_breakpoint_step": inst.track_breakpoint_step, "path_count_k": inst.path_count_k},
    }


def dump_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity}: [{self.code}] {self.message}"


def _reachable(inst: Instance, src: str) -> set[str]:
    seen = {src}
    stack = [src]
    while stack:
        u = stack.pop()
        for v in inst.successors.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def validate_instance(inst: Instance) -> list[Diagnostic]:
    """Check every instance invariant; an empty list means the instance is valid."""
    diags: list[Diagnostic] = []

    def err(code: str, msg: str) -> None:
        diags.append(Diagnostic("error", code, msg))

    known = {y.id for y in inst.yards}
    if len(known) != len(inst.yards):
        err("yard.duplicate", "yard ids are not unique")
    for y in inst.yards:
        if not y.accumulation_param > 0:
            err("yard.accumulation_param", f"yard {y.id}: accumulation_param must be > 0, got {y.accumulation_param}")
        if y.relative_delay < 0:
            err("yard.relative_delay", f"yard {y.id}: relative_delay must be >= 0, got {y.relative_delay}")
        if y.reclass_capacity < 0:
            err("yard.reclass_capacity", f"yard {y.id}: reclass_capacity must be >= 0")
        if not 0 <= y.reclass_capacity_factor <= 1:
            err("yard.reclass_capacity_factor", f"yard {y.id}: reclass_capacity_factor must lie in [0, 1]")
        if y.track_count < 0:
            err("yard.track_count", f"yard {y.id}: track_count must be >= 0")

    for lk in inst.links:
        a, b = lk.endpoints
        name = f"link {a}->{b}"
        if a not in known or b not in known:
            err("link.endpoint", f"{name}: endpoint is not a yard")
        if a == b:
            err("link.self_loop", f"{name}: self-loop")
        if not lk.length > 0:
            err("link.length", f"{name}: length must be > 0")
        if lk.transport_cost_per_car < 0:
            err("link.transport_cost", f"{name}: transport_cost_per_car must be >= 0")
        if lk.capacity_trains < 0:
            err("link.capacity", f"{name}: capacity_trains must be >= 0")
        if not 0 <= lk.remaining_capacity_rate <= 1:
            err("link.remaining_capacity_rate", f"{name}: remaining_capacity_rate must lie in [0, 1]")

    seen_pairs: set[Pair] = set()
    for d in inst.demands:
        pair = (d.origin, d.destination)
        name = f"demand {d.origin}->{d.destination}"
        if d.origin not in known or d.destination not in known:
            err("demand.endpoint", f"{name}: endpoint is not a yard")
        if d.origin == d.destination:
            err("demand.self", f"{name}: origin equals destination")
        if d.volume < 0:
            err("demand.volume", f"{name}: volume must be >= 0, got {d.volume}")
        if pair in seen_pairs:
            err("demand.duplicate", f"{name}: more than one demand record")
        seen_pairs.add(pair)

    sp = inst.service_params
    if not sp.train_size > 0 or any(not m > 0 for m in sp.train_size_overrides.values()):
        err("params.train_size", "train sizes must be > 0")
    if not sp.accumulation_conversion > 0:
        err("params.accumulation_conversion", "accumulation_conversion must be > 0")
    if sp.transport_weight < 0:
        err("params.transport_weight", "transport_weight must be >= 0")
    if not inst.track_breakpoint_step > 0:
        err("options.track_breakpoint_step", "track_breakpoint_step must be > 0")
    if inst.path_count_k < 1:
        err("options.path_count_k", "path_count_k must be >= 1")

    ops = inst.operational_sets
    both = ops.forced_services & ops.forbidden_services
    if both:
        err("services.conflict", f"services both forced and forbidden: {sorted(both)}")
    for pair in ops.forced_services | ops.forbidden_services:
        if pair[0] == pair[1] or not set(pair) <= known:
            err("services.pair", f"service {pair} is not an ordered pair of distinct yards")
    for pair, seq in ops.prescribed_paths.items():
        if seq[0] != pair[0] or seq[-1] != pair[1] or len(set(seq)) != len(seq) or not inst.path_links_exist(seq):
            err("services.prescribed_path", f"prescribed path for {pair} is not a simple path {pair[0]}..{pair[1]}")

    if known == set(inst.yard_ids):
        reach_cache: dict[str, set[str]] = {}
        for (o, dst), v in sorted(inst.demand_volume.items()):
            if o in known and dst in known and o != dst:
                if o not in reach_cache:
                    reach_cache[o] = _reachable(inst, o)
                if dst not in reach_cache[o]:
                    err("network.disconnected", f"no rail route from {o} to {dst}")
    return diags


def has_errors(diags: Iterable[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in diags)


def sufficient_condition_services(inst: Instance, catalog=None) -> set[Pair]:
    """OD pairs whose own volume pays for a direct service.

    A pair qualifies when ``N_ij * min tau_k >= lambda * c_i * m_ij``, the
    minimum running over every interior yard of every candidate path. Adjacent
    pairs and pairs whose candidate paths have no interior yard are skipped.
    """
    from .paths import build_catalog

    if catalog is None:
        catalog = build_catalog(inst)
    out: set[Pair] = set()
    for pair, volume in inst.demand_volume.items():
        if volume <= 0 or pair in inst.adjacent_pairs:
            continue
        interior = {y for p in catalog.get(pair) for y in p.yards[1:-1]}
        if not interior:
            continue
        cheapest = min(inst.yard[k].relative_delay for k in interior)
        if volume * cheapest >= inst.accumulation_cost(pair):
            out.add(pair)
    return out

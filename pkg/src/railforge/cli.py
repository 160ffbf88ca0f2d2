"""Command-line front end.

Exit codes: 0 success (feasible plan), 1 domain violation, 2 usage or I/O
error, 3 best plan found still overflows some capacity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from .anneal import InfeasibleInstanceError, SaConfig, anneal, multistart
from .energy import PenaltyConfig, default_penalties, energy, utilization_rows
from .generate import apply_capacity_factor, generate_document
from .instance import InstanceError, InstanceIntegrityError, has_errors, parse_instance, validate_instance
from .oracle import OracleLimits, OracleSizeError, enumerate_optimum
from .paths import build_catalog
from .routing import DesignError, FlowState, RoutingError, check_design, propagate_flows, route_all
from .solution import (
    DESIGN_TAG, DocumentError, design_from_records, dumps, instance_digest, penalties_from,
    read_document, sa_solver_metadata, solution_document, write_trace_csv,
)

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3
PENALTY_FIELDS = {f.name for f in dataclasses.fields(PenaltyConfig)}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_instance(path: str):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_USAGE) from exc
    try:
        inst = parse_instance(raw)
    except InstanceIntegrityError as exc:
        raise CliError(f"{path}: {exc}", EXIT_DOMAIN) from exc
    except InstanceError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from exc
    return inst, raw


def _checked_instance(path: str):
    inst, raw = _read_instance(path)
    diags = validate_instance(inst)
    if has_errors(diags):
        raise CliError("\n".join(str(d) for d in diags if d.severity == "error"), EXIT_DOMAIN)
    try:
        catalog = build_catalog(inst)
    except InstanceIntegrityError as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    return inst, raw, catalog


def _load_config(path: str | None) -> tuple[dict, dict]:
    if path is None:
        return {}, {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_USAGE) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: invalid JSON ({exc.msg})", EXIT_USAGE) from exc
    if not isinstance(doc, dict):
        raise CliError(f"config {path}: expected a JSON object", EXIT_USAGE)
    unknown = sorted(set(doc) - SaConfig.field_names() - PENALTY_FIELDS)
    if unknown:
        raise CliError(f"config {path}: unknown field(s) {', '.join(unknown)}", EXIT_USAGE)
    sa = {k: v for k, v in doc.items() if k in SaConfig.field_names()}
    pen = {k: v for k, v in doc.items() if k in PENALTY_FIELDS}
    return sa, pen


def _penalties(inst, catalog, overrides: dict) -> PenaltyConfig:
    base = default_penalties(inst, catalog)
    try:
        return dataclasses.replace(base, **overrides) if overrides else base
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad penalty configuration: {exc}", EXIT_USAGE) from exc


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}" if v != int(v) or abs(v) >= 1e15 else f"{v:.0f}"
    return str(v)


def _report(inst, catalog, design, state, breakdown, out) -> None:
    print("energy breakdown", file=out)
    for name, value in breakdown.to_dict().items():
        print(f"  {name:<18}{_fmt(value):>16}", file=out)
    link_rows, yard_rows = utilization_rows(inst, catalog, design, state)
    busy = [r for r in link_rows if r["trains"] > 0]
    print("link utilization (trains/day)", file=out)
    for r in busy:
        print(f"  {r['link'][0]:>6} -> {r['link'][1]:<6} used {_fmt(r['trains']):>10}"
              f"  usable {_fmt(r['usable'] if r['usable'] != float('inf') else None):>8}"
              f"  overflow {_fmt(r['overflow'])}", file=out)
    print("yard utilization", file=out)
    for r in yard_rows:
        cap = r["usable_cars"] if r["usable_cars"] != float("inf") else None
        tc = r["track_count"] if r["track_count"] != float("inf") else None
        print(f"  {r['yard']:>6}  reclassified {_fmt(r['reclassified_cars']):>8} / {_fmt(cap):<8}"
              f"  tracks {r['tracks']:>4} / {_fmt(tc)}", file=out)


def _json_rows(rows):
    def clean(v):
        return None if isinstance(v, float) and v in (float("inf"), float("-inf")) else v
    return [{k: clean(v) for k, v in r.items()} for r in rows]


def _emit(doc: dict, out_path: str | None) -> None:
    if out_path:
        try:
            Path(out_path).write_text(dumps(doc))
        except OSError as exc:
            raise CliError(f"cannot write {out_path}: {exc.strerror}", EXIT_USAGE) from exc


def cmd_validate(args) -> int:
    inst, _ = _read_instance(args.instance)
    diags = validate_instance(inst)
    if args.json:
        print(json.dumps([dataclasses.asdict(d) for d in diags], indent=2))
    else:
        for d in diags:
            print(d)
        if not diags:
            print(f"{args.instance}: ok ({len(inst.yards)} yards, {len(inst.links)} directed links, "
                  f"{len(inst.demands)} demands)")
    if has_errors(diags):
        return EXIT_DOMAIN
    if args.dump_catalog:
        try:
            catalog = build_catalog(inst)
        except InstanceIntegrityError as exc:
            raise CliError(str(exc), EXIT_DOMAIN) from exc
        _emit({"k": catalog.k, "paths": catalog.to_records()}, args.dump_catalog)
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.multistart < 1:
        raise CliError("--multistart must be >= 1", EXIT_USAGE)
    sa_over, pen_over = _load_config(args.config)
    if args.seed is not None:
        sa_over["seed"] = args.seed
    try:
        cfg = SaConfig(**sa_over)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad solver configuration: {exc}", EXIT_USAGE) from exc
    inst, raw, catalog = _checked_instance(args.instance)
    penalties = _penalties(inst, catalog, pen_over)
    started = time.perf_counter()
    try:
        if args.multistart > 1:
            run = multistart(inst, catalog, cfg, args.multistart, penalties, workers=args.workers)
        else:
            run = anneal(inst, catalog, cfg, penalties)
    except (InfeasibleInstanceError, RoutingError) as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    elapsed = time.perf_counter() - started
    doc = solution_document(inst, catalog, instance_digest(raw), run.best_design, run.best_state,
                            run.best_breakdown, sa_solver_metadata(run, args.multistart))
    _emit(doc, args.out)
    if args.trace_csv:
        try:
            write_trace_csv(args.trace_csv, run.trace)
        except OSError as exc:
            raise CliError(f"cannot write {args.trace_csv}: {exc.strerror}", EXIT_USAGE) from exc
    if args.json:
        print(dumps(doc), end="")
    else:
        _report(inst, catalog, run.best_design, run.best_state, run.best_breakdown, sys.stdout)
        print(f"stop reason: {run.stop_reason.value}; {run.iterations} moves, "
              f"{len(run.trace)} cooling steps, {elapsed:.2f} s")
    return EXIT_OK if run.best_breakdown.feasible else EXIT_INFEASIBLE


def cmd_evaluate(args) -> int:
    inst, raw, catalog = _checked_instance(args.instance)
    try:
        doc = read_document(args.document)
    except OSError as exc:
        raise CliError(f"cannot read {args.document}: {exc.strerror}", EXIT_USAGE) from exc
    except DocumentError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    _, pen_over = _load_config(args.config)
    penalties = penalties_from(doc, _penalties(inst, catalog, pen_over)) if not pen_over \
        else _penalties(inst, catalog, pen_over)
    records = doc.get("services") if doc["schema"] == DESIGN_TAG else doc.get("design")
    try:
        design = design_from_records(records or [], catalog)
        check_design(inst, catalog, design)
    except DocumentError as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    except DesignError as exc:
        raise CliError(f"design violates operational constraints: {exc}", EXIT_DOMAIN) from exc

    stored_energy = None
    try:
        if doc["schema"] == DESIGN_TAG:
            state = route_all(inst, catalog, design, penalties)
        else:
            if doc.get("instance_digest") != instance_digest(raw):
                raise CliError("solution was produced from a different instance (digest mismatch)", EXIT_DOMAIN)
            state = FlowState.from_dict(doc["flows"])
            bad = [p for p in state.next_service if p[0] == p[1] or (p[0], state.next_service[p]) not in design.path_choice]
            if bad:
                raise CliError(f"assignment uses services that are not provided: {bad[:5]}", EXIT_DOMAIN)
            car_flow, service_flow = propagate_flows(inst, state.next_service)
            if car_flow != state.car_flow or {p: d for p, d in service_flow.items() if d} != \
                    {p: d for p, d in state.service_flow.items() if d}:
                raise CliError("stored flows do not follow from the stored assignment", EXIT_DOMAIN)
            stored_energy = doc.get("energy", {}).get("E")
    except RoutingError as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    except (KeyError, TypeError) as exc:
        raise CliError(f"malformed solution document: {exc}", EXIT_USAGE) from exc

    breakdown = energy(inst, catalog, design, state, penalties)
    if args.json:
        links, yards = utilization_rows(inst, catalog, design, state)
        print(json.dumps({"energy": breakdown.to_dict(), "feasible": breakdown.feasible,
                          "stored_E": stored_energy, "links": _json_rows(links), "yards": _json_rows(yards)},
                         indent=2))
    else:
        _report(inst, catalog, design, state, breakdown, sys.stdout)
        if stored_energy is not None:
            verdict = "matches" if stored_energy == breakdown.E else "DIFFERS from"
            print(f"recomputed E {verdict} stored E ({_fmt(stored_energy)})")
    if stored_energy is not None and stored_energy != breakdown.E:
        return EXIT_DOMAIN
    return EXIT_OK if breakdown.feasible else EXIT_INFEASIBLE


def cmd_oracle(args) -> int:
    _, pen_over = _load_config(args.config)
    try:
        limits = OracleLimits(args.max_designs, args.max_assignments)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    inst, raw, catalog = _checked_instance(args.instance)
    penalties = _penalties(inst, catalog, pen_over)
    started = time.perf_counter()
    try:
        result = enumerate_optimum(inst, catalog, penalties, limits)
    except OracleSizeError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except (InfeasibleInstanceError, RoutingError) as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    elapsed = time.perf_counter() - started
    solver = {"method": "exhaustive", "penalties": dataclasses.asdict(penalties),
              "limits": dataclasses.asdict(limits), "designs_evaluated": result.designs_evaluated,
              "assignments_evaluated": result.assignments_evaluated}
    doc = solution_document(inst, catalog, instance_digest(raw), result.design, result.state,
                            result.breakdown, solver)
    _emit(doc, args.out)
    if args.json:
        print(dumps(doc), end="")
    else:
        extra = sorted(set(result.design.provided) - inst.adjacent_pairs,
                       key=lambda p: (inst.rank[p[0]], inst.rank[p[1]]))
        print("optimal non-adjacent services: " + (", ".join(f"{a}->{b}" for a, b in extra) or "none"))
        _report(inst, catalog, result.design, result.state, result.breakdown, sys.stdout)
        print(f"{result.designs_evaluated} designs, {result.assignments_evaluated} assignments, {elapsed:.2f} s")
    return EXIT_OK if result.breakdown.feasible else EXIT_INFEASIBLE


def cmd_gen(args) -> int:
    try:
        doc = generate_document(args.yards, args.line_density, args.demand_density, args.seed)
        if args.capacity_factor is not None:
            doc = apply_capacity_factor(doc, args.capacity_factor)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc.strerror}", EXIT_USAGE) from exc
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="railforge", description="Train formation planning on capacitated rail networks.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check an instance file")
    v.add_argument("instance")
    v.add_argument("--dump-catalog", metavar="FILE", help="write the candidate path catalog as JSON")
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("solve", help="run simulated annealing")
    s.add_argument("instance")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", metavar="FILE", help="write the solution document here")
    s.add_argument("--json", action="store_true", help="print the solution document instead of the report")
    s.add_argument("--config", metavar="FILE", help="JSON with solver and penalty settings")
    s.add_argument("--multistart", type=int, default=1, metavar="N")
    s.add_argument("--workers", type=int, default=None, help="processes for --multistart")
    s.add_argument("--trace-csv", metavar="FILE")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="score a design or a stored solution")
    e.add_argument("instance")
    e.add_argument("document", help="solution or design JSON")
    e.add_argument("--config", metavar="FILE", help="penalty settings")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle", help="exact optimum for toy instances")
    o.add_argument("instance")
    o.add_argument("--out", metavar="FILE")
    o.add_argument("--json", action="store_true")
    o.add_argument("--config", metavar="FILE", help="penalty settings")
    o.add_argument("--max-designs", type=int, default=OracleLimits.max_designs)
    o.add_argument("--max-assignments", type=int, default=OracleLimits.max_assignments)
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("gen", help="generate a random connected instance")
    g.add_argument("--yards", type=int, required=True)
    g.add_argument("--line-density", type=float, default=0.1)
    g.add_argument("--demand-density", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--capacity-factor", type=float, default=None,
                   help="set capacities to this multiple of the initial plan's usage")
    g.add_argument("--out", metavar="FILE")
    g.set_defaults(func=cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

"""Generate a large random network, solve it through the CLI and summarize the best-energy trace."""

import argparse
import csv
import json
import tempfile
import time
from pathlib import Path

from railforge.cli import main as cli
from railforge.generate import apply_capacity_factor, generate_document


def run(args) -> int:
    work = Path(args.workdir or tempfile.mkdtemp(prefix="railforge-scale-"))
    work.mkdir(parents=True, exist_ok=True)
    doc = apply_capacity_factor(
        generate_document(args.yards, args.line_density, args.demand_density, args.seed), args.capacity_factor)
    inst, cfg = work / "instance.json", work / "config.json"
    inst.write_text(json.dumps(doc, indent=2))
    cfg.write_text(json.dumps({"seed": args.solver_seed, "h1": args.h1, "h2": args.h2,
                               "init_accept_ratio": args.init_accept_ratio, "max_moves": args.max_moves}))
    sol, trace = work / "solution.json", work / "trace.csv"
    started = time.perf_counter()
    code = cli(["solve", str(inst), "--config", str(cfg), "--out", str(sol), "--trace-csv", str(trace)])
    elapsed = time.perf_counter() - started
    with open(trace) as fh:
        best = [float(r["best_E"]) for r in csv.DictReader(fh)]
    print(f"\n{len(doc['yards'])} yards, {len(doc['demands'])} demands, {len(doc['lines'])} lines")
    print(f"exit {code} after {elapsed:.1f} s; best E {best[0]:.1f} -> {best[-1]:.1f} over {len(best)} cooling steps")
    print(f"files in {work}")
    return code


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--yards", type=int, default=50)
    ap.add_argument("--line-density", type=float, default=0.04)
    ap.add_argument("--demand-density", type=float, default=0.82)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--capacity-factor", type=float, default=1.5)
    ap.add_argument("--solver-seed", type=int, default=1)
    ap.add_argument("--h1", type=float, default=0.05)
    ap.add_argument("--h2", type=float, default=0.02)
    ap.add_argument("--init-accept-ratio", type=float, default=0.1)
    ap.add_argument("--max-moves", type=int, default=2500)
    ap.add_argument("--workdir")
    raise SystemExit(run(ap.parse_args()))


if __name__ == "__main__":
    main()

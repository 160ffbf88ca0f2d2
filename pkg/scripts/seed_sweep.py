"""Run the annealer on the six-yard network for many seeds and tally how often it hits the optimum."""

import argparse
import time
from importlib import resources

from railforge import SaConfig, anneal, build_catalog, default_penalties, enumerate_optimum, load_instance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--max-moves", type=int, default=None)
    args = ap.parse_args()

    inst = load_instance(resources.files("railforge") / "fixtures" / "six_yard.json")
    cat = build_catalog(inst)
    pen = default_penalties(inst, cat)
    target = enumerate_optimum(inst, cat, pen).energy
    hits = 0
    print(f"optimum E = {target:g}")
    print("seed  best_E    hit  moves  coolings  stop            seconds")
    for seed in range(args.seeds):
        started = time.perf_counter()
        run = anneal(inst, cat, SaConfig(seed=seed, max_moves=args.max_moves), pen)
        hit = run.best_breakdown.E == target
        hits += hit
        print(f"{seed:4d}  {run.best_breakdown.E:8g}  {'yes' if hit else 'no ':3s}  {run.iterations:5d}  "
              f"{len(run.trace):8d}  {run.stop_reason.value:14s}  {time.perf_counter() - started:7.2f}")
    print(f"hit the optimum for {hits}/{args.seeds} seeds")


if __name__ == "__main__":
    main()

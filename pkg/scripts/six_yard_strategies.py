"""Compare the two hand-built plans on the bundled six-yard network with the exact optimum.

Strategy 1 runs a train on every adjacent pair only. Strategy 2 adds a direct
3 -> 6 train routed over 3-5-6. The oracle then searches all designs.
"""

from importlib import resources

from railforge import build_catalog, default_penalties, energy, enumerate_optimum, load_instance, route_all
from railforge.anneal import mandatory_design


def main() -> None:
    inst = load_instance(resources.files("railforge") / "fixtures" / "six_yard.json")
    cat = build_catalog(inst)
    pen = default_penalties(inst, cat)
    s1 = mandatory_design(inst, cat)
    idx = [p.yards for p in cat.get(("3", "6"))].index(("3", "5", "6"))
    s2 = s1.with_service(("3", "6"), idx)
    for name, design in (("strategy 1 (adjacent only)", s1), ("strategy 2 (+ 3->6 via 5)", s2)):
        b = energy(inst, cat, design, route_all(inst, cat, design, pen), pen)
        print(f"{name:28s} Z={b.Z:8.1f} acc={b.accumulation:7.1f} reclass={b.reclassification:6.1f} "
              f"E={b.E:8.1f}")
    opt = enumerate_optimum(inst, cat, pen)
    extra = sorted(set(opt.design.provided) - inst.adjacent_pairs)
    print(f"{'exact optimum':28s} E={opt.energy:8.1f} extra services={extra} "
          f"designs evaluated={opt.designs_evaluated}")


if __name__ == "__main__":
    main()

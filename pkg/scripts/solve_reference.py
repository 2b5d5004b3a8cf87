"""Solve the reference scenario, simulate the mixture and print the policy grids.

    python3 scripts/solve_reference.py --out out/reference
"""

import argparse
import logging
import time
from pathlib import Path

from dcsplit.config import Scenario, load_scenario
from dcsplit.constrained import solve_constrained
from dcsplit.experiments import action_legend, extract_policy_grids, extract_thresholds, write_solution
from dcsplit.sim import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="scenario JSON (default: built-in reference scenario)")
    ap.add_argument("--out", default="out/reference")
    ap.add_argument("--no-sim", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    sc = load_scenario(args.config) if args.config else Scenario()
    t0 = time.perf_counter()
    rep = solve_constrained(sc.params, sc.solver)
    print(f"solved in {time.perf_counter() - t0:.1f}s: beta*={rep.mixture.beta_star:.4f} q={rep.mixture.q:.4f}")
    print(f"  avg delay rate   {rep.avg_delay:.4f}")
    print(f"  avg blocking rate {rep.avg_blocking:.6f} (bound {sc.params.b_max})")

    sim = None
    if not args.no_sim:
        sim = simulate(sc.params, rep.mixture, sc.sim)
        lo, hi = sim.ci("blocking_rate")
        print(f"  simulated blocking rate {sim.blocking_rate:.5f} CI [{lo:.5f}, {hi:.5f}]")

    legend = action_legend(sc.params)
    grids, _ = extract_policy_grids(rep)
    for g in grids:
        prof = extract_thresholds(g, sc.params)
        print(f"\nk={g.k} {g.component or 'low'}: max segments {prof.max_segments} (limit {prof.limit})")
        print("rows s1, columns s2")
        for row in g.actions:
            print("  " + " ".join(str(a) for a in row))
    print("\n" + "\n".join(f"{a}: {text}" for a, text in legend.items()))

    files = write_solution(rep, sc, Path(args.out), sim)
    print(f"\nwrote {len(files)} files to {args.out}")


if __name__ == "__main__":
    main()

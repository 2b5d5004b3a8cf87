"""Run the shipped parameter sweeps and print delay against the swept value.

    python3 scripts/run_sweeps.py --out out/sweeps [--basis per_arrival] [--no-sim]
"""

import argparse
import dataclasses
import time
from pathlib import Path

from dcsplit.config import load_scenario
from dcsplit.experiments import run_sweep, sweep_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="out/sweeps")
    ap.add_argument("--basis", choices=("rate", "per_arrival"))
    ap.add_argument("--no-sim", action="store_true")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for path in sorted(CONFIGS.glob("sweep_*.json")):
        sc = load_scenario(path)
        if args.basis:
            sc.solver = dataclasses.replace(sc.solver, constraint_basis=args.basis)
        if args.no_sim:
            sc.sweep = dataclasses.replace(sc.sweep, simulate=False)
        t0 = time.perf_counter()
        rows = run_sweep(sc.sweep, sc.solver, sc.sim, workers=args.workers)
        (out / f"{path.stem}.csv").write_text(sweep_csv(rows, sc), newline="")
        print(f"{path.stem}: {sc.sweep.parameter} ({time.perf_counter() - t0:.0f}s)")
        for r in rows:
            if r["status"] == "error":
                print(f"  {r['value']:>6}  {r['error']}")
            else:
                print(f"  {r['value']:>6}  C={r['avg_delay_exact']:.4f}  B={r['blocking_rate_exact']:.5f}")


if __name__ == "__main__":
    main()

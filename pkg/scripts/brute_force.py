"""Compare value iteration against exhaustive policy enumeration on small instances.

The enumerators live in tests/oracles.py; run from the repository root.

    python3 scripts/brute_force.py [--large]
"""

import argparse
import math
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import tiny  # noqa: E402
from oracles import brute_force_gain, brute_force_gain_blocked  # noqa: E402

from dcsplit.model import enumerate_states, feasible_actions  # noqa: E402
from dcsplit.solver import relative_value_iteration, uniformize  # noqa: E402

SMALL = [
    dict(n_m=1, n_s=1, queue_cap=0, batch_probs=(1.0,)),
    dict(n_m=1, n_s=1, queue_cap=0, batch_probs=(0.5, 0.5)),
    dict(n_m=1, n_s=1, queue_cap=1, batch_probs=(1.0,)),
    dict(n_m=2, n_s=1, queue_cap=0, batch_probs=(0.5, 0.5)),
    dict(n_m=2, n_s=2, queue_cap=0, batch_probs=(1.0,)),
]
LARGE = dict(n_m=1, n_s=1, queue_cap=1, batch_probs=(0.5, 0.5))


def check(kw, betas):
    p = tiny(**kw)
    states = enumerate_states(p)
    n_pol = math.prod(len(feasible_actions(p, s)) for s in states)
    model = uniformize(p)
    for beta in betas:
        t0 = time.perf_counter()
        best, count = (brute_force_gain if n_pol <= 10**5 else brute_force_gain_blocked)(p, beta)
        _, sol = relative_value_iteration(model, beta, tol=1e-12)
        print(f"{len(states):3d} states {count:>11d} policies beta={beta:<5} "
              f"enum={best:.10f} via={sol.gain:.10f} gap={abs(best - sol.gain):.1e} ({time.perf_counter() - t0:.1f}s)")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--large", action="store_true", help="also run the 45-state instance (a few minutes per beta)")
    ap.add_argument("--betas", type=float, nargs="+", default=[0.5, 4.0, 30.0])
    args = ap.parse_args()
    for kw in SMALL:
        check(kw, args.betas)
    if args.large:
        check(LARGE, args.betas)


if __name__ == "__main__":
    main()

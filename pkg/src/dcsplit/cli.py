"""Command line entry point.

Exit codes: 0 success, 2 bad arguments or config, 3 solver failure
(infeasible constraint, non-convergence), 4 validation outside the
confidence intervals, 5 unreadable input file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, Scenario, load_scenario
from .constrained import DegenerateMixtureError, InfeasibleConstraintError, solve_constrained
from .experiments import (
    policy_from_dict,
    run_sweep,
    sim_to_dict,
    sweep_csv,
    write_json,
    write_solution,
)
from .solver import ConvergenceError, ReducibleChainError
from .sim import realized_vs_model_delay, simulate

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("dcsplit")


def _scenario(args) -> Scenario:
    sc = load_scenario(args.config) if args.config else Scenario()
    if args.seed is not None:
        sc.sim = dataclasses.replace(sc.sim, seed=args.seed)
    if args.constraint_basis is not None:
        sc.solver = dataclasses.replace(sc.solver, constraint_basis=args.constraint_basis)
    return sc


def cmd_solve(args) -> int:
    sc = _scenario(args)
    rep = solve_constrained(sc.params, sc.solver)
    sim = simulate(sc.params, rep.mixture, sc.sim) if args.simulate else None
    out = Path(args.out)
    write_solution(rep, sc, out, sim)
    print(
        f"status={rep.status} C={rep.avg_delay:.6g} B_rate={rep.avg_blocking:.6g} "
        f"B_per_arrival={rep.blocking_per_arrival:.6g} beta*={rep.mixture.beta_star:.6g} q={rep.mixture.q:.6g} -> {out}"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    try:
        data = json.loads(Path(args.policy).read_text())
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read policy file {args.policy}: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        mix = policy_from_dict(data, sc.params)
    except (ValueError, KeyError) as e:
        print(f"error: policy file {args.policy}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.trace:
        sc.sim = dataclasses.replace(sc.sim, trace_path=args.trace)
    rep = simulate(sc.params, mix, sc.sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = sim_to_dict(rep)
    data["seed"] = sc.sim.seed
    data["config_digest"] = sc.digest()
    write_json(out / "sim_report.json", data)
    print(f"C_rate={rep.delay_rate:.6g} B_rate={rep.blocking_rate:.6g} events={rep.events} -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    if sc.sweep is None:
        raise ConfigError("sweep: missing section (parameter, values)")
    rows = run_sweep(sc.sweep, sc.solver, sc.sim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = (Path(args.config).stem if args.config else "sweep") + ".csv"
    (out / name).write_text(sweep_csv(rows, sc), newline="")
    print(f"{len(rows)} points -> {out / name}")
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = _scenario(args)
    rep = solve_constrained(sc.params, sc.solver)
    cmp = realized_vs_model_delay(sc.params, rep.mixture, sc.sim, rep.model.costs)
    sim = cmp.report
    checks = {
        "blocking_rate": (rep.avg_blocking, sim.ci("blocking_rate")),
        "delay_rate": (rep.avg_delay, sim.ci("delay_rate")),
    }
    result = {
        name: {"exact": exact, "ci": list(ci), "inside": ci[0] <= exact <= ci[1]}
        for name, (exact, ci) in checks.items()
    }
    result["realized_vs_model"] = {
        "realized": cmp.realized,
        "model": cmp.model,
        "difference": cmp.difference,
        "halfwidth": cmp.halfwidth,
        "inside": cmp.consistent,
    }
    ok = all(v["inside"] for v in result.values())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "validate.json", {"ok": ok, "config_digest": sc.digest(), "seed": sc.sim.seed, "checks": result})
    for name, v in result.items():
        print(f"{'PASS' if v['inside'] else 'FAIL'} {name}")
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON (defaults to the reference scenario)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="override sim.seed")
    common.add_argument("--constraint-basis", choices=("rate", "per_arrival"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dcsplit", description="Constrained traffic-splitting solver and simulator")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="solve one scenario")
    s.add_argument("--simulate", action="store_true", help="also simulate the solved mixture")
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("simulate", parents=[common], help="simulate a saved policy")
    s.add_argument("--policy", required=True, help="policy.json written by solve")
    s.add_argument("--trace", help="write an event trace to this path")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("sweep", parents=[common], help="parameter sweep to CSV")
    s.set_defaults(func=cmd_sweep)
    s = sub.add_parser("validate", parents=[common], help="check exact results against simulation")
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (InfeasibleConstraintError, DegenerateMixtureError, ConvergenceError, ReducibleChainError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

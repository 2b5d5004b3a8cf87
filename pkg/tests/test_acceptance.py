"""Acceptance gate.

Each test checks one criterion at its stated tolerance and prints a single
PASS/FAIL line; the lines are repeated in the terminal summary.
"""

import filecmp
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from dcsplit.config import SweepSpec, default_scenario_dict
from dcsplit.constrained import SolverOptions, solve_constrained
from dcsplit.costs import ResponseDist, expected_max, mc_delay_oracle
from dcsplit.experiments import extract_policy_grids, extract_thresholds, run_sweep
from dcsplit.model import enumerate_states, feasible_actions
from dcsplit.policies import Policy, greedy_accept
from dcsplit.sim import SimConfig, simulate
from dcsplit.solver import evaluate_policy, relative_value_iteration, smdp_average, uniformize

from conftest import tiny
from oracles import brute_force_gain, brute_force_gain_blocked, erlang_loss_with_queue, mmn_batch_blocking

pytestmark = pytest.mark.slow


def test_criterion_1_constraint_adherence(reference, verdict):
    t0 = time.perf_counter()
    rep = solve_constrained(reference)
    sim = simulate(reference, rep.mixture, SimConfig(horizon=60_000.0, seed=0, replications=3))
    elapsed = time.perf_counter() - t0
    lo, hi = sim.ci("blocking_rate")
    events = [r.events for r in sim.replications]
    ok = (
        abs(rep.avg_blocking - 0.02) <= 1e-3
        and lo <= 0.02 <= hi
        and min(events) >= 10**6
        and len(events) == 3
        and elapsed < 120
    )
    verdict(
        1, "constraint adherence", ok,
        f"exact B={rep.avg_blocking:.6f} C={rep.avg_delay:.4f} q={rep.mixture.q:.4f} beta*={rep.mixture.beta_star:.4f}; "
        f"sim CI=[{lo:.5f}, {hi:.5f}] events/rep={min(events)}; {elapsed:.1f}s",
    )
    assert ok


def test_criterion_2_threshold_structure(reference, reference_report, verdict):
    grids, q = extract_policy_grids(reference_report)
    bad = []
    for g in grids:
        prof = extract_thresholds(g, reference)
        for s2, segs in prof.rows.items():
            if len(segs) > prof.limit:
                bad.append((g.component, g.k, s2, len(segs)))
    k1 = next(g for g in grids if g.k == 1 and g.component == "low").actions[:, 0]
    switch = next((s1 for s1 in range(1, len(k1)) if k1[s1] != k1[s1 - 1]), None)
    ok = not bad
    verdict(
        2, "threshold structure", ok,
        f"{len(grids)} grids, violations={bad[:5]}; k=1 s2=0 first switch at s1={switch} "
        f"({k1[switch - 1] if switch else '-'}->{k1[switch] if switch else '-'})",
    )
    assert ok


SWEEPS = {
    "lambda_fg": ([0.67, 2, 4, 6.67], +1),
    "lambda_bg": ([0.5, 1, 2], +1),
    "backhaul_delay": ([0, 0.25, 0.5, 1], +1),
    "b_max": ([0.01, 0.02, 0.05, 0.1], -1),
}


def _sweep_verdict(reference, basis):
    details, ok = [], True
    for name, (values, sign) in SWEEPS.items():
        rows = run_sweep(SweepSpec(name, values, reference, simulate=False), SolverOptions(constraint_basis=basis), workers=1)
        c = np.array([r["avg_delay_exact"] if r["status"] != "error" else np.nan for r in rows], dtype=float)
        failed = [f"{name}={r['value']}: {r['error']}" for r in rows if r["status"] == "error"]
        worst = float(np.nanmax(-sign * np.diff(c))) if np.isfinite(np.diff(c)).any() else math.nan
        good = not failed and worst <= 1e-6
        ok &= good
        details.append(f"{name} C={np.round(c, 4).tolist()} max violation={max(worst, 0.0):.1e}" + "".join(
            f" UNSOLVED({f})" for f in failed))
    return ok, details


def test_criterion_3_monotone_sweeps(reference, verdict):
    # the verdict is taken on the default constraint basis; the alternative basis is reported alongside
    ok, details = _sweep_verdict(reference, "rate")
    alt_ok, alt = _sweep_verdict(reference, "per_arrival")
    verdict(
        3, "monotone sweeps (default rate basis)", ok,
        "rate: " + "; ".join(details) + f" || per_arrival ({'all monotone' if alt_ok else 'NOT monotone'}): " + "; ".join(alt),
    )
    assert ok


def test_criterion_4_expected_max_oracle(verdict):
    rng = np.random.default_rng(20240601)
    worst, misses = 0.0, 0
    for i in range(100):
        dists = []
        for _ in range(2):
            dists.append(
                ResponseDist.phased(
                    int(rng.integers(0, 13)), float(rng.uniform(0.2, 8.0)), float(rng.uniform(0.2, 8.0)),
                    float(rng.choice([0.0, rng.uniform(0.0, 2.0)])),
                )
            )
        exact = expected_max(*dists)
        mean, se = mc_delay_oracle(*dists, samples=10**7, seed=i)
        z = abs(exact - mean) / se
        worst = max(worst, z)
        misses += z > 4
    ok = misses == 0
    verdict(4, "expected_max vs Monte Carlo", ok, f"100 combos x 1e7 samples, max |z|={worst:.2f}, misses={misses}")
    assert ok


def test_criterion_5_evaluation_oracles(reference, reference_model, reference_report, verdict):
    space = reference_model.space
    policies = {
        "greedy_m": greedy_accept(space, "m"),
        "greedy_s": greedy_accept(space, "s"),
        "via_beta5": relative_value_iteration(reference_model, 5.0)[0],
        "mixture_low": reference_report.mixture.policy_low,
        "via_beta40": relative_value_iteration(reference_model, 40.0)[0],
    }
    cfg = SimConfig(horizon=60_000.0, seed=0, replications=3)
    details, ok = [], True
    for name, pol in policies.items():
        ev = evaluate_policy(reference_model, pol)
        sim = simulate(reference, pol, cfg)
        inside = sim.covers("delay_rate", ev.avg_delay) and sim.covers("blocking_rate", ev.avg_blocking)
        ok &= inside
        details.append(
            f"{name}: C {ev.avg_delay:.4f} in {np.round(sim.ci('delay_rate'), 4).tolist()}, "
            f"B {ev.avg_blocking:.5f} in {np.round(sim.ci('blocking_rate'), 5).tolist()}"
            + ("" if inside else " OUTSIDE")
        )
    # no foreground traffic, everything to the macro cell: a one-dimensional queue
    bd = reference.replace(lambda_fg=0.0)
    m = uniformize(bd)
    b_model = evaluate_policy(m, greedy_accept(m.space, "m")).blocking_per_arrival(bd)
    b_ref = mmn_batch_blocking(bd.n_m, bd.cap_m, bd.lambda_bg, bd.mu_m, bd.batch_probs)
    single = bd.replace(batch_probs=(1.0,), lambda_bg=4.0)
    m1 = uniformize(single)
    b1_model = evaluate_policy(m1, greedy_accept(m1.space, "m")).blocking_per_arrival(single)
    b1_ref = erlang_loss_with_queue(single.n_m, single.cap_m, single.lambda_bg, single.mu_m)
    bd_ok = abs(b_model - b_ref) <= 1e-8 and abs(b1_model - b1_ref) <= 1e-8
    ok &= bd_ok
    details.append(f"birth-death batch |diff|={abs(b_model - b_ref):.1e}, single |diff|={abs(b1_model - b1_ref):.1e}")
    verdict(5, "evaluation vs simulation and birth-death", ok, "; ".join(details))
    assert ok


BRUTE = [
    (dict(n_m=1, n_s=1, queue_cap=0, batch_probs=(1.0,)), (0.5, 4.0, 30.0)),
    (dict(n_m=1, n_s=1, queue_cap=0, batch_probs=(0.5, 0.5)), (0.5, 4.0, 30.0)),
    (dict(n_m=1, n_s=1, queue_cap=1, batch_probs=(1.0,)), (0.5, 4.0, 30.0)),
    (dict(n_m=2, n_s=1, queue_cap=0, batch_probs=(0.5, 0.5)), (0.5, 4.0, 30.0)),
    (dict(n_m=1, n_s=2, queue_cap=0, batch_probs=(0.3, 0.7)), (0.5, 4.0, 30.0)),
    (dict(n_m=2, n_s=2, queue_cap=0, batch_probs=(1.0,)), (0.5, 4.0, 30.0)),
    (dict(n_m=1, n_s=1, queue_cap=1, batch_probs=(0.5, 0.5)), (4.0,)),
]


def test_criterion_6_brute_force_optimality(verdict):
    details, ok = [], True
    for kw, betas in BRUTE:
        p = tiny(**kw)
        states = enumerate_states(p)
        n_pol = math.prod(len(feasible_actions(p, s)) for s in states)
        model = uniformize(p)
        for beta in betas:
            best, count = (brute_force_gain if n_pol <= 10**5 else brute_force_gain_blocked)(p, beta)
            pol, sol = relative_value_iteration(model, beta, tol=1e-12)
            ev = evaluate_policy(model, pol)
            gap = max(abs(sol.gain - best), abs(ev.avg_delay + beta * ev.avg_blocking - best))
            good = count == n_pol and gap <= 1e-8
            ok &= good
            details.append(f"{len(states)} states/{count} policies beta={beta}: gap={gap:.1e}")
    verdict(6, "brute-force optimality", ok, "; ".join(details))
    assert ok


def test_criterion_7_uniformization_identity(reference_model, verdict):
    space = reference_model.space
    rng = np.random.default_rng(7)
    random_pol = Policy([rng.choice(np.nonzero(f)[0]) for f in space.feasible])
    worst = 0.0
    for pol in (greedy_accept(space, "m"), greedy_accept(space, "s"), random_pol):
        ev = evaluate_policy(reference_model, pol)
        c, b = smdp_average(reference_model, pol)
        worst = max(worst, abs(ev.avg_delay - c), abs(ev.avg_blocking - b))
    ok = worst <= 1e-8
    verdict(7, "uniformization identity", ok, f"max |uniformized - SMDP| = {worst:.2e} over 3 policies")
    assert ok


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "dcsplit.cli", *args], capture_output=True, text=True, check=True)


def test_criterion_8_reproducibility(tmp_path, verdict):
    raw = default_scenario_dict()
    raw["sim"] = {"horizon": 3000.0, "warmup": None, "seed": 11, "replications": 3}
    solve_cfg = tmp_path / "solve.json"
    solve_cfg.write_text(json.dumps(raw))
    raw["sweep"] = {"parameter": "b_max", "values": [0.02, 0.05], "simulate": True}
    sweep_cfg = tmp_path / "sweep.json"
    sweep_cfg.write_text(json.dumps(raw))
    runs = []
    for r in range(2):
        out = tmp_path / f"run{r}"
        _cli("solve", "--config", str(solve_cfg), "--out", str(out / "solve"), "--simulate")
        _cli("simulate", "--config", str(solve_cfg), "--policy", str(out / "solve" / "policy.json"),
             "--out", str(out / "sim"), "--trace", str(out / "trace.txt"))
        _cli("sweep", "--config", str(sweep_cfg), "--out", str(out / "sweep"))
        runs.append(out)
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    same = [filecmp.cmp(runs[0] / f, runs[1] / f, shallow=False) for f in files]
    ok = len(files) >= 14 and all(same)
    diff = [str(f) for f, s in zip(files, same) if not s]
    verdict(8, "reproducibility", ok, f"{len(files)} files compared, differing={diff}")
    assert ok

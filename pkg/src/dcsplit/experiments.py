"""Policy grids, threshold extraction, parameter sweeps and file output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import Scenario, SweepSpec
from .constrained import ConstrainedSolveReport, SolverOptions, solve_constrained
from .model import ModelParams, StateSpace
from .policies import Policy, RandomizedMixture
from .sim import SimConfig, SimReport, simulate

POLICY_FORMAT = "dcsplit-policy/1"

# plot markers used for the four action codes when the largest batch has two packets
MARKERS = {0: "square", 1: "asterisk", 2: "triangle", 3: "circle"}


def action_legend(params: ModelParams) -> dict[int, str]:
    out = {0: "block"}
    for a in range(1, params.n_actions):
        out[a] = f"{a - 1} packet(s) to M, G-{a - 1} to S"
    if params.max_batch == 2:
        out = {a: f"{desc} ({MARKERS[a]})" for a, desc in out.items()}
    return out


@dataclass
class PolicyGrid:
    k: int
    component: str
    actions: np.ndarray  # indexed [s1, s2]


@dataclass
class Segment:
    action: int
    start: int
    stop: int  # inclusive


@dataclass
class ThresholdProfile:
    k: int
    component: str
    rows: dict[int, list[Segment]]  # s2 -> segments along s1
    limit: int

    @property
    def max_segments(self) -> int:
        return max(len(s) for s in self.rows.values())

    @property
    def threshold_form(self) -> bool:
        return all(len(s) <= self.limit for s in self.rows.values())

    def reconstruct(self) -> np.ndarray:
        n1 = max(seg.stop for segs in self.rows.values() for seg in segs) + 1
        out = np.zeros((n1, len(self.rows)), dtype=np.int64)
        for s2, segs in self.rows.items():
            for seg in segs:
                out[seg.start : seg.stop + 1, s2] = seg.action
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "component": self.component,
            "limit": self.limit,
            "threshold_form": self.threshold_form,
            "max_segments": self.max_segments,
            "rows": {
                str(s2): [[seg.action, seg.start, seg.stop] for seg in segs] for s2, segs in self.rows.items()
            },
        }


def policy_grid(params: ModelParams, policy: Policy, k: int, component: str = "") -> PolicyGrid:
    shape = (params.cap_m + 1, params.cap_s + 1, 2 * params.max_batch + 1)
    return PolicyGrid(k, component, policy.actions.reshape(shape)[:, :, k].copy())


def extract_policy_grids(report: ConstrainedSolveReport | RandomizedMixture, params: ModelParams | None = None):
    """Grids for every arrival tag and both mixture components, plus the mixing weight."""
    mix = report.mixture if isinstance(report, ConstrainedSolveReport) else report
    params = params or report.params
    grids = []
    for component, pol in (("low", mix.policy_low), ("high", mix.policy_high)):
        for k in range(1, 2 * params.max_batch + 1):
            grids.append(policy_grid(params, pol, k, component))
    return grids, mix.q


def segment_limit(params: ModelParams, k: int) -> int:
    """Most segments a threshold-form row may have: one per route choice plus block for
    foreground batches, and at most three for background batches."""
    if k <= params.max_batch:
        return k + 2
    return 3


def segments(row: np.ndarray) -> list[Segment]:
    out: list[Segment] = []
    for i, a in enumerate(row.tolist()):
        if out and out[-1].action == a:
            out[-1].stop = i
        else:
            out.append(Segment(a, i, i))
    return out


def extract_thresholds(grid: PolicyGrid, params: ModelParams | None = None, limit: int | None = None) -> ThresholdProfile:
    if limit is None:
        limit = segment_limit(params, grid.k) if params is not None else (4 if grid.k == 2 else 3)
    rows = {s2: segments(grid.actions[:, s2]) for s2 in range(grid.actions.shape[1])}
    return ThresholdProfile(grid.k, grid.component, rows, limit)


# --- serialization -------------------------------------------------------

def grid_csv(grid: PolicyGrid, params: ModelParams) -> str:
    buf = io.StringIO()
    buf.write(f"# action codes for k={grid.k} ({grid.component} component); rows s1, columns s2\n")
    for a, desc in action_legend(params).items():
        buf.write(f"# {a}: {desc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s1"] + [f"s2={j}" for j in range(grid.actions.shape[1])])
    for i, row in enumerate(grid.actions):
        w.writerow([i] + row.tolist())
    return buf.getvalue()


def policy_to_dict(mix: RandomizedMixture | Policy, params: ModelParams) -> dict:
    if isinstance(mix, Policy):
        mix = RandomizedMixture(mix, mix, 1.0)
    return {
        "format": POLICY_FORMAT,
        "state_order": "lexicographic (s1, s2, k)",
        "shape": [params.cap_m + 1, params.cap_s + 1, 2 * params.max_batch + 1],
        "q": mix.q,
        "beta_star": None if math.isnan(mix.beta_star) else mix.beta_star,
        "epsilon": None if math.isnan(mix.epsilon) else mix.epsilon,
        "policy_low": mix.policy_low.actions.tolist(),
        "policy_high": mix.policy_high.actions.tolist(),
    }


def policy_from_dict(data: dict, params: ModelParams) -> RandomizedMixture:
    if data.get("format") != POLICY_FORMAT:
        raise ValueError(f"not a {POLICY_FORMAT} document")
    shape = [params.cap_m + 1, params.cap_s + 1, 2 * params.max_batch + 1]
    if list(data["shape"]) != shape:
        raise ValueError(f"policy shape {data['shape']} does not match scenario shape {shape}")
    nan = float("nan")
    mix = RandomizedMixture(
        Policy(data["policy_low"]),
        Policy(data["policy_high"]),
        float(data["q"]),
        nan if data.get("beta_star") is None else data["beta_star"],
        nan if data.get("epsilon") is None else data["epsilon"],
    )
    mix.check(StateSpace(params))
    return mix


def sim_to_dict(rep: SimReport) -> dict:
    keys = ("delay_rate", "mean_batch_delay", "blocking_rate", "blocking_per_arrival", "model_delay_rate")
    out = {k: _num(getattr(rep, k)) for k in keys}
    out["halfwidth"] = {k: _num(v) for k, v in rep.halfwidth.items()}
    out.update(
        arrivals=rep.arrivals,
        accepted=rep.accepted,
        blocked=rep.blocked,
        events=rep.events,
        actions={str(a): c for a, c in rep.actions.items()},
        replications=[
            {
                "delay_rate": _num(r.delay_rate),
                "blocking_rate": _num(r.blocking_rate),
                "blocking_per_arrival": _num(r.blocking_per_arrival),
                "events": r.events,
            }
            for r in rep.replications
        ],
    )
    return out


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def report_to_dict(report: ConstrainedSolveReport, scenario: Scenario) -> dict:
    p = report.params
    mix = report.mixture
    return {
        "version": __version__,
        "config_digest": scenario.digest(),
        "scenario": scenario.to_dict(),
        "status": report.status,
        "converged": report.converged,
        "constraint_basis": scenario.solver.constraint_basis,
        "blocking_bound_rate": report.blocking_bound,
        "avg_delay": report.avg_delay,
        "avg_blocking_rate": report.avg_blocking,
        "avg_blocking_per_arrival": report.blocking_per_arrival,
        "beta_star": mix.beta_star,
        "epsilon": mix.epsilon,
        "q": mix.q,
        "q_linear": report.q_linear,
        "deterministic": mix.deterministic,
        "components": {
            "low": {"avg_delay": report.low.avg_delay, "avg_blocking_rate": report.low.avg_blocking},
            "high": {"avg_delay": report.high.avg_delay, "avg_blocking_rate": report.high.avg_blocking},
        },
        "differing_states": int((mix.policy_low.actions != mix.policy_high.actions).sum()),
        "weighted_arrival_rate": p.weighted_arrival_rate,
        "trace": [[e.iteration, e.beta, e.blocking, e.phase] for e in report.trace],
    }


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_solution(report: ConstrainedSolveReport, scenario: Scenario, out: Path, sim: SimReport | None = None) -> list[Path]:
    """Write report.json, policy.json, thresholds.json and one CSV per tag and component.

    ``policy_k{k}.csv`` holds the component played with probability q,
    ``policy_k{k}_high.csv`` the other one.
    """
    out.mkdir(parents=True, exist_ok=True)
    params = report.params
    written = []
    data = report_to_dict(report, scenario)
    if sim is not None:
        data["simulation"] = sim_to_dict(sim)
        data["simulation"]["seed"] = scenario.sim.seed
    grids, q = extract_policy_grids(report)
    profiles = [extract_thresholds(g, params) for g in grids]
    k1 = next(p for p in profiles if p.k == 1 and p.component == "low")
    data["k1_first_switch_s1_at_s2_0"] = k1.rows[0][1].start if len(k1.rows[0]) > 1 else None
    write_json(out / "report.json", data)
    written.append(out / "report.json")
    write_json(out / "policy.json", policy_to_dict(report.mixture, params))
    written.append(out / "policy.json")
    for g in grids:
        name = f"policy_k{g.k}.csv" if g.component == "low" else f"policy_k{g.k}_high.csv"
        (out / name).write_text(grid_csv(g, params), newline="")
        written.append(out / name)
    write_json(
        out / "thresholds.json",
        {"q": q, "all_threshold_form": all(p.threshold_form for p in profiles), "profiles": [p.to_dict() for p in profiles]},
    )
    written.append(out / "thresholds.json")
    return written


# --- sweeps --------------------------------------------------------------

SWEEP_COLUMNS = [
    "value", "status", "avg_delay_exact", "blocking_rate_exact", "blocking_per_arrival_exact",
    "beta_star", "q", "avg_delay_sim", "avg_delay_sim_hw", "blocking_rate_sim", "blocking_rate_sim_hw", "error",
]


def _sweep_point(parameter: str, value: float, base: ModelParams, solver: SolverOptions, sim: SimConfig | None) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row["value"] = value
    try:
        params = base.replace(**{parameter: value})
        rep = solve_constrained(params, solver)
        row.update(
            status=rep.status,
            avg_delay_exact=rep.avg_delay,
            blocking_rate_exact=rep.avg_blocking,
            blocking_per_arrival_exact=rep.blocking_per_arrival,
            beta_star=rep.mixture.beta_star,
            q=rep.mixture.q,
        )
        if sim is not None:
            s = simulate(params, rep.mixture, sim, workers=1)
            row.update(
                avg_delay_sim=s.delay_rate,
                avg_delay_sim_hw=s.halfwidth["delay_rate"],
                blocking_rate_sim=s.blocking_rate,
                blocking_rate_sim_hw=s.halfwidth["blocking_rate"],
            )
    except Exception as e:  # recorded per point; the sweep carries on
        row["status"] = "error"
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def run_sweep(
    spec: SweepSpec,
    solver: SolverOptions | None = None,
    sim: SimConfig | None = None,
    workers: int | None = None,
) -> list[dict]:
    """One row per swept value: exact delay/blocking and (optionally) simulated estimates."""
    solver = solver or SolverOptions()
    sim = sim if spec.simulate else None
    workers = workers or max(1, int(os.environ.get("DCSPLIT_THREADS", "1") or 1))
    args = [(spec.parameter, v, spec.base, solver, sim) for v in spec.values]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(min(workers, len(args))) as ex:
            return list(ex.map(_sweep_point, *zip(*args)))
    return [_sweep_point(*a) for a in args]


def sweep_csv(rows: list[dict], scenario: Scenario) -> str:
    buf = io.StringIO()
    spec = scenario.sweep
    buf.write(
        f"# dcsplit {__version__} config_digest={scenario.digest()} seed={scenario.sim.seed} "
        f"parameter={spec.parameter if spec else ''} constraint_basis={scenario.solver.constraint_basis}\n"
    )
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))

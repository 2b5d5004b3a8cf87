"""Discrete-event simulation of the two FCFS multi-server queues under a policy.

The simulator does not touch the Markov kernel: arrivals are two Poisson batch
streams, each routed packet is assigned the earliest-free server of its cell in
arrival order (exact FCFS for an n-server queue), and occupancy is read off
the pending completion times.  Batch delay is the completion time of the last
packet placed in each cell, plus the backhaul delay on the small-cell side,
maximized over the two cells.
"""

from __future__ import annotations

import heapq
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import BLOCK, ModelParams, StateSpace
from .policies import Policy, RandomizedMixture

_BUF = 1 << 16


class PolicyLookupError(KeyError):
    pass


@dataclass
class SimConfig:
    horizon: float = 60_000.0
    warmup: float | None = None
    seed: int = 0
    replications: int = 3
    trace_path: str | None = None
    debug: bool = False

    def __post_init__(self):
        if self.warmup is None:
            self.warmup = 0.1 * self.horizon
        if not self.horizon > self.warmup >= 0:
            raise ValueError("need horizon > warmup >= 0")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    def replication_seeds(self) -> list[np.random.SeedSequence]:
        """Replication ``r`` uses child ``r`` of ``SeedSequence(seed)``."""
        return np.random.SeedSequence(self.seed).spawn(self.replications)


@dataclass
class ReplicationResult:
    delay_rate: float
    mean_batch_delay: float
    blocking_rate: float
    blocking_per_arrival: float
    model_delay_rate: float
    arrivals: int
    blocked: int
    events: int
    actions: dict[int, int]
    occupancy: np.ndarray = field(repr=False)


@dataclass
class SimReport:
    delay_rate: float
    mean_batch_delay: float
    blocking_rate: float
    blocking_per_arrival: float
    model_delay_rate: float
    halfwidth: dict[str, float]
    arrivals: int
    accepted: int
    blocked: int
    events: int
    actions: dict[int, int]
    occupancy: np.ndarray = field(repr=False)
    replications: list[ReplicationResult] = field(repr=False, default_factory=list)

    def ci(self, name: str) -> tuple[float, float]:
        m = getattr(self, name)
        h = self.halfwidth[name]
        return m - h, m + h

    def covers(self, name: str, value: float) -> bool:
        lo, hi = self.ci(name)
        return lo <= value <= hi


class _Stream:
    """Buffered draws from one generator method."""

    def __init__(self, draw):
        self.draw = draw
        self.buf = draw(_BUF).tolist()
        self.i = 0

    def __call__(self) -> float:
        if self.i == len(self.buf):
            self.buf = self.draw(_BUF).tolist()
            self.i = 0
        x = self.buf[self.i]
        self.i += 1
        return x


def _branches(policy):
    if isinstance(policy, RandomizedMixture):
        return policy.policy_low.actions.tolist(), policy.policy_high.actions.tolist(), policy.q
    if isinstance(policy, Policy):
        a = policy.actions.tolist()
        return a, a, 1.0
    raise TypeError(f"not a policy: {type(policy).__name__}")


def _replicate(params: ModelParams, policy, cfg: SimConfig, seed, costs, rep: int) -> ReplicationResult:
    rng = np.random.default_rng(seed)
    expo = _Stream(rng.standard_exponential)
    unif = _Stream(rng.random)
    low, high, q = _branches(policy)
    if len(low) != (params.cap_m + 1) * (params.cap_s + 1) * (2 * params.max_batch + 1):
        raise PolicyLookupError("policy does not cover the state space of these parameters")
    cost = costs.tolist() if costs is not None else None

    n = params.max_batch
    n_k = 2 * n + 1
    stride1 = (params.cap_s + 1) * n_k
    lam = params.lambda_fg + params.lambda_bg
    p_fg = params.lambda_fg / lam if lam > 0 else 0.0
    cum = np.cumsum(params.batch_probs).tolist()
    cum[-1] = 1.0
    mu_m, mu_s, d = params.mu_m, params.mu_s, params.backhaul_delay
    w_bg, w_fg = params.delta, 1.0 - params.delta
    warm, horizon = cfg.warmup, cfg.horizon

    free_m = [0.0] * params.n_m   # server-free times, min-heaps
    free_s = [0.0] * params.n_s
    out_m: list[float] = []       # pending completion times
    out_s: list[float] = []
    s1 = s2 = 0
    occ = np.zeros((params.cap_m + 1, params.cap_s + 1))
    occ_flat = [0.0] * occ.size
    cols = params.cap_s + 1
    t_last = 0.0

    delay_sum = model_sum = 0.0
    accepted_batches = 0
    arrivals = blocked = events = 0
    w_arrived = w_blocked = 0.0
    actions = [0] * params.n_actions

    trace = None
    if cfg.trace_path:
        path = cfg.trace_path if cfg.replications == 1 else f"{cfg.trace_path}.{rep}"
        trace = open(path, "w")
        trace.write("# time kind s1 s2 k action delay\n")

    def advance(t):
        nonlocal t_last
        lo = t_last if t_last > warm else warm
        if t > lo:
            occ_flat[s1 * cols + s2] += t - lo
        t_last = t

    t = expo() / lam if lam > 0 else math.inf
    while True:
        # departures strictly before the next arrival, in time order
        while True:
            dm = out_m[0] if out_m else math.inf
            ds = out_s[0] if out_s else math.inf
            td = dm if dm <= ds else ds
            if td > t or td > horizon:
                break
            advance(td)
            if dm <= ds:
                heapq.heappop(out_m)
                s1 -= 1
            else:
                heapq.heappop(out_s)
                s2 -= 1
            events += 1
            if trace is not None:
                trace.write(f"{td:.9g} departure {s1} {s2} 0 0 -\n")
        if t > horizon:
            advance(horizon)
            break
        advance(t)
        events += 1
        fg = unif() < p_fg
        u = unif()
        g = 1
        while u > cum[g - 1]:
            g += 1
        k = g if fg else n + g
        idx = s1 * stride1 + s2 * n_k + k
        a = low[idx] if (q >= 1.0 or unif() < q) else high[idx]
        counted = t >= warm
        weight = w_fg if fg else w_bg
        if counted:
            arrivals += 1
            actions[a] += 1
            w_arrived += weight
        if a == BLOCK:
            if counted:
                blocked += 1
                w_blocked += weight
            if trace is not None:
                trace.write(f"{t:.9g} {'fg' if fg else 'bg'} {s1} {s2} {k} 0 -\n")
        else:
            j = a - 1
            if (not fg and j != g) or s1 + j > params.cap_m or s2 + g - j > params.cap_s:
                raise PolicyLookupError(f"policy action {a} infeasible at state {(s1, s2, k)}")
            if counted and cost is not None:
                model_sum += cost[idx][a]
            last = 0.0
            for _ in range(j):
                start = heapq.heappop(free_m)
                done = (start if start > t else t) + expo() / mu_m
                heapq.heappush(free_m, done)
                heapq.heappush(out_m, done)
            if j:
                last = done - t
            for _ in range(g - j):
                start = heapq.heappop(free_s)
                done = (start if start > t else t) + expo() / mu_s
                heapq.heappush(free_s, done)
                heapq.heappush(out_s, done)
            if g - j:
                last = max(last, done + d - t)
            s1 += j
            s2 += g - j
            if counted:
                delay_sum += last
                accepted_batches += 1
            if trace is not None:
                trace.write(f"{t:.9g} {'fg' if fg else 'bg'} {s1 - j} {s2 - g + j} {k} {a} {last:.9g}\n")
        if cfg.debug:
            assert s1 == len(out_m) and s2 == len(out_s), "occupancy counter drifted"
            assert 0 <= s1 <= params.cap_m and 0 <= s2 <= params.cap_s
        t += expo() / lam

    if trace is not None:
        trace.close()
    span = horizon - warm
    occ[:] = np.asarray(occ_flat).reshape(occ.shape) / span
    return ReplicationResult(
        delay_rate=delay_sum / span,
        mean_batch_delay=delay_sum / accepted_batches if accepted_batches else math.nan,
        blocking_rate=w_blocked / span,
        blocking_per_arrival=w_blocked / w_arrived if w_arrived else math.nan,
        model_delay_rate=model_sum / span if cost is not None else math.nan,
        arrivals=arrivals,
        blocked=blocked,
        events=events,
        actions={i: c for i, c in enumerate(actions) if c},
        occupancy=occ,
    )


def _halfwidth(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    if len(x) < 2:
        return math.inf
    return float(stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x)))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DCSPLIT_THREADS", "1")))
    except ValueError:
        return 1


def simulate(
    params: ModelParams,
    policy: Policy | RandomizedMixture,
    cfg: SimConfig | None = None,
    costs: np.ndarray | None = None,
    workers: int | None = None,
) -> SimReport:
    """Run ``cfg.replications`` independent replications and aggregate them.

    ``costs`` (a delay-cost table) additionally accrues the model's expected
    batch delay at every admitted batch (``model_delay_rate``).
    """
    cfg = cfg or SimConfig()
    space = StateSpace(params)
    policy.check(space)
    seeds = cfg.replication_seeds()
    workers = workers or _workers()
    args = [(params, policy, cfg, s, costs, r) for r, s in enumerate(seeds)]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(min(workers, len(args))) as ex:
            reps = list(ex.map(_replicate, *zip(*args)))
    else:
        reps = [_replicate(*a) for a in args]

    names = ("delay_rate", "mean_batch_delay", "blocking_rate", "blocking_per_arrival", "model_delay_rate")
    vals = {k: np.array([getattr(r, k) for r in reps]) for k in names}
    means = {k: float(np.nanmean(v)) if np.isfinite(v).any() else math.nan for k, v in vals.items()}
    actions: dict[int, int] = {}
    for r in reps:
        for a, c in r.actions.items():
            actions[a] = actions.get(a, 0) + c
    arrivals = sum(r.arrivals for r in reps)
    blocked = sum(r.blocked for r in reps)
    return SimReport(
        **means,
        halfwidth={k: _halfwidth(v) for k, v in vals.items()},
        arrivals=arrivals,
        accepted=arrivals - blocked,
        blocked=blocked,
        events=sum(r.events for r in reps),
        actions=dict(sorted(actions.items())),
        occupancy=np.mean([r.occupancy for r in reps], axis=0),
        replications=reps,
    )


@dataclass
class DelayComparison:
    realized: float
    model: float
    difference: float
    halfwidth: float
    report: SimReport

    @property
    def consistent(self) -> bool:
        return abs(self.difference) <= self.halfwidth


def realized_vs_model_delay(
    params: ModelParams, policy, cfg: SimConfig | None = None, costs: np.ndarray | None = None
) -> DelayComparison:
    """Compare realized batch delays with the model's expected delay accrued at the same epochs.

    The half-width is that of the per-replication paired differences.
    """
    if costs is None:
        from .costs import delay_cost_table

        costs = delay_cost_table(StateSpace(params))
    rep = simulate(params, policy, cfg, costs)
    diffs = np.array([r.delay_rate - r.model_delay_rate for r in rep.replications])
    hw = _halfwidth(diffs)
    return DelayComparison(rep.delay_rate, rep.model_delay_rate, float(diffs.mean()), hw, rep)

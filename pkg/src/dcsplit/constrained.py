"""Lagrangian solution of the blocking-constrained delay minimization.

The multiplier search first runs the harmonic-step update
``beta <- max(0, beta + (B_n - B_max) / n)``.  Because the blocking rate of
the greedy policy is a non-increasing step function of ``beta`` and its
deviations from the bound are small in per-second units, those steps move
slowly; the search therefore finishes by bisecting the bracket the trace has
found around the jump through ``B_max``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import ModelParams, StateSpace
from .costs import delay_cost_table
from .policies import Policy, RandomizedMixture
from .solver import (
    Evaluation,
    UniformizedModel,
    evaluate_policy,
    relative_value_iteration,
    uniformize,
)

log = logging.getLogger(__name__)


class InfeasibleConstraintError(RuntimeError):
    pass


class DegenerateMixtureError(RuntimeError):
    pass


@dataclass
class SolverOptions:
    tol: float = 1e-9
    beta0: float = 1.0
    epsilon: float | None = None
    max_iters: int = 60
    via_max_iters: int = 200_000
    tol_b: float = 1e-5
    beta_cap: float = 1e9
    bisect_iters: int = 60
    refine_q: bool = False
    constraint_basis: str = "rate"

    def __post_init__(self):
        if self.constraint_basis not in ("rate", "per_arrival"):
            raise ValueError("constraint_basis must be 'rate' or 'per_arrival'")
        if not self.beta0 > 0:
            raise ValueError("beta0 must be positive")
        if not self.tol_b > 0:
            raise ValueError("tol_b must be positive")


@dataclass
class TraceEntry:
    iteration: int
    beta: float
    blocking: float
    phase: str


@dataclass
class BetaSearchResult:
    beta_star: float
    trace: list[TraceEntry]
    status: str
    bracket: tuple[float, float] | None = None
    policy: Policy | None = None

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "inactive")


@dataclass
class ConstrainedSolveReport:
    params: ModelParams
    mixture: RandomizedMixture
    avg_delay: float
    avg_blocking: float
    blocking_bound: float
    trace: list[TraceEntry]
    converged: bool
    status: str
    q_linear: float
    low: Evaluation
    high: Evaluation
    model: UniformizedModel = field(repr=False)

    @property
    def blocking_per_arrival(self) -> float:
        return self.avg_blocking / self.params.weighted_arrival_rate


def blocking_bound(params: ModelParams, basis: str = "rate") -> float:
    """Constraint expressed as a blocking-cost rate per second."""
    if basis == "rate":
        return params.b_max
    if basis == "per_arrival":
        return params.b_max * params.weighted_arrival_rate
    raise ValueError(f"unknown constraint basis {basis!r}")


class _Oracle:
    """Greedy policy and its exact blocking at a given multiplier, warm-started."""

    def __init__(self, model: UniformizedModel, tol: float, max_iters: int):
        self.model = model
        self.tol = tol
        self.max_iters = max_iters
        self.values = None
        self.cache: dict[float, tuple[Policy, Evaluation]] = {}

    def __call__(self, beta: float) -> tuple[Policy, Evaluation]:
        if beta not in self.cache:
            pol, sol = relative_value_iteration(
                self.model, beta, self.tol, self.max_iters, initial=self.values
            )
            self.values = sol.values
            self.cache[beta] = (pol, evaluate_policy(self.model, pol))
        return self.cache[beta]


def minimum_blocking(model: UniformizedModel, tol: float = 1e-9) -> float:
    """Smallest blocking rate any stationary policy attains (delay ignored)."""
    zero = UniformizedModel(
        model.space, model.costs * 0, model.tau, model.c_hat * 0, model.b_hat, model.embedded, model.T_hat
    )
    pol, _ = relative_value_iteration(zero, 1.0, tol)
    return evaluate_policy(model, pol).avg_blocking


def beta_search(
    model: UniformizedModel,
    b_max: float,
    beta0: float = 1.0,
    max_iters: int = 60,
    tol_b: float = 1e-5,
    tol: float = 1e-9,
    beta_cap: float = 1e9,
    bisect_iters: int = 60,
    epsilon: float | None = None,
    _oracle: _Oracle | None = None,
) -> BetaSearchResult:
    """Find the multiplier at which the greedy policy's blocking crosses ``b_max``.

    ``b_max`` is a blocking-cost rate (per second).
    """
    if not beta0 > 0 or not tol_b > 0:
        raise ValueError("beta0 and tol_b must be positive")
    oracle = _oracle or _Oracle(model, tol, 200_000)
    trace: list[TraceEntry] = []

    pol0, ev0 = oracle(0.0)
    if ev0.avg_blocking <= b_max + tol_b:
        trace.append(TraceEntry(0, 0.0, ev0.avg_blocking, "inactive"))
        return BetaSearchResult(0.0, trace, "inactive", policy=pol0)

    b_min = minimum_blocking(model, tol)
    if b_min > b_max + tol_b:
        raise InfeasibleConstraintError(
            f"infeasible constraint: smallest attainable blocking rate {b_min:.6g} exceeds bound {b_max:.6g}"
        )

    beta = beta0
    for n in range(1, max_iters + 1):
        pol, ev = oracle(beta)
        trace.append(TraceEntry(n, beta, ev.avg_blocking, "gradient"))
        gap = ev.avg_blocking - b_max
        if abs(gap) <= tol_b:
            return BetaSearchResult(beta, trace, "converged", (beta, beta), pol)
        nxt = max(0.0, beta + gap / n)
        if abs(nxt - beta) <= 1e-6 * max(1.0, beta):
            beta = nxt
            break
        beta = nxt

    above = [e.beta for e in trace if e.blocking > b_max]
    below = [e.beta for e in trace if e.blocking <= b_max]
    lo = max(above) if above else 0.0
    hi = min(below) if below else None
    it = len(trace)
    while hi is None:
        probe = max(2.0 * lo, beta0)
        if probe > beta_cap:
            raise InfeasibleConstraintError(
                f"infeasible constraint: blocking stays above {b_max:.6g} up to beta={beta_cap:g}"
            )
        it += 1
        ev = oracle(probe)[1]
        trace.append(TraceEntry(it, probe, ev.avg_blocking, "bracket"))
        if ev.avg_blocking > b_max:
            lo = probe
        else:
            hi = probe
    if lo > hi:
        # the greedy blocking is non-increasing in beta; an inverted bracket means ties
        lo, hi = 0.0, hi

    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        eps = epsilon if epsilon is not None else default_epsilon(mid)
        if hi - lo <= 0.1 * eps:
            break
        it += 1
        ev = oracle(mid)[1]
        trace.append(TraceEntry(it, mid, ev.avg_blocking, "bisect"))
        if abs(ev.avg_blocking - b_max) <= tol_b:
            return BetaSearchResult(mid, trace, "converged", (lo, hi), oracle(mid)[0])
        if ev.avg_blocking > b_max:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    return BetaSearchResult(mid, trace, "converged", (lo, hi), oracle(mid)[0])


def default_epsilon(beta_star: float) -> float:
    return max(0.01, 0.01 * beta_star)


def build_mixture(
    model: UniformizedModel,
    beta_star: float,
    epsilon: float,
    b_max: float,
    tol_b: float = 1e-5,
    tol: float = 1e-9,
    max_widen: int = 20,
    refine_q: bool = False,
    _oracle: _Oracle | None = None,
) -> tuple[RandomizedMixture, float]:
    """Mix the greedy policies at ``beta_star -/+ epsilon`` to meet ``b_max``.

    Returns the mixture and the interpolation weight before any refinement.
    With ``refine_q`` the weight is then moved (root finding on the exact
    mixture blocking) so that the per-epoch mixture meets the bound exactly.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    oracle = _oracle or _Oracle(model, tol, 200_000)
    eps = min(epsilon, beta_star) if beta_star > 0 else epsilon
    for _ in range(max_widen + 1):
        p_lo, e_lo = oracle(max(beta_star - eps, 0.0))
        p_hi, e_hi = oracle(beta_star + eps)
        b_lo, b_hi = e_lo.avg_blocking, e_hi.avg_blocking
        if (p_lo == p_hi or b_lo == b_hi) and abs(b_lo - b_max) <= tol_b:
            return RandomizedMixture(p_lo, p_lo, 1.0, beta_star, eps), 1.0
        if b_lo != b_hi and b_hi - tol_b <= b_max <= b_lo + tol_b:
            break
        log.info("widening epsilon from %g: B_low=%g B_high=%g bound=%g", eps, b_lo, b_hi, b_max)
        eps *= 2.0
    else:
        raise DegenerateMixtureError(
            f"policies at beta*={beta_star:g} -/+ {eps:g} do not bracket the bound {b_max:g}"
        )
    q_lin = float(np.clip((b_max - b_hi) / (b_lo - b_hi), 0.0, 1.0))
    mix = RandomizedMixture(p_lo, p_hi, q_lin, beta_star, eps)
    if refine_q and 0.0 < q_lin < 1.0:
        def excess(q):
            return evaluate_policy(model, RandomizedMixture(p_lo, p_hi, q, beta_star, eps)).avg_blocking - b_max

        if abs(excess(q_lin)) > 1e-12 * max(1.0, b_max):
            f0, f1 = excess(0.0), excess(1.0)
            if f0 * f1 < 0:
                q = optimize.brentq(excess, 0.0, 1.0, xtol=1e-14, rtol=1e-14)
                mix = RandomizedMixture(p_lo, p_hi, float(q), beta_star, eps)
    return mix, q_lin


def solve_constrained(params: ModelParams, options: SolverOptions | None = None, model=None) -> ConstrainedSolveReport:
    opts = options or SolverOptions()
    if model is None:
        space = StateSpace(params)
        model = uniformize(space, delay_cost_table(space))
    bound = blocking_bound(params, opts.constraint_basis)
    oracle = _Oracle(model, opts.tol, opts.via_max_iters)
    search = beta_search(
        model, bound, opts.beta0, opts.max_iters, opts.tol_b, opts.tol, opts.beta_cap,
        opts.bisect_iters, opts.epsilon, _oracle=oracle,
    )
    if search.status == "inactive":
        pol = search.policy
        mix = RandomizedMixture(pol, pol, 1.0, 0.0, 0.0)
        q_lin = 1.0
    else:
        eps = opts.epsilon if opts.epsilon is not None else default_epsilon(search.beta_star)
        mix, q_lin = build_mixture(
            model, search.beta_star, eps, bound, opts.tol_b, opts.tol,
            refine_q=opts.refine_q, _oracle=oracle,
        )
    ev = evaluate_policy(model, mix)
    if ev.avg_blocking > bound + opts.tol_b and 0.0 < mix.q < 1.0 and not opts.refine_q:
        # per-epoch mixing is not exactly linear in q; move q onto the bound
        log.info("linear q=%g overshoots the bound (%g > %g); refining", mix.q, ev.avg_blocking, bound)
        mix, _ = build_mixture(
            model, search.beta_star, mix.epsilon, bound, opts.tol_b, opts.tol, refine_q=True, _oracle=oracle,
        )
        ev = evaluate_policy(model, mix)
    low = evaluate_policy(model, mix.policy_low)
    high = evaluate_policy(model, mix.policy_high)
    converged = search.converged and ev.avg_blocking <= bound + opts.tol_b
    return ConstrainedSolveReport(
        params, mix, ev.avg_delay, ev.avg_blocking, bound, search.trace, converged,
        search.status, q_lin, low, high, model,
    )

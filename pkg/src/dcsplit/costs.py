"""Delay and blocking costs.

The response time of the last packet a batch places in one system is a shifted
Erlang-plus-exponential variable: ``wait_stages`` exponential phases at the
full-system departure rate, then its own exponential service, plus the
backhaul shift on the small-cell side.  The delay cost of an action is the
expectation of the maximum over the two systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .model import BLOCK, ModelParams, State, StateSpace, split


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResponseDist:
    kind: str = "zero"
    wait_stages: int = 0
    wait_rate: float = 1.0
    service_rate: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "phased"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "phased":
            if self.wait_stages < 0:
                raise ValueError("wait_stages must be non-negative")
            if not (self.wait_rate > 0 and self.service_rate > 0):
                raise ValueError("rates must be positive")
            if not self.shift >= 0:
                raise ValueError("shift must be non-negative")

    @classmethod
    def zero(cls) -> "ResponseDist":
        return cls()

    @classmethod
    def phased(cls, wait_stages: int, wait_rate: float, service_rate: float, shift: float = 0.0):
        return cls("phased", int(wait_stages), float(wait_rate), float(service_rate), float(shift))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def mean(self) -> float:
        if self.is_zero:
            return 0.0
        return self.shift + self.wait_stages / self.wait_rate + 1.0 / self.service_rate

    def survival(self, t):
        """P(X > t), vectorized over ``t``."""
        t = np.asarray(t, dtype=float)
        if self.is_zero:
            return np.where(t < 0, 1.0, 0.0)
        u = np.maximum(t - self.shift, 0.0)
        return np.where(t < self.shift, 1.0, _erlang_exp_survival(self.wait_stages, self.wait_rate, self.service_rate, u))

    def cdf(self, t):
        return 1.0 - self.survival(t)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.is_zero:
            return np.zeros(size)
        x = rng.exponential(1.0 / self.service_rate, size)
        if self.wait_stages:
            x += rng.gamma(self.wait_stages, 1.0 / self.wait_rate, size)
        return x + self.shift


def _erlang_exp_survival(w: int, r: float, mu: float, u: np.ndarray) -> np.ndarray:
    """Survival of Erlang(w, r) + Exp(mu) at ``u >= 0``.

    Conditioning on the Erlang part gives
    ``Q(w, r u) + e^{-r u} (r u)^w / w! * 1F1(1; w+1; (r - mu) u)``,
    a sum of non-negative terms, so there is no cancellation for any
    ordering of the rates.  ``r == mu`` reduces to Erlang(w + 1, mu).
    """
    if w == 0:
        return np.exp(-mu * u)
    x = r * u
    head = special.gammaincc(w, x)
    with np.errstate(divide="ignore"):
        log_poisson = -x + w * np.log(x) - special.gammaln(w + 1)
    z = (r - mu) * u
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if r >= mu:
            tail = np.exp(log_poisson) * special.hyp1f1(1.0, w + 1.0, z)
            # for large z integrate the Erlang density against e^{-mu(u-x)} directly
            far = np.exp(w * np.log(r / (r - mu)) - mu * u) * special.gammainc(w, z) if r > mu else tail
            tail = np.where(z > 500.0, far, tail)
        else:
            # 1F1(1; w+1; -y) via Kummer for small y, downward-stable recurrence for y > w
            y = -z
            near = np.exp(log_poisson + z) * special.hyp1f1(float(w), w + 1.0, y)
            tail = np.where(y > w, np.exp(log_poisson) * _kummer_tail(w, y), near)
    return np.where(u > 0, head + tail, 1.0)


def _kummer_tail(w: int, y: np.ndarray) -> np.ndarray:
    """1F1(1; w+1; -y) for y > w via g_j = (j / y)(1 - g_{j-1})."""
    y = np.maximum(y, 1e-300)
    g = -np.expm1(-y) / y
    for j in range(2, w + 1):
        g = (j / y) * (1.0 - g)
    return g


def response_dist(
    servers: int,
    rate: float,
    occupancy_before: int,
    packets_routed: int,
    shift: float = 0.0,
    capacity: int | None = None,
) -> ResponseDist:
    """Response time of the last of ``packets_routed`` packets joining an M/M/n FCFS queue."""
    if capacity is not None and occupancy_before + packets_routed > capacity:
        raise ValueError(
            f"routing {packets_routed} packets onto {occupancy_before} exceeds capacity {capacity}"
        )
    if packets_routed == 0:
        return ResponseDist.zero()
    position = occupancy_before + packets_routed - 1
    stages = max(0, position - servers + 1)
    return ResponseDist.phased(stages, servers * rate, rate, shift)


def _upper_limit(dm: ResponseDist, ds: ResponseDist, scale: float) -> float:
    t = max(dm.mean(), ds.mean(), 1e-12)
    while dm.survival(t) + ds.survival(t) >= 1e-12 * scale:
        t *= 2.0
    return t


@lru_cache(maxsize=None)
def expected_max(dm: ResponseDist, ds: ResponseDist, rel_tol: float = 1e-8) -> float:
    """E[max(A, B)] for independent ``A ~ dm``, ``B ~ ds`` by adaptive quadrature."""
    if not 0 < rel_tol <= 1e-3:
        raise ValueError("rel_tol must lie in (0, 1e-3]")
    if dm.is_zero and ds.is_zero:
        return 0.0
    if dm.is_zero or ds.is_zero:
        return max(dm.mean(), ds.mean())
    scale = dm.mean() + ds.mean()
    upper = _upper_limit(dm, ds, scale)
    cuts = sorted({0.0, min(dm.shift, upper), min(ds.shift, upper), upper})

    def integrand(t):
        a = float(dm.survival(t))
        b = float(ds.survival(t))
        return a + b - a * b

    total = 0.0
    err = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo:
            continue
        val, e, info = integrate.quad(
            integrand, lo, hi, epsabs=1e-14 * scale, epsrel=rel_tol / 10, limit=200, full_output=1
        )[:3]
        total += val
        err += e
    if not math.isfinite(total) or err > rel_tol * total:
        raise QuadratureError(
            f"quadrature did not converge for {dm} / {ds}: value={total!r} error estimate={err!r}"
        )
    return total


def mc_delay_oracle(
    dm: ResponseDist, ds: ResponseDist, samples: int = 10**6, seed: int = 0, chunk: int = 10**6
) -> tuple[float, float]:
    """Monte-Carlo estimate of E[max(A, B)] and its standard error."""
    if samples < 10**4:
        raise ValueError("samples must be at least 1e4")
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = np.maximum(dm.sample(rng, m), ds.sample(rng, m))
        total += x.sum()
        total_sq += np.dot(x, x)
        done += m
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return mean, math.sqrt(var / samples)


def batch_response(params: ModelParams, s: State, a: int) -> tuple[ResponseDist, ResponseDist]:
    to_m, to_s = split(params, s, a)
    dm = response_dist(params.n_m, params.mu_m, s.s1, to_m, 0.0, params.cap_m)
    ds = response_dist(params.n_s, params.mu_s, s.s2, to_s, params.backhaul_delay, params.cap_s)
    return dm, ds


def delay_cost(params: ModelParams, s: State, a: int, rel_tol: float = 1e-8) -> float:
    if s.k == 0 or a == BLOCK:
        split(params, s, a)
        return 0.0
    return expected_max(*batch_response(params, s, a), rel_tol=rel_tol)


def blocking_cost(params: ModelParams, s: State, a: int) -> float:
    split(params, s, a)
    if a != BLOCK or s.k == 0:
        return 0.0
    return params.delta if s.k > params.max_batch else 1.0 - params.delta


def delay_cost_table(space: StateSpace, rel_tol: float = 1e-8) -> np.ndarray:
    """``c(s, a)`` for every state index and action code; NaN where infeasible."""
    params = space.params
    out = np.full((space.n_states, space.n_actions), np.nan)
    out[:, BLOCK] = 0.0
    for i, a in zip(*np.nonzero(space.feasible)):
        if a == BLOCK:
            continue
        out[i, a] = delay_cost(params, space.states[i], int(a), rel_tol)
    return out

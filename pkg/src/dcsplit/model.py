"""Scenario parameters, state space, actions and the embedded-chain kernel.

A state is ``(s1, s2, k)``: packets held by the macro cell (System M), packets
held by the small cell (System S), and an event tag.  ``k = 0`` marks a packet
departure, ``k = g`` a foreground batch of size ``g`` and ``k = n + g`` a
background batch of size ``g``, where ``n`` is the largest batch size.

Action codes: ``0`` blocks (or does nothing at a departure); ``j + 1`` sends
``j`` packets of the batch to System M and the remaining ``G - j`` to System S.
Background batches may only go to M in full (``a = G + 1``) or be blocked.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

BLOCK = 0


class InvalidStateError(ValueError):
    pass


class InfeasibleActionError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Scenario constants.  Defaults reproduce the reference scenario."""

    lambda_fg: float = 6.67
    lambda_bg: float = 1.0
    mu_m: float = 1.0
    mu_s: float = 1.5
    n_m: int = 6
    n_s: int = 6
    queue_cap: int = 10
    backhaul_delay: float = 0.5
    batch_probs: tuple[float, ...] = (0.5, 0.5)
    delta: float = 0.5
    b_max: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "batch_probs", tuple(float(p) for p in self.batch_probs))
        for name in ("lambda_fg", "lambda_bg"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("mu_m", "mu_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_m < 1 or self.n_s < 1:
            raise ValueError("n_m and n_s must be at least 1")
        if self.queue_cap < 0:
            raise ValueError("queue_cap must be non-negative")
        if not self.backhaul_delay >= 0:
            raise ValueError("backhaul_delay must be non-negative")
        if not self.batch_probs or any(p < 0 for p in self.batch_probs):
            raise ValueError("batch_probs must be a non-empty vector of non-negative entries")
        if abs(sum(self.batch_probs) - 1.0) > 1e-12:
            raise ValueError("batch_probs must sum to 1")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        if not self.b_max >= 0:
            raise ValueError("b_max must be non-negative")

    @property
    def max_batch(self) -> int:
        return len(self.batch_probs)

    @property
    def mean_batch(self) -> float:
        return sum((i + 1) * p for i, p in enumerate(self.batch_probs))

    @property
    def cap_m(self) -> int:
        return self.n_m + self.queue_cap

    @property
    def cap_s(self) -> int:
        return self.n_s + self.queue_cap

    @property
    def n_actions(self) -> int:
        return self.max_batch + 2

    @property
    def max_rate(self) -> float:
        return self.lambda_fg + self.lambda_bg + self.n_m * self.mu_m + self.n_s * self.mu_s

    @property
    def weighted_arrival_rate(self) -> float:
        """Blocking-cost rate of the policy that blocks every batch."""
        return self.delta * self.lambda_bg + (1 - self.delta) * self.lambda_fg

    def replace(self, **changes) -> "ModelParams":
        from dataclasses import replace

        return replace(self, **changes)


class State(NamedTuple):
    s1: int
    s2: int
    k: int


class TransitionEntry(NamedTuple):
    next: State
    prob: float


def batch_size(params: ModelParams, k: int) -> int:
    """Batch size carried by tag ``k`` (0 for a departure)."""
    n = params.max_batch
    return k if k <= n else k - n


def is_background(params: ModelParams, k: int) -> bool:
    return k > params.max_batch


def check_state(params: ModelParams, s: State) -> None:
    s1, s2, k = s
    if not (0 <= s1 <= params.cap_m and 0 <= s2 <= params.cap_s and 0 <= k <= 2 * params.max_batch):
        raise InvalidStateError(f"state {tuple(s)} outside the state space")


def enumerate_states(params: ModelParams) -> list[State]:
    """All states in lexicographic ``(s1, s2, k)`` order."""
    return [
        State(*t)
        for t in itertools.product(
            range(params.cap_m + 1), range(params.cap_s + 1), range(2 * params.max_batch + 1)
        )
    ]


def state_index(params: ModelParams, s: State) -> int:
    """Position of ``s`` in :func:`enumerate_states` without building the list."""
    check_state(params, s)
    s1, s2, k = s
    n_k = 2 * params.max_batch + 1
    return (s1 * (params.cap_s + 1) + s2) * n_k + k


def feasible_actions(params: ModelParams, s: State) -> set[int]:
    check_state(params, s)
    s1, s2, k = s
    if k == 0:
        return {BLOCK}
    g = batch_size(params, k)
    acts = {BLOCK}
    if is_background(params, k):
        if s1 + g <= params.cap_m:
            acts.add(g + 1)
        return acts
    for j in range(g + 1):
        if s1 + j <= params.cap_m and s2 + g - j <= params.cap_s:
            acts.add(j + 1)
    return acts


def total_rate(params: ModelParams, s1: int, s2: int) -> float:
    return (
        params.lambda_fg
        + params.lambda_bg
        + min(s1, params.n_m) * params.mu_m
        + min(s2, params.n_s) * params.mu_s
    )


def split(params: ModelParams, s: State, a: int) -> tuple[int, int]:
    """Packets sent to (M, S) when taking ``a`` in ``s``."""
    if a not in feasible_actions(params, s):
        raise InfeasibleActionError(f"action {a} infeasible in state {tuple(s)}")
    if a == BLOCK:
        return 0, 0
    g = batch_size(params, s.k)
    return a - 1, g - (a - 1)


def apply_action(params: ModelParams, s: State, a: int) -> tuple[int, int]:
    to_m, to_s = split(params, s, a)
    return s.s1 + to_m, s.s2 + to_s


def transitions(params: ModelParams, s: State, a: int) -> list[TransitionEntry]:
    """Embedded-chain row: next decision epoch after taking ``a`` in ``s``.

    Departure numerators use ``min(s', n) * mu`` so the row matches the
    M/M/n total rate; the row is then exactly stochastic.
    """
    s1, s2 = apply_action(params, s, a)
    nu = total_rate(params, s1, s2)
    n = params.max_batch
    out = []
    if s1 > 0:
        out.append(TransitionEntry(State(s1 - 1, s2, 0), min(s1, params.n_m) * params.mu_m / nu))
    if s2 > 0:
        out.append(TransitionEntry(State(s1, s2 - 1, 0), min(s2, params.n_s) * params.mu_s / nu))
    for g, alpha in enumerate(params.batch_probs, start=1):
        if params.lambda_fg * alpha > 0:
            out.append(TransitionEntry(State(s1, s2, g), params.lambda_fg * alpha / nu))
        if params.lambda_bg * alpha > 0:
            out.append(TransitionEntry(State(s1, s2, n + g), params.lambda_bg * alpha / nu))
    return out


def expected_sojourn(params: ModelParams, s: State, a: int) -> float:
    return 1.0 / total_rate(params, *apply_action(params, s, a))


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Array view of the model used by the solvers.

    ``feasible[i, a]`` marks feasible pairs; ``post_m``/``post_s`` hold the
    post-action occupancies (garbage where infeasible); ``rate`` is the total
    event rate after the action.
    """

    params: ModelParams
    states: list[State] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "states", enumerate_states(self.params))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return self.params.n_actions

    def index(self, s: State) -> int:
        return state_index(self.params, s)

    @cached_property
    def coords(self) -> np.ndarray:
        return np.array(self.states, dtype=np.int64).reshape(-1, 3)

    @cached_property
    def feasible(self) -> np.ndarray:
        p = self.params
        s1, s2, k = self.coords.T
        n = p.max_batch
        g = np.where(k > n, k - n, k)
        out = np.zeros((self.n_states, self.n_actions), dtype=bool)
        out[:, BLOCK] = True
        for a in range(1, self.n_actions):
            j = a - 1
            fg = (k >= 1) & (k <= n) & (j <= g) & (s1 + j <= p.cap_m) & (s2 + g - j <= p.cap_s)
            bg = (k > n) & (j == g) & (s1 + j <= p.cap_m)
            out[:, a] = fg | bg
        return out

    @cached_property
    def post(self) -> tuple[np.ndarray, np.ndarray]:
        s1, s2, k = self.coords.T
        n = self.params.max_batch
        g = np.where(k > n, k - n, k)
        j = np.arange(self.n_actions)[None, :] - 1
        to_m = np.where(self.feasible & (j >= 0), j, 0)
        to_s = np.where(self.feasible & (j >= 0), g[:, None] - j, 0)
        return s1[:, None] + to_m, s2[:, None] + to_s

    @cached_property
    def rate(self) -> np.ndarray:
        p = self.params
        pm, ps = self.post
        return (
            p.lambda_fg
            + p.lambda_bg
            + np.minimum(pm, p.n_m) * p.mu_m
            + np.minimum(ps, p.n_s) * p.mu_s
        )

    @cached_property
    def sojourn(self) -> np.ndarray:
        return np.where(self.feasible, 1.0 / self.rate, np.nan)

    @cached_property
    def blocking(self) -> np.ndarray:
        """Blocking cost per (state, action); NaN where infeasible."""
        p = self.params
        k = self.coords[:, 2]
        out = np.zeros((self.n_states, self.n_actions))
        out[:, BLOCK] = np.where(k > p.max_batch, p.delta, np.where(k >= 1, 1 - p.delta, 0.0))
        return np.where(self.feasible, out, np.nan)

    def kernel_rows(self, actions: np.ndarray):
        """Sparse embedded-chain matrix for one action per state (CSR)."""
        from scipy import sparse

        p = self.params
        idx = np.arange(self.n_states)
        if not self.feasible[idx, actions].all():
            bad = idx[~self.feasible[idx, actions]][0]
            raise InfeasibleActionError(
                f"action {actions[bad]} infeasible in state {tuple(self.states[bad])}"
            )
        pm, ps = self.post
        s1 = pm[idx, actions]
        s2 = ps[idx, actions]
        nu = self.rate[idx, actions]
        n_k = 2 * p.max_batch + 1
        base = (s1 * (p.cap_s + 1) + s2) * n_k
        rows, cols, vals = [], [], []
        dep_m = np.minimum(s1, p.n_m) * p.mu_m / nu
        m = s1 > 0
        rows.append(idx[m]); cols.append(base[m] - (p.cap_s + 1) * n_k); vals.append(dep_m[m])
        dep_s = np.minimum(s2, p.n_s) * p.mu_s / nu
        m = s2 > 0
        rows.append(idx[m]); cols.append(base[m] - n_k); vals.append(dep_s[m])
        for g, alpha in enumerate(p.batch_probs, start=1):
            for lam, tag in ((p.lambda_fg, g), (p.lambda_bg, p.max_batch + g)):
                if lam * alpha > 0:
                    rows.append(idx); cols.append(base + tag); vals.append(lam * alpha / nu)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_states, self.n_states),
        )

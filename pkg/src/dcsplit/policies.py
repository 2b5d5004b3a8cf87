from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BLOCK, InfeasibleActionError, StateSpace


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic stationary policy: one action code per state index."""

    actions: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.actions, dtype=np.int64).copy()
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    def __len__(self):
        return len(self.actions)

    def __getitem__(self, i):
        return int(self.actions[i])

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)

    def __hash__(self):
        return hash(self.actions.tobytes())

    def check(self, space: StateSpace) -> None:
        if len(self.actions) != space.n_states:
            raise ValueError(f"policy has {len(self.actions)} entries, state space has {space.n_states}")
        a = self.actions
        ok = (a >= 0) & (a < space.n_actions)
        ok[ok] = space.feasible[np.nonzero(ok)[0], a[ok]]
        if not ok.all():
            i = int(np.nonzero(~ok)[0][0])
            raise InfeasibleActionError(f"action {a[i]} infeasible in state {tuple(space.states[i])}")

    def branches(self) -> list[tuple[float, "Policy"]]:
        return [(1.0, self)]


@dataclass(frozen=True, eq=False)
class RandomizedMixture:
    """Per-decision-epoch coin flip: ``policy_low`` with probability ``q``."""

    policy_low: Policy
    policy_high: Policy
    q: float
    beta_star: float = float("nan")
    epsilon: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")

    @property
    def deterministic(self) -> bool:
        return self.q in (0.0, 1.0) or self.policy_low == self.policy_high

    def check(self, space: StateSpace) -> None:
        self.policy_low.check(space)
        self.policy_high.check(space)

    def branches(self) -> list[tuple[float, Policy]]:
        if self.policy_low == self.policy_high:
            return [(1.0, self.policy_low)]
        return [(w, p) for w, p in ((self.q, self.policy_low), (1.0 - self.q, self.policy_high)) if w > 0]


def always_block(space: StateSpace) -> Policy:
    return Policy(np.full(space.n_states, BLOCK))


def greedy_accept(space: StateSpace, prefer: str = "m") -> Policy:
    """Accept whenever possible, preferring the most (``"m"``) or fewest (``"s"``) packets in M."""
    feas = space.feasible
    if prefer == "m":
        a = feas.shape[1] - 1 - np.argmax(feas[:, ::-1], axis=1)
    elif prefer == "s":
        masked = feas.copy()
        masked[:, BLOCK] = False
        a = np.where(masked.any(axis=1), np.argmax(masked, axis=1), BLOCK)
    else:
        raise ValueError(prefer)
    return Policy(a)

"""Uniformization, relative value iteration and exact policy evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .costs import delay_cost_table
from .model import BLOCK, ModelParams, StateSpace
from .policies import Policy, RandomizedMixture


class ConvergenceError(RuntimeError):
    def __init__(self, msg, span=None):
        super().__init__(msg)
        self.span = span


class ReducibleChainError(RuntimeError):
    def __init__(self, msg, closed_sets=()):
        super().__init__(msg)
        self.closed_sets = closed_sets


@dataclass(frozen=True, eq=False)
class UniformizedModel:
    """Discrete-time model with common step ``tau``.

    ``c_hat``/``b_hat`` are (states, actions) arrays with NaN where the pair is
    infeasible.  ``embedded`` and ``T_hat`` stack one (states x states) block
    per action code; rows of infeasible pairs are empty.
    """

    space: StateSpace
    costs: np.ndarray
    tau: float
    c_hat: np.ndarray
    b_hat: np.ndarray
    embedded: sparse.csr_matrix
    T_hat: sparse.csr_matrix

    @property
    def params(self) -> ModelParams:
        return self.space.params

    @property
    def n_states(self) -> int:
        return self.space.n_states

    @property
    def n_actions(self) -> int:
        return self.space.n_actions

    def h_hat(self, beta: float) -> np.ndarray:
        return self.c_hat + beta * self.b_hat

    def rows(self, stacked: sparse.csr_matrix, actions: np.ndarray) -> sparse.csr_matrix:
        """Select one row per state from an action-stacked matrix."""
        return stacked[np.asarray(actions) * self.n_states + np.arange(self.n_states)]


@dataclass
class ValueSolution:
    values: np.ndarray
    gain: float
    iterations: int
    span: float


@dataclass
class Evaluation:
    avg_delay: float
    avg_blocking: float
    stationary: np.ndarray

    def blocking_per_arrival(self, params: ModelParams) -> float:
        return self.avg_blocking / params.weighted_arrival_rate


def uniformize(
    space: StateSpace | ModelParams, costs: np.ndarray | None = None, tau: float | None = None
) -> UniformizedModel:
    if isinstance(space, ModelParams):
        space = StateSpace(space)
    if costs is None:
        costs = delay_cost_table(space)
    params = space.params
    if tau is None:
        tau = 0.999 / params.max_rate
    sojourn = space.sojourn
    if not 0 < tau < np.nanmin(sojourn):
        raise ValueError(f"tau={tau} must lie in (0, min sojourn={np.nanmin(sojourn)})")
    S, A = space.n_states, space.n_actions
    with np.errstate(invalid="ignore"):
        c_hat = costs / sojourn
        b_hat = space.blocking / sojourn
    blocks_p, blocks_t = [], []
    idx = np.arange(S)
    for a in range(A):
        feas = space.feasible[:, a]
        acts = np.where(feas, a, BLOCK)
        P = space.kernel_rows(acts)
        keep = sparse.diags(feas.astype(float))
        P = keep @ P
        ratio = np.where(feas, tau / np.where(feas, sojourn[:, a], 1.0), 0.0)
        T = sparse.diags(ratio) @ P + sparse.csr_matrix(
            (np.where(feas, 1.0 - ratio, 0.0), (idx, idx)), shape=(S, S)
        )
        blocks_p.append(P)
        blocks_t.append(T)
    embedded = sparse.vstack(blocks_p, format="csr")
    T_hat = sparse.vstack(blocks_t, format="csr")
    return UniformizedModel(space, costs, float(tau), c_hat, b_hat, embedded, T_hat)


def _greedy(Q: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, i.e. the smallest action code on ties
    return np.argmin(Q, axis=1)


def relative_value_iteration(
    model: UniformizedModel,
    beta: float = 0.0,
    tol: float = 1e-9,
    max_iters: int = 200_000,
    initial: np.ndarray | None = None,
    ref_state: int = 0,
) -> tuple[Policy, ValueSolution]:
    """Relative VIA anchored at ``ref_state``.

    Stops once the span of successive value differences is at most
    ``tol * max(|g|, 1)``; ``g`` is the midpoint of the span bounds.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    S, A = model.n_states, model.n_actions
    h = np.where(np.isnan(model.c_hat), np.inf, model.h_hat(beta)).T.ravel()
    T = model.T_hat
    V = np.zeros(S) if initial is None else np.asarray(initial, dtype=float).copy()
    span = np.inf
    for it in range(1, max_iters + 1):
        Q = (h + T @ V).reshape(A, S)
        TV = Q.min(axis=0)
        diff = TV - V
        lo, hi = diff.min(), diff.max()
        span = hi - lo
        gain = 0.5 * (lo + hi)
        V = TV - TV[ref_state]
        if span <= tol * max(abs(gain), 1.0):
            Q = (h + T @ V).reshape(A, S).T
            return Policy(_greedy(Q)), ValueSolution(V, gain, it, span)
    raise ConvergenceError(f"relative value iteration did not converge in {max_iters} sweeps (span={span:.3e})", span)


def closed_classes(P: sparse.spmatrix) -> list[list[int]]:
    """Closed communicating classes of a stochastic matrix."""
    n, labels = csgraph.connected_components(P, directed=True, connection="strong")
    C = sparse.coo_matrix(P)
    leaves = np.ones(n, dtype=bool)
    m = (labels[C.row] != labels[C.col]) & (C.data > 0)
    leaves[labels[C.row[m]]] = False
    return [np.nonzero(labels == c)[0].tolist() for c in np.nonzero(leaves)[0]]


def stationary_distribution(P: sparse.spmatrix, tol: float = 1e-12) -> np.ndarray:
    """Stationary distribution of a unichain row-stochastic matrix."""
    P = sparse.csr_matrix(P)
    n = P.shape[0]
    classes = closed_classes(P)
    if len(classes) > 1:
        sizes = ", ".join(str(len(c)) for c in classes)
        raise ReducibleChainError(
            f"chain has {len(classes)} disjoint closed sets (sizes {sizes}); first states {[c[0] for c in classes]}",
            classes,
        )
    ref = classes[0][0]
    A = sparse.lil_matrix((P.T - sparse.identity(n)).tocsr())
    A[ref, :] = np.ones(n)
    rhs = np.zeros(n)
    rhs[ref] = 1.0
    mu = splinalg.spsolve(A.tocsc(), rhs)
    resid = np.abs(mu @ P - mu).max() if np.all(np.isfinite(mu)) else np.inf
    if resid > 1e-10:
        mu = np.full(n, 1.0 / n)
        for _ in range(1_000_000):
            nxt = mu @ P
            if np.abs(nxt - mu).max() <= tol:
                mu = nxt
                break
            mu = nxt
        else:
            raise ReducibleChainError("stationary solve failed to converge")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def _averaged_smdp(model: UniformizedModel, policy):
    """Embedded kernel, sojourn, delay and blocking costs under per-epoch randomization."""
    policy.check(model.space)
    idx = np.arange(model.n_states)
    P = 0
    soj = np.zeros(model.n_states)
    c = np.zeros(model.n_states)
    b = np.zeros(model.n_states)
    for w, pol in policy.branches():
        a = pol.actions
        P = P + w * model.rows(model.embedded, a)
        soj += w * model.space.sojourn[idx, a]
        c += w * model.costs[idx, a]
        b += w * model.space.blocking[idx, a]
    return sparse.csr_matrix(P), soj, c, b


def evaluate_policy(model: UniformizedModel, policy: Policy | RandomizedMixture) -> Evaluation:
    """Exact long-run delay and blocking rates (per second) of a stationary policy.

    For a mixture the coin is flipped at every real decision epoch: the
    embedded rows, sojourns and costs are q-weighted and the averaged SMDP is
    uniformized with the model's ``tau``.  For a deterministic policy this is
    exactly the row of the uniformized model.
    """
    P, soj, c, b = _averaged_smdp(model, policy)
    ratio = model.tau / soj
    T = sparse.diags(ratio) @ P + sparse.diags(1.0 - ratio)
    mu = stationary_distribution(T)
    return Evaluation(float(mu @ (c / soj)), float(mu @ (b / soj)), mu)


def smdp_average(model: UniformizedModel, policy: Policy | RandomizedMixture) -> tuple[float, float]:
    """Renewal-reward averages on the embedded chain: sum(pi c) / sum(pi tau)."""
    P, soj, c, b = _averaged_smdp(model, policy)
    pi = stationary_distribution(P)
    t = pi @ soj
    return float(pi @ c / t), float(pi @ b / t)


def occupancy_marginal(model: UniformizedModel, policy: Policy | RandomizedMixture, mu=None) -> np.ndarray:
    """Long-run fraction of time with (s1, s2) packets held, as a (cap_m+1, cap_s+1) array.

    Between epochs the system holds the post-action occupancy, so the
    stationary mass of each state is credited there.
    """
    if mu is None:
        mu = evaluate_policy(model, policy).stationary
    p = model.params
    pm, ps = model.space.post
    idx = np.arange(model.n_states)
    out = np.zeros((p.cap_m + 1, p.cap_s + 1))
    _, soj, _, _ = _averaged_smdp(model, policy)
    for w, pol in policy.branches():
        a = pol.actions
        # time share of the branch inside a randomized epoch is weighted by its sojourn
        share = w * model.space.sojourn[idx, a] / soj
        np.add.at(out, (pm[idx, a], ps[idx, a]), mu * share)
    return out

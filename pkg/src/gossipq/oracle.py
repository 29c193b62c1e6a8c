"""Exact small-instance computations.

Everything here is deterministic linear algebra or enumeration: stationary
distributions and average costs of frozen joint policies, brute-force
feasibility checks, the min-max saddle point over the truncated weight
simplex, and the replicator vector field that the hedge row update follows
in the small-step limit. These routines double as the reference layer the
learning code is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .env import CostMode, MmdpSpec
from .errors import CapacityError, NumericError, StructureError

POLICY_ENUMERATION_BUDGET = 10**6
MAX_EVAL_STATES = 20_000
_STATIONARY_TOL = 1e-9


@dataclass(frozen=True)
class PolicyEvaluation:
    """Stationary distribution and per-agent average cost of a frozen policy."""

    stationary: np.ndarray
    avg_cost: np.ndarray


@dataclass(frozen=True)
class TruncatedSimplexPoint:
    """Probability vector with every coordinate at least eps (eps < 1/N)."""

    w: np.ndarray
    eps: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        n = w.size
        if not self.eps < 1.0 / n:
            raise ValueError(f"eps={self.eps} must be below 1/{n}")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < self.eps - 1e-12):
            raise ValueError("not a point of the truncated simplex")


@dataclass(frozen=True)
class SaddleResult:
    """Outcome of the min-max search over policies and truncated weights."""

    policy: np.ndarray
    weights: TruncatedSimplexPoint
    value: float
    worst_violation: float
    violation_bound: float
    bound_holds: bool
    randomized_gap: Optional[float] = None


def _as_policy_array(spec: MmdpSpec, policy) -> np.ndarray:
    """Normalize a policy argument to (N,S) ints or (N,S,A) distributions."""
    if isinstance(policy, str):
        if policy != "uniform":
            raise ValueError(f"unknown policy spec {policy!r}")
        return np.full((spec.n_agents, spec.n_states, spec.n_actions), 1.0 / spec.n_actions)
    arr = np.asarray(policy)
    if arr.shape == (spec.n_agents, spec.n_states):
        a = arr.astype(int)
        if np.any(a < 0) or np.any(a >= spec.n_actions):
            raise ValueError("policy action out of range")
        return a
    if arr.shape == (spec.n_agents, spec.n_states, spec.n_actions):
        p = arr.astype(float)
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=2) - 1.0)) > 1e-9:
            raise ValueError("policy rows must be distributions")
        return p
    raise ValueError(f"policy shape {arr.shape} not understood")


def induced_chain(spec: MmdpSpec, policy) -> tuple[np.ndarray, np.ndarray]:
    """Transition matrix and per-agent expected stage cost under a policy.

    Returns (P, c) with P of shape (S, S) and c of shape (N, S).
    """
    pol = _as_policy_array(spec, policy)
    states = np.arange(spec.n_states)
    if pol.ndim == 2:
        joint = pol.T @ spec.action_radix
        chain = spec.transition[states, joint]
        if spec.cost_mode is CostMode.SIMPLE:
            stage = spec.costs[np.arange(spec.n_agents)[:, None], states[None, :], pol]
        else:
            stage = spec.costs[:, states, joint]
        return chain, stage
    # stochastic policy: mix over joint actions, weights as the outer product
    # of per-agent rows in joint-index order (agent 0 most significant)
    w = np.ones((spec.n_states, 1))
    for i in range(spec.n_agents):
        w = (w[:, :, None] * pol[i][:, None, :]).reshape(spec.n_states, -1)
    chain = np.einsum("sj,sjt->st", w, spec.transition)
    if spec.cost_mode is CostMode.SIMPLE:
        stage = np.einsum("isa,isa->is", spec.costs, pol)
    else:
        stage = np.einsum("sj,isj->is", w, spec.costs)
    return chain, stage


def _is_irreducible(P: np.ndarray) -> bool:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    n_comp, _ = connected_components(csr_matrix(P > 0.0), directed=True, connection="strong")
    return n_comp == 1


def _closed_class_count(P: np.ndarray) -> int:
    """Number of closed communicating classes; the time-average cost is
    start-state independent exactly when there is one."""
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    n_comp, labels = connected_components(
        csr_matrix(P > 0.0), directed=True, connection="strong"
    )
    open_class = np.zeros(n_comp, dtype=bool)
    src, dst = np.nonzero(P > 0.0)
    leaving = labels[src] != labels[dst]
    open_class[labels[src[leaving]]] = True
    return int(n_comp - open_class.sum())


def stationary_of_chain(P: np.ndarray) -> np.ndarray:
    """Stationary distribution of a single-closed-class chain by linear solve."""
    n = P.shape[0]
    M = np.eye(n) - P.T
    M[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    mu = None
    try:
        mu = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        pass
    if mu is None or np.any(mu < -1e-9) or np.abs(mu @ P - mu).sum() > _STATIONARY_TOL:
        # replaced-row solve can go singular on chains with transient states;
        # the stacked least-squares system is rank-safe
        stacked = np.vstack([np.eye(n) - P.T, np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        mu = np.linalg.lstsq(stacked, rhs, rcond=None)[0]
    if np.any(mu < -1e-9):
        raise StructureError("stationary solve produced negative mass")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    if np.abs(mu @ P - mu).sum() > _STATIONARY_TOL:
        raise NumericError("stationary residual too large")
    return mu


def evaluate_policy(spec: MmdpSpec, policy, *, check_irreducible: bool = True) -> PolicyEvaluation:
    """Exact stationary distribution and average cost vector of a frozen policy.

    Accepts any chain with a single closed communicating class (transient
    states are fine: they carry no stationary mass and the averages do not
    depend on the start state). Chains that split into several closed
    classes have no well-defined average and are rejected.
    """
    if spec.n_states > MAX_EVAL_STATES:
        raise CapacityError(f"{spec.n_states} states exceeds exact-evaluation cap")
    P, stage = induced_chain(spec, policy)
    if check_irreducible and _closed_class_count(P) != 1:
        raise StructureError("induced chain splits into several closed classes")
    mu = stationary_of_chain(P)
    return PolicyEvaluation(stationary=mu, avg_cost=stage @ mu)


def policy_count(spec: MmdpSpec) -> int:
    return spec.n_actions ** (spec.n_agents * spec.n_states)


def enumerate_policies(spec: MmdpSpec, chunk: int = 16384) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (offset, block) pairs covering every deterministic joint policy.

    Blocks have shape (k, N, S) and run in lexicographic order of the
    flattened (agent-major) action encoding, so policy id = offset + row.
    """
    total = policy_count(spec)
    if total > POLICY_ENUMERATION_BUDGET:
        raise CapacityError(f"{total} deterministic policies exceed the enumeration budget")
    slots = spec.n_agents * spec.n_states
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(ids, (spec.n_actions,) * slots), axis=1)
        yield start, digits.reshape(-1, spec.n_agents, spec.n_states)


def _evaluate_policy_block(spec: MmdpSpec, block: np.ndarray) -> np.ndarray:
    """Average-cost matrix g of shape (k, N) for a block of deterministic policies."""
    k, n_agents, n_states = block.shape
    states = np.arange(n_states)
    joint = np.einsum("kis,i->ks", block, spec.action_radix)
    P = spec.transition[states[None, :], joint]  # (k, S, S)
    M = np.broadcast_to(np.eye(n_states), (k, n_states, n_states)).copy()
    M -= np.transpose(P, (0, 2, 1))
    M[:, -1, :] = 1.0
    b = np.zeros((k, n_states, 1))
    b[:, -1, 0] = 1.0
    try:
        mu = np.linalg.solve(M, b)[..., 0]
    except np.linalg.LinAlgError:
        # a reducible chain slipped into the batch; find it for the report
        for row in range(k):
            if not _is_irreducible(P[row]):
                raise StructureError("induced chain is reducible under an enumerated policy")
        raise
    bad = np.abs(np.einsum("ks,kst->kt", mu, P) - mu).sum(axis=1) > _STATIONARY_TOL
    if np.any(bad):
        raise StructureError("induced chain is reducible under an enumerated policy")
    if spec.cost_mode is CostMode.SIMPLE:
        stage = spec.costs[
            np.arange(n_agents)[None, :, None], states[None, None, :], block
        ]  # (k, N, S)
    else:
        stage = np.transpose(spec.costs[:, states[None, :], joint], (1, 0, 2))
    return np.einsum("kis,ks->ki", stage, mu)


def all_policies_irreducible(spec: MmdpSpec) -> bool:
    """On-demand check that every deterministic joint policy induces an
    irreducible chain (enumeration-budget guarded)."""
    states = np.arange(spec.n_states)
    for _, block in enumerate_policies(spec):
        joint = np.einsum("kis,i->ks", block, spec.action_radix)
        for row in range(block.shape[0]):
            if not _is_irreducible(spec.transition[states, joint[row]]):
                return False
    return True


def check_feasibility(spec: MmdpSpec) -> Optional[np.ndarray]:
    """First deterministic joint policy meeting every agent's bound, or None."""
    if spec.bounds is None:
        raise ValueError("spec has no bounds to check against")
    for offset, block in enumerate_policies(spec):
        g = _evaluate_policy_block(spec, block)
        ok = np.flatnonzero(np.all(g <= spec.bounds[None, :] + 1e-12, axis=1))
        if ok.size:
            return block[ok[0]]
    return None


def _inner_max_value(dev: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form max of sum_i w_i dev_i over the truncated simplex.

    The maximizer parks eps on every agent and the surplus 1 - N*eps on the
    worst deviation (ties to the lowest index). Works on a (k, N) batch.
    """
    n = dev.shape[1]
    istar = np.argmax(dev, axis=1)
    total = dev.sum(axis=1)
    top = dev[np.arange(dev.shape[0]), istar]
    value = (1.0 - (n - 1) * eps) * top + eps * (total - top)
    return value, istar


def solve_saddle(
    spec: MmdpSpec,
    eps: float,
    *,
    randomized_samples: int = 0,
    seed: int = 0,
) -> SaddleResult:
    """Min over deterministic joint policies of the worst eps-truncated
    weighted bound deviation.

    The inner maximization is exact (vertex of the truncated simplex); the
    outer minimization enumerates deterministic policies, breaking ties
    toward the lexicographically smallest encoding. Optionally also samples
    random stochastic policies and reports how much they improve the value.
    """
    if spec.bounds is None:
        raise ValueError("spec has no bounds")
    if not 0.0 <= eps < 1.0 / spec.n_agents:
        raise ValueError(f"eps must lie in [0, 1/{spec.n_agents})")
    best_value = np.inf
    best_policy = None
    best_istar = 0
    best_g = None
    for offset, block in enumerate_policies(spec):
        g = _evaluate_policy_block(spec, block)
        value, istar = _inner_max_value(g - spec.bounds[None, :], eps)
        k = int(np.argmin(value))
        if value[k] < best_value:
            best_value = float(value[k])
            best_policy = block[k].copy()
            best_istar = int(istar[k])
            best_g = g[k].copy()
    n = spec.n_agents
    w = np.full(n, eps)
    w[best_istar] = 1.0 - (n - 1) * eps
    dev = best_g - spec.bounds
    worst = float(dev.max())
    min_cost = spec.costs.min(axis=(1, 2))
    bound = float(eps / (1.0 - n * eps) * np.sum(spec.bounds - min_cost)) if eps > 0 else np.inf
    holds = worst <= bound + 1e-9
    if best_value <= 1e-12 and not holds:
        raise NumericError(
            f"worst violation {worst} exceeded its guaranteed cap {bound} on a feasible instance"
        )
    gap = None
    if randomized_samples > 0:
        rng = np.random.default_rng(seed)
        best_rand = np.inf
        for _ in range(randomized_samples):
            pol = rng.dirichlet(np.ones(spec.n_actions), size=(spec.n_agents, spec.n_states))
            ev = evaluate_policy(spec, pol, check_irreducible=False)
            value, _ = _inner_max_value((ev.avg_cost - spec.bounds)[None, :], eps)
            best_rand = min(best_rand, float(value[0]))
        gap = max(0.0, best_value - best_rand)
    return SaddleResult(
        policy=best_policy,
        weights=TruncatedSimplexPoint(w=w, eps=eps),
        value=best_value,
        worst_violation=worst,
        violation_bound=bound,
        bound_holds=holds,
        randomized_gap=gap,
    )


# ---------------------------------------------------------------------------
# replicator dynamics of the hedge row update


def replicator_field(p_row: np.ndarray, payoffs: np.ndarray, neighborhood_size: int) -> np.ndarray:
    """Vector field the hedge row update follows as its step sizes vanish.

    Component j is p_j * (m_j - sum_k m_k p_k) + (1/(1+deg) - p_j); the
    components of the field sum to zero on the simplex and are strictly
    positive on its faces.
    """
    p = np.asarray(p_row, dtype=float)
    m = np.asarray(payoffs, dtype=float)
    if p.shape != m.shape or p.size != neighborhood_size + 1:
        raise ValueError("row, payoffs and neighbourhood size disagree")
    avg = float(m @ p)
    return p * (m - avg) + (1.0 / (neighborhood_size + 1) - p)


def replicator_integrate(
    p0: np.ndarray, payoffs: np.ndarray, dt: float, steps: int
) -> np.ndarray:
    """Forward-Euler trajectory of the replicator field on the simplex."""
    if not 0.0 < dt <= 1e-2:
        raise ValueError("dt must lie in (0, 1e-2]")
    p = np.asarray(p0, dtype=float).copy()
    d = p.size
    traj = np.empty((steps + 1, d))
    traj[0] = p
    for k in range(1, steps + 1):
        p = p + dt * replicator_field(p, payoffs, d - 1)
        if np.any(p < -1e-9):
            raise NumericError(f"trajectory left the simplex at step {k}")
        p = np.clip(p, 0.0, None)
        if abs(p.sum() - 1.0) > 1e-12:
            p = p / p.sum()
        traj[k] = p
    return traj

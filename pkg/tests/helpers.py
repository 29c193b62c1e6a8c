"""Independent reference computations used by the tests.

These deliberately avoid the library's own code paths: the stationary
solver here is an eigenvector solve, average costs come from relative
value iteration or brute enumeration, and recursions are re-implemented
as plain loops.
"""

import numpy as np

from gossipq.env import CostMode, MmdpSpec


def stationary_eig(P: np.ndarray) -> np.ndarray:
    """Left Perron eigenvector via a dense eigendecomposition."""
    vals, vecs = np.linalg.eig(P.T)
    idx = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, idx])
    pi = np.abs(pi)
    return pi / pi.sum()


def rvi_q_factors(kernel: np.ndarray, cost: np.ndarray, reference=(0, 0),
                  iters: int = 200_000, tol: float = 1e-12) -> np.ndarray:
    """Exact damped relative Q-factor iteration for one agent.

    ``kernel`` is (S, A, S), ``cost`` is (S, A). Damping (half-steps) leaves
    the fixed point alone but kills the period-2 oscillation the reference
    subtraction would otherwise cause. At the fixed point the reference
    entry equals the optimal average cost.
    """
    s0, a0 = reference
    q = np.zeros_like(cost)
    for _ in range(iters):
        mapped = cost + np.einsum("sat,t->sa", kernel, q.min(axis=1)) - q[s0, a0]
        nxt = 0.5 * q + 0.5 * mapped
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    raise RuntimeError("relative value iteration did not converge")


def single_agent_optimal_average_cost(kernel: np.ndarray, cost: np.ndarray) -> float:
    """Brute force over deterministic policies: min over pi of mu(pi) . c(pi)."""
    n_states, n_actions = cost.shape
    best = np.inf
    for flat in range(n_actions ** n_states):
        pol = np.empty(n_states, dtype=int)
        k = flat
        for s in range(n_states - 1, -1, -1):
            pol[s] = k % n_actions
            k //= n_actions
        P = kernel[np.arange(n_states), pol]
        mu = stationary_eig(P)
        best = min(best, float(mu @ cost[np.arange(n_states), pol]))
    return best


def random_positive_spec(n_agents: int, n_states: int, n_actions: int, rng,
                         cost_mode: CostMode = CostMode.SIMPLE) -> MmdpSpec:
    """Random instance with strictly positive kernel rows (irreducible under
    every policy) and uniform [0, 10] costs."""
    n_joint = n_actions ** n_agents
    kernel = 1.0 - rng.random((n_states, n_joint, n_states))
    kernel /= kernel.sum(axis=2, keepdims=True)
    shape = (
        (n_agents, n_states, n_actions)
        if cost_mode is CostMode.SIMPLE
        else (n_agents, n_states, n_joint)
    )
    costs = rng.uniform(0.0, 10.0, size=shape)
    return MmdpSpec(
        n_agents=n_agents,
        n_states=n_states,
        n_actions=n_actions,
        transition=kernel,
        cost_mode=cost_mode,
        costs=costs,
    )


def constant_cost_spec(n_agents: int, n_states: int, n_actions: int, value: float,
                       rng) -> MmdpSpec:
    spec = random_positive_spec(n_agents, n_states, n_actions, rng)
    return MmdpSpec(
        n_agents=spec.n_agents,
        n_states=spec.n_states,
        n_actions=spec.n_actions,
        transition=spec.transition,
        cost_mode=CostMode.SIMPLE,
        costs=np.full_like(spec.costs, value),
    )


def random_connected_graph(n_agents: int, rng):
    """Random spanning tree plus a few extra edges."""
    edges = set()
    nodes = list(rng.permutation(n_agents))
    for a, b in zip(nodes, nodes[1:]):
        edges.add((min(int(a), int(b)), max(int(a), int(b))))
    extra = rng.integers(0, n_agents, size=(n_agents, 2))
    for a, b in extra:
        if a != b:
            edges.add((min(int(a), int(b)), max(int(a), int(b))))
    from gossipq.weights import CommGraph

    return CommGraph(n_agents=n_agents, edges=frozenset(edges))

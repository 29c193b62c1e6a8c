"""Communication graph, gossip rows and their two modulation schemes.

Each agent keeps a probability row over itself and its graph neighbours.
The row is reshaped every iteration so that neighbours currently violating
their cost bound attract more weight; the stationary distribution of the
resulting row-stochastic matrix then concentrates on the worst violator.
Two schemes are provided: a multiplicative-weights ("hedge") rule that
reweights the existing row, and a memoryless Metropolis-Hastings rule
whose stationary law is a Gibbs distribution in the bound deviations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import NumericError, StructureError

# Multiplicative factors are kept in this range before renormalizing so a row
# entry can never underflow to an irrecoverable hard zero.
FACTOR_MIN = 1e-300
FACTOR_MAX = 1e300

POWER_ITERATION_CAP = 10**6


@dataclass(frozen=True)
class CommGraph:
    """Undirected connected communication graph over ``n_agents`` nodes."""

    n_agents: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("need at least 2 agents")
        canon = set()
        for i, j in self.edges:
            if i == j:
                raise StructureError(f"self-loop on node {i}")
            if not (0 <= i < self.n_agents and 0 <= j < self.n_agents):
                raise StructureError(f"edge ({i},{j}) out of range")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))
        if not self._connected():
            raise StructureError("graph is not connected")

    def _connected(self) -> bool:
        seen = {0}
        frontier = [0]
        adj = self._adj
        while frontier:
            node = frontier.pop()
            for other in np.flatnonzero(adj[node]):
                if other not in seen:
                    seen.add(int(other))
                    frontier.append(int(other))
        return len(seen) == self.n_agents

    @cached_property
    def _adj(self) -> np.ndarray:
        a = np.zeros((self.n_agents, self.n_agents), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    @cached_property
    def _sup(self) -> np.ndarray:
        s = self._adj.copy()
        np.fill_diagonal(s, True)
        return s

    @cached_property
    def _deg(self) -> np.ndarray:
        return self._adj.sum(axis=1).astype(int)

    def adjacency(self) -> np.ndarray:
        return self._adj.copy()

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self._adj[i])]

    def degree(self, i: int) -> int:
        return int(self._deg[i])

    def degrees(self) -> np.ndarray:
        return self._deg.copy()

    def support(self) -> np.ndarray:
        """Boolean allowed-support mask: neighbours plus self-loop."""
        return self._sup.copy()


def build_graph(kind: str, n_agents: int, edges=None) -> CommGraph:
    """Build one of the standard graphs: cycle, complete, line, or custom."""
    kind = kind.lower()
    if n_agents < 2:
        raise ValueError("need at least 2 agents")
    if kind == "cycle":
        e = {(i, (i + 1) % n_agents) for i in range(n_agents)}
    elif kind == "complete":
        e = {(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)}
    elif kind == "line":
        e = {(i, i + 1) for i in range(n_agents - 1)}
    elif kind == "custom":
        if edges is None:
            raise ValueError("custom graph needs an edge list")
        e = {(int(i), int(j)) for i, j in edges}
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    return CommGraph(n_agents=n_agents, edges=frozenset(e))


@dataclass(frozen=True)
class GossipMatrix:
    """Row-stochastic averaging matrix supported on the graph plus self-loops."""

    graph: CommGraph
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        object.__setattr__(self, "rows", rows)
        n = self.graph.n_agents
        if rows.shape != (n, n):
            raise StructureError(f"rows must be {n}x{n}")
        if np.any(rows < 0):
            raise StructureError("negative row entry")
        if np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-12:
            raise StructureError("rows must sum to 1")
        if np.any(rows[~self.graph.support()] != 0.0):
            raise StructureError("entry outside neighbourhood support")


def uniform_rows(graph: CommGraph) -> np.ndarray:
    """Initial rows: weight 1/(1+deg(i)) on self and each neighbour."""
    sup = graph.support()
    rows = sup / sup.sum(axis=1, keepdims=True)
    return rows


def deviation_vector(z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Per-agent bound deviation z - beta; positive means the bound is violated."""
    v = np.asarray(z, dtype=float) - np.asarray(beta, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("deviations must be finite")
    return v


def _check_mwu_params(gamma: float, temperature: float, eps_w: float):
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must be in (0,1), got {gamma}")
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not (0.0 <= eps_w < 1.0):
        raise ValueError(f"eps_w must be in [0,1), got {eps_w}")


def mwu_factors(deviations: np.ndarray, gamma: float, temperature: float) -> np.ndarray:
    """Per-agent hedge factor: (1+g)^(d/T) when d >= 0, (1-g)^(-d/T) otherwise."""
    d = np.asarray(deviations, dtype=float) / temperature
    return np.where(d >= 0.0, (1.0 + gamma) ** d, (1.0 - gamma) ** (-d))


def mwu_row_update(
    graph: CommGraph,
    i: int,
    current_row: np.ndarray,
    deviations: np.ndarray,
    gamma: float,
    temperature: float,
    eps_w: float,
) -> np.ndarray:
    """Hedge reweighting of agent i's gossip row.

    Neighbour weights are multiplied up when the neighbour violates its bound
    and down otherwise, the self weight is left alone, the row is renormalized
    over its support and finally mixed with the uniform row so every supported
    entry stays at least eps_w / (1 + deg(i)).
    """
    _check_mwu_params(gamma, temperature, eps_w)
    row = np.asarray(current_row, dtype=float)
    sup = graph.support()[i]
    if row.shape != (graph.n_agents,):
        raise StructureError("row length mismatch")
    if np.any(row[~sup] != 0.0):
        raise StructureError("row has weight outside support")
    factors = mwu_factors(deviations, gamma, temperature)
    factors = factors.copy()
    factors[i] = 1.0
    raw = np.where(sup, np.clip(row * factors, FACTOR_MIN, FACTOR_MAX), 0.0)
    normalized = raw / raw.sum()
    uniform = sup / sup.sum()
    return (1.0 - eps_w) * normalized + eps_w * uniform


def mh_row_update(
    graph: CommGraph,
    i: int,
    deviations: np.ndarray,
    temperature: float,
) -> np.ndarray:
    """Metropolis-Hastings row for agent i, memoryless in the deviations.

    A neighbour doing worse than i (larger deviation) receives the full
    proposal weight 1/deg(i); a neighbour doing better is discounted by
    exp(-(V_i - V_j)/T). Leftover mass goes to the self weight.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    v = np.asarray(deviations, dtype=float)
    row = np.zeros(graph.n_agents)
    deg = graph.degree(i)
    for j in graph.neighbors(i):
        gap = max(v[i] - v[j], 0.0)
        row[j] = np.exp(-gap / temperature) / deg
    row[i] = 1.0 - row.sum()
    return row


def mh_rows(graph: CommGraph, deviations: np.ndarray, temperature: float) -> np.ndarray:
    """All agents' Metropolis-Hastings rows at once."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    v = np.asarray(deviations, dtype=float)
    adj, deg = graph._adj, graph._deg
    gaps = np.maximum(v[:, None] - v[None, :], 0.0)
    rows = np.where(adj, np.exp(-gaps / temperature) / deg[:, None], 0.0)
    rows[np.arange(len(v)), np.arange(len(v))] = 1.0 - rows.sum(axis=1)
    return rows


def mwu_rows(
    graph: CommGraph,
    current_rows: np.ndarray,
    deviations: np.ndarray,
    gamma: float,
    temperature: float,
    eps_w: float,
) -> np.ndarray:
    """All agents' hedge-updated rows at once."""
    _check_mwu_params(gamma, temperature, eps_w)
    sup = graph._sup
    factors = mwu_factors(deviations, gamma, temperature)
    fmat = np.tile(factors, (graph.n_agents, 1))
    np.fill_diagonal(fmat, 1.0)
    raw = np.where(sup, np.clip(current_rows * fmat, FACTOR_MIN, FACTOR_MAX), 0.0)
    normalized = raw / raw.sum(axis=1, keepdims=True)
    uniform = sup / sup.sum(axis=1, keepdims=True)
    return (1.0 - eps_w) * normalized + eps_w * uniform


def _strongly_connected(mask: np.ndarray) -> bool:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    n_comp, _ = connected_components(csr_matrix(mask), directed=True, connection="strong")
    return n_comp == 1


def stationary_distribution(matrix, tol: float = 1e-10) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix by power iteration.

    Requires an irreducible matrix with at least one self-loop (so the chain
    is aperiodic and the iteration converges). The returned vector v satisfies
    ||v P - v||_1 <= tol.
    """
    rows = matrix.rows if isinstance(matrix, GossipMatrix) else np.asarray(matrix, dtype=float)
    n = rows.shape[0]
    if rows.shape != (n, n):
        raise StructureError("matrix must be square")
    support = rows > 0.0
    if not _strongly_connected(support):
        raise StructureError("matrix is reducible")
    if not np.any(np.diag(rows) > 0.0):
        raise StructureError("no self-loop: chain may be periodic")
    pi = np.full(n, 1.0 / n)
    for _ in range(POWER_ITERATION_CAP):
        nxt = pi @ rows
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= tol:
            residual = np.abs(nxt @ rows - nxt).sum()
            if residual <= tol:
                return nxt
        pi = nxt
    raise NumericError(f"power iteration did not converge within {POWER_ITERATION_CAP} steps")

"""Per-agent learning state and the coupled update loop.

Each iteration runs, in order: generation of active pairs and next-state
samples, the relative Q-factor update on the fast step-size schedule, the
running-average-cost tracker on the medium schedule, the gossip averaging
of per-stage cost tables on the slow schedule, the gossip-row modulation
(hedge or Metropolis-Hastings), the epsilon-greedy policy refresh, and one
on-trajectory environment transition.

The single-pair operations (`q_update`, `running_cost_update`,
`gossip_update`, `policy_update`) define the contract; `Simulation.step`
applies the same arithmetic vectorized across agents and state-action
pairs, reading all tables from the previous iteration so that update order
within an iteration cannot change results.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .env import CostMode, EnvState, MmdpSpec, initial_state
from .errors import StructureError
from .rngs import substream
from .weights import CommGraph, mh_rows, mwu_rows, uniform_rows

_BLOCK = 512  # iterations of pre-drawn randomness per refill


@dataclass(frozen=True)
class StepSchedule:
    """Step-size schedules k^-fast, n^-medium, k^-slow (defaults 0.8/0.9/1).

    Exponents must increase strictly so the three iterates separate into
    fast, medium and slow timescales, and must exceed 0.5 so the squared
    step sizes stay summable.
    """

    fast_exp: float = 0.8
    medium_exp: float = 0.9
    slow_exp: float = 1.0

    def __post_init__(self):
        if not (0.5 < self.fast_exp < self.medium_exp < self.slow_exp <= 1.0):
            raise ValueError(
                "exponents must satisfy 0.5 < fast < medium < slow <= 1.0, got "
                f"{self.fast_exp}, {self.medium_exp}, {self.slow_exp}"
            )

    def gamma1(self, k):
        k = np.asarray(k)
        if np.any(k < 1):
            raise ValueError("schedule argument must be >= 1")
        return k ** -self.fast_exp

    def gamma2(self, n):
        n = np.asarray(n)
        if np.any(n < 1):
            raise ValueError("schedule argument must be >= 1")
        return n ** -self.medium_exp

    def gamma3(self, k):
        k = np.asarray(k)
        if np.any(k < 1):
            raise ValueError("schedule argument must be >= 1")
        return k ** -self.slow_exp


class Scheme(enum.Enum):
    MWU = "mwu"
    MH = "mh"


class UpdateMode(enum.Enum):
    SYNCHRONOUS_GENERATIVE = "synchronous"
    ON_TRAJECTORY = "on-trajectory"


@dataclass(frozen=True)
class HyperParams:
    epsilon_explore: float = 0.01
    temperature: float = 0.3
    mwu_gamma: float = 0.05
    eps_w: float = 0.02
    scheme: Scheme = Scheme.MH
    update_mode: UpdateMode = UpdateMode.SYNCHRONOUS_GENERATIVE

    def __post_init__(self):
        if not 0.0 <= self.epsilon_explore <= 1.0:
            raise ValueError("epsilon_explore must lie in [0,1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.mwu_gamma < 1.0:
            raise ValueError("mwu_gamma must lie in (0,1)")
        if not 0.0 <= self.eps_w < 1.0:
            raise ValueError("eps_w must lie in [0,1)")


@dataclass
class AgentState:
    """One agent's tables: relative Q-factors, running cost, gossip cost
    table, gossip row, per-pair update counts and current policy."""

    q: np.ndarray
    z: float
    y: np.ndarray
    row: np.ndarray
    v: np.ndarray
    policy: np.ndarray

    def copy(self) -> "AgentState":
        return AgentState(
            q=self.q.copy(), z=self.z, y=self.y.copy(),
            row=self.row.copy(), v=self.v.copy(), policy=self.policy.copy(),
        )

    def to_dict(self) -> dict:
        return {
            "q": self.q.tolist(), "z": self.z, "y": self.y.tolist(),
            "row": self.row.tolist(), "v": self.v.tolist(), "policy": self.policy.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(
            q=np.asarray(d["q"], dtype=float),
            z=float(d["z"]),
            y=np.asarray(d["y"], dtype=float),
            row=np.asarray(d["row"], dtype=float),
            v=np.asarray(d["v"], dtype=np.int64),
            policy=np.asarray(d["policy"], dtype=int),
        )


def fresh_agent(n_states: int, n_actions: int, row: np.ndarray) -> AgentState:
    q = np.zeros((n_states, n_actions))
    return AgentState(
        q=q,
        z=0.0,
        y=np.zeros((n_states, n_actions)),
        row=np.asarray(row, dtype=float).copy(),
        v=np.zeros((n_states, n_actions), dtype=np.int64),
        policy=np.argmin(q, axis=1),
    )


# ---------------------------------------------------------------------------
# single-pair contract operations


def q_update(agent: AgentState, s: int, a: int, next_state_sample: int,
             schedule: StepSchedule, reference_pair: tuple[int, int]) -> AgentState:
    """Relative Q-factor update for one active pair.

    The update count includes the current update, so the first one runs at
    full step size. All reads use the pre-update tables.
    """
    s0, a0 = reference_pair
    k = int(agent.v[s, a]) + 1
    bracket = (
        agent.y[s, a]
        + agent.q[next_state_sample].min()
        - agent.q[s0, a0]
        - agent.q[s, a]
    )
    agent.q[s, a] += float(schedule.gamma1(k)) * bracket
    agent.v[s, a] = k
    return agent


def running_cost_update(agent: AgentState, incurred_cost: float, n: int,
                        schedule: StepSchedule) -> AgentState:
    """Medium-timescale tracker of the agent's time-average cost."""
    agent.z += float(schedule.gamma2(n)) * (incurred_cost - agent.z)
    return agent


def gossip_update(agent: AgentState, y_tables: dict[int, np.ndarray], matrix_row: np.ndarray,
                  s: int, a: int, schedule: StepSchedule, stage_cost: float) -> AgentState:
    """Gossip step for one active pair: average neighbours' cost tables under
    the current row, then nudge toward the agent's own stage cost.

    ``y_tables`` must provide the previous-iteration table of every agent the
    row puts weight on, the agent's own included. ``stage_cost`` is the cost
    table entry in simple-cost mode and the most recently observed realized
    cost at (s, own action a) otherwise. Uses the shared update counter, so
    callers running the full loop apply it after the Q update.
    """
    row = np.asarray(matrix_row, dtype=float)
    support = np.flatnonzero(row > 0.0)
    missing = [int(j) for j in support if j not in y_tables]
    if missing:
        raise StructureError(f"row puts weight on agents {missing} with no table provided")
    mixed = sum(row[j] * y_tables[j][s, a] for j in support)
    k = max(int(agent.v[s, a]), 1)
    agent.y[s, a] = mixed + float(schedule.gamma3(k)) * (stage_cost - agent.y[s, a])
    return agent


def policy_update(agent: AgentState, epsilon: float, rng: np.random.Generator) -> AgentState:
    """Epsilon-greedy policy refresh; exact ties go to the lowest action index."""
    n_states, n_actions = agent.q.shape
    greedy = np.argmin(agent.q, axis=1)
    explore = rng.random(n_states) < epsilon
    randomized = rng.integers(0, n_actions, size=n_states)
    agent.policy = np.where(explore, randomized, greedy)
    return agent


# ---------------------------------------------------------------------------
# full coupled loop


@dataclass
class StepRecord:
    """Per-iteration trace: pre-transition state, executed joint action,
    realized costs and post-update running averages."""

    n: int
    state: int
    actions: np.ndarray
    costs: np.ndarray
    z: np.ndarray
    rows: Optional[np.ndarray] = None


class Simulation:
    """Vectorized multi-agent learning loop over one seeded trajectory.

    Randomness is split into named substreams (one per agent for policy
    exploration and generative sampling, one for the environment) and drawn
    in fixed-size blocks; identical (spec, graph, hyper, schedule, seed)
    give bit-identical runs.
    """

    def __init__(
        self,
        spec: MmdpSpec,
        graph: Optional[CommGraph],
        hyper: HyperParams,
        schedule: StepSchedule,
        seed: int,
        start_state: int | None = None,
    ):
        if spec.bounds is None:
            raise ValueError("spec needs calibrated bounds before learning")
        if graph is None:
            if spec.n_agents != 1:
                raise ValueError("a communication graph is required for 2+ agents")
            self.rows = np.ones((1, 1))
        else:
            if graph.n_agents != spec.n_agents:
                raise StructureError("graph size disagrees with the spec")
            self.rows = uniform_rows(graph)
        self.spec = spec
        self.graph = graph
        self.hyper = hyper
        self.schedule = schedule
        self.seed = seed
        n, s, a = spec.n_agents, spec.n_states, spec.n_actions
        self.q = np.zeros((n, s, a))
        self.z = np.zeros(n)
        self.y = np.zeros((n, s, a))
        self.v = np.zeros((n, s, a), dtype=np.int64)
        self.policy = np.argmin(self.q, axis=2)
        self.last_cost = np.zeros((n, s, a))
        self.n = 1
        self.env_state: EnvState = initial_state(spec, seed, start_state)
        self._explore_rngs = [substream(seed, f"explore/{i}") for i in range(n)]
        self._qsample_rngs = [substream(seed, f"qsamples/{i}") for i in range(n)]
        self._cum = np.cumsum(spec.transition, axis=2)
        self._radix = spec.action_radix
        self._agents = np.arange(n)
        self._others = np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=int)
        self._radix_others = self._radix[self._others] if n > 1 else np.zeros((n, 0), dtype=int)
        self._own_component = (np.arange(a)[None, :] * self._radix[:, None])  # (N, A)
        self._sgrid = np.arange(s)[None, :, None]
        self._block_at = 0
        self._refill_blocks()

    # -- randomness ----------------------------------------------------

    def _refill_blocks(self):
        n, s, a = self.spec.n_agents, self.spec.n_states, self.spec.n_actions
        k = _BLOCK
        self._explore_u = np.stack([r.random((k, s)) for r in self._explore_rngs], axis=1)
        self._explore_a = np.stack(
            [r.integers(0, a, size=(k, s)) for r in self._explore_rngs], axis=1
        )
        if self.hyper.update_mode is UpdateMode.SYNCHRONOUS_GENERATIVE:
            self._opp_u = np.stack([r.random((k, s, a, n - 1)) for r in self._qsample_rngs], axis=1)
            self._opp_a = np.stack(
                [r.integers(0, a, size=(k, s, a, n - 1)) for r in self._qsample_rngs], axis=1
            )
            self._xi_u = np.stack([r.random((k, s, a)) for r in self._qsample_rngs], axis=1)
        rng = self.env_state.rng
        self._env_u = rng.random(k)
        self._noise_u = rng.random(k) if self.spec.cost_noise is not None else None
        self._block_at = 0

    # -- one iteration ---------------------------------------------------

    def step(self, record: bool = False, record_rows: bool = False) -> Optional[StepRecord]:
        """Run one full iteration; optionally return its trace record."""
        if self._block_at >= _BLOCK:
            self._refill_blocks()
        t = self._block_at
        spec, hyper, sched = self.spec, self.hyper, self.schedule
        n_agents, n_states, n_actions = spec.n_agents, spec.n_states, spec.n_actions
        x = self.env_state.state_index
        sync = hyper.update_mode is UpdateMode.SYNCHRONOUS_GENERATIVE

        # (1) active pairs, executed actions and next-state samples
        a_exec = self.policy[:, x]
        j_exec = int(a_exec @ self._radix)
        x_next = min(
            int(np.searchsorted(self._cum[x, j_exec], self._env_u[t], side="right")),
            n_states - 1,
        )
        noise_u = None if self._noise_u is None else float(self._noise_u[t])
        realized = spec.realized_costs(x, j_exec, noise_u)

        if sync:
            table = np.transpose(self.policy[self._others], (0, 2, 1))[:, :, None, :]
            opp = np.where(
                self._opp_u[t] < hyper.epsilon_explore, self._opp_a[t], table
            )
            joint = (opp * self._radix_others[:, None, None, :]).sum(axis=3)
            joint += self._own_component[:, None, :]
            rows_cum = self._cum[self._sgrid, joint]
            xi = np.minimum(
                (rows_cum <= self._xi_u[t][..., None]).sum(axis=3), n_states - 1
            )

        # (2) relative Q-factor update, all reads from the previous tables
        if sync:
            self.v += 1
            g1 = sched.gamma1(self.v)
            minq = self.q[self._agents[:, None, None], xi].min(axis=3)
            bracket = self.y + minq - self.q[:, spec.reference_pair[0], spec.reference_pair[1]][:, None, None] - self.q
            self.q = self.q + g1 * bracket
        else:
            idx = (self._agents, x, a_exec)
            self.v[idx] += 1
            g1 = sched.gamma1(self.v[idx])
            minq = self.q[:, x_next, :].min(axis=1)
            bracket = self.y[idx] + minq - self.q[:, spec.reference_pair[0], spec.reference_pair[1]] - self.q[idx]
            self.q[idx] += g1 * bracket

        # (3) running-average cost tracker
        z_prev = self.z.copy()
        self.z = self.z + float(sched.gamma2(self.n)) * (realized - self.z)

        # most recent realized own cost feeds the gossip innovation when
        # stage costs depend on the joint action
        general = spec.cost_mode is CostMode.GENERAL
        if general:
            self.last_cost[self._agents, x, a_exec] = realized
        c_eff = self.last_cost if general else spec.costs

        # (4) gossip averaging of the cost tables (previous iteration's tables)
        if sync:
            cons = (self.rows @ self.y.reshape(n_agents, -1)).reshape(self.y.shape)
            g3 = sched.gamma3(self.v)
            self.y = cons + g3 * (c_eff - self.y)
        else:
            own_entries = self.y[:, x, :][:, a_exec]  # (j, i): y_j at (x, a_exec[i])
            cons = (self.rows * own_entries.T).sum(axis=1)
            g3 = sched.gamma3(self.v[idx])
            self.y[idx] = cons + g3 * (c_eff[idx] - self.y[idx])

        # (5) gossip-row modulation from the pre-update running costs
        if n_agents > 1:
            dev = z_prev - spec.bounds
            if hyper.scheme is Scheme.MH:
                self.rows = mh_rows(self.graph, dev, hyper.temperature)
            else:
                self.rows = mwu_rows(
                    self.graph, self.rows, dev,
                    hyper.mwu_gamma, hyper.temperature, hyper.eps_w,
                )

        # (6) epsilon-greedy policy refresh from the new Q tables
        greedy = np.argmin(self.q, axis=2)
        explore = self._explore_u[t] < hyper.epsilon_explore
        self.policy = np.where(explore, self._explore_a[t], greedy)

        # (7) advance the trajectory
        self.env_state = self.env_state.copy_with(x_next)
        out = None
        if record:
            out = StepRecord(
                n=self.n,
                state=x,
                actions=a_exec.copy(),
                costs=realized,
                z=self.z.copy(),
                rows=self.rows.copy() if record_rows else None,
            )
        self.n += 1
        self._block_at += 1
        return out

    # -- views and checkpointing -----------------------------------------

    def agent_state(self, i: int) -> AgentState:
        return AgentState(
            q=self.q[i].copy(),
            z=float(self.z[i]),
            y=self.y[i].copy(),
            row=self.rows[i].copy(),
            v=self.v[i].copy(),
            policy=self.policy[i].copy(),
        )

    def learned_checksum(self) -> str:
        """Digest of everything learning mutates; stable across the eval phase."""
        h = hashlib.sha256()
        for arr in (self.q, self.y, self.rows, self.v, self.policy, self.z):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def algorithm_step(sim: Simulation, record: bool = False, record_rows: bool = False):
    """One full iteration of the coupled loop; see Simulation.step."""
    return sim.step(record=record, record_rows=record_rows)

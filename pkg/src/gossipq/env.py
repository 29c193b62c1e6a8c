"""Tabular multi-agent MDP environments.

A spec holds the joint transition kernel as a dense table indexed by
(state, joint-action-index, next state), per-agent cost tables, per-agent
bounds and the reference state-action pair used by the relative Q-factor
iteration. Specs are immutable; per-run mutable state lives in EnvState.

Three concrete builders are provided: a randomly generated chain whose
control bit is the XOR of all agents' binary actions, a four-queue channel
access system, and a two-agent grid world.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import StructureError
from .rngs import substream

ROW_SUM_TOL = 1e-12


class CostMode(enum.Enum):
    SIMPLE = "simple"      # c_i(s, own action)
    GENERAL = "general"    # c_i(s, joint action)


@dataclass(frozen=True)
class StepCostNoise:
    """Zero-mean per-step cost perturbation shared by all agents.

    One draw per step takes value ``outcomes[k]`` with probability
    ``probs[k]``; the realized cost adds (draw - mean) * coeff so that the
    stored cost table stays the exact per-stage expectation.
    """

    outcomes: tuple[float, ...]
    probs: tuple[float, ...]
    coeff: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if abs(p.sum() - 1.0) > 1e-12 or np.any(p < 0):
            raise ValueError("noise probabilities must form a distribution")
        object.__setattr__(self, "coeff", np.asarray(self.coeff, dtype=float))

    @property
    def mean(self) -> float:
        return float(np.dot(self.outcomes, self.probs))

    def draw(self, u: float) -> float:
        """Map a uniform [0,1) variate to an outcome."""
        edges = np.cumsum(self.probs)
        k = int(np.searchsorted(edges, u, side="right"))
        return float(self.outcomes[min(k, len(self.outcomes) - 1)])


@dataclass(frozen=True)
class MmdpSpec:
    """Immutable tabular multi-agent MDP.

    ``transition`` has shape (n_states, n_actions**n_agents, n_states);
    joint actions are encoded with agent 0 as the most significant digit.
    ``costs`` has shape (n_agents, n_states, n_actions) in SIMPLE mode and
    (n_agents, n_states, n_actions**n_agents) in GENERAL mode and always
    stores the expected per-stage cost. ``bounds`` may be None until
    calibrated.
    """

    n_agents: int
    n_states: int
    n_actions: int
    transition: np.ndarray = field(repr=False)
    cost_mode: CostMode
    costs: np.ndarray = field(repr=False)
    bounds: Optional[np.ndarray] = None
    reference_pair: tuple[int, int] = (0, 0)
    cost_noise: Optional[StepCostNoise] = None

    def __post_init__(self):
        if min(self.n_agents, self.n_states, self.n_actions) < 1:
            raise ValueError("n_agents, n_states, n_actions must be positive")
        t = np.asarray(self.transition, dtype=float)
        object.__setattr__(self, "transition", t)
        if t.shape != (self.n_states, self.n_joint_actions, self.n_states):
            raise StructureError(f"transition shape {t.shape} mismatches spec")
        if np.any(t < 0.0):
            raise StructureError("negative transition probability")
        if np.max(np.abs(t.sum(axis=2) - 1.0)) > ROW_SUM_TOL:
            raise StructureError("transition rows must sum to 1")
        c = np.asarray(self.costs, dtype=float)
        object.__setattr__(self, "costs", c)
        want = (
            (self.n_agents, self.n_states, self.n_actions)
            if self.cost_mode is CostMode.SIMPLE
            else (self.n_agents, self.n_states, self.n_joint_actions)
        )
        if c.shape != want:
            raise StructureError(f"cost table shape {c.shape}, expected {want}")
        if not np.all(np.isfinite(c)):
            raise StructureError("costs must be finite")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (self.n_agents,):
                raise StructureError("bounds must have one entry per agent")
            object.__setattr__(self, "bounds", b)
        s0, a0 = self.reference_pair
        if not (0 <= s0 < self.n_states and 0 <= a0 < self.n_actions):
            raise ValueError("reference pair out of range")

    @property
    def n_joint_actions(self) -> int:
        return self.n_actions ** self.n_agents

    @property
    def action_radix(self) -> np.ndarray:
        """Place value of each agent's action in the joint index."""
        return self.n_actions ** np.arange(self.n_agents - 1, -1, -1)

    def encode_joint(self, actions) -> int:
        a = np.asarray(actions, dtype=int)
        if a.shape != (self.n_agents,) or np.any(a < 0) or np.any(a >= self.n_actions):
            raise ValueError(f"invalid joint action {actions}")
        return int(np.dot(a, self.action_radix))

    def decode_joint(self, index: int) -> np.ndarray:
        out = np.empty(self.n_agents, dtype=int)
        for i in range(self.n_agents - 1, -1, -1):
            out[i] = index % self.n_actions
            index //= self.n_actions
        return out

    def realized_costs(self, state: int, joint_index: int, noise_u: float | None = None) -> np.ndarray:
        """Per-agent realized costs at (state, joint action).

        In SIMPLE mode the cost of agent i reads its own action off the joint
        index. ``noise_u`` feeds the shared per-step cost perturbation when
        the spec has one.
        """
        if self.cost_mode is CostMode.SIMPLE:
            own = self.decode_joint(joint_index)
            out = self.costs[np.arange(self.n_agents), state, own].copy()
        else:
            out = self.costs[:, state, joint_index].copy()
        if self.cost_noise is not None:
            u = 0.5 if noise_u is None else noise_u
            draw = self.cost_noise.draw(u)
            out += (draw - self.cost_noise.mean) * self.cost_noise.coeff[:, state, joint_index]
        return out

    def to_dict(self) -> dict:
        d = {
            "n_agents": self.n_agents,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "cost_mode": self.cost_mode.value,
            "transition": self.transition.tolist(),
            "costs": self.costs.tolist(),
            "bounds": None if self.bounds is None else self.bounds.tolist(),
            "reference_pair": list(self.reference_pair),
        }
        if self.cost_noise is not None:
            d["cost_noise"] = {
                "outcomes": list(self.cost_noise.outcomes),
                "probs": list(self.cost_noise.probs),
                "coeff": self.cost_noise.coeff.tolist(),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MmdpSpec":
        noise = None
        if d.get("cost_noise") is not None:
            nd = d["cost_noise"]
            noise = StepCostNoise(
                outcomes=tuple(nd["outcomes"]),
                probs=tuple(nd["probs"]),
                coeff=np.asarray(nd["coeff"], dtype=float),
            )
        return cls(
            n_agents=int(d["n_agents"]),
            n_states=int(d["n_states"]),
            n_actions=int(d["n_actions"]),
            transition=np.asarray(d["transition"], dtype=float),
            cost_mode=CostMode(d["cost_mode"]),
            costs=np.asarray(d["costs"], dtype=float),
            bounds=None if d.get("bounds") is None else np.asarray(d["bounds"], dtype=float),
            reference_pair=tuple(d.get("reference_pair", (0, 0))),
            cost_noise=noise,
        )


@dataclass
class EnvState:
    """Mutable trajectory state owned by one simulation loop."""

    state_index: int
    step_count: int
    rng: np.random.Generator

    def copy_with(self, state_index: int) -> "EnvState":
        return EnvState(state_index=state_index, step_count=self.step_count + 1, rng=self.rng)


def initial_state(spec: MmdpSpec, seed: int, start: int | None = None) -> EnvState:
    """Fresh EnvState seeded from the named env substream; starts at the
    reference state unless told otherwise."""
    s = spec.reference_pair[0] if start is None else start
    if not (0 <= s < spec.n_states):
        raise ValueError(f"start state {s} out of range")
    return EnvState(state_index=s, step_count=0, rng=substream(seed, "env"))


def sample_next(spec: MmdpSpec, s: int, joint_action, rng: np.random.Generator) -> int:
    """One draw of the next state for (s, joint action); leaves no other trace."""
    if not (0 <= s < spec.n_states):
        raise ValueError(f"state {s} out of range")
    j = joint_action if np.isscalar(joint_action) else spec.encode_joint(joint_action)
    if not (0 <= j < spec.n_joint_actions):
        raise ValueError(f"joint action index {j} out of range")
    row = spec.transition[s, j]
    return int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))


def step(spec: MmdpSpec, st: EnvState, joint_action) -> tuple[EnvState, np.ndarray]:
    """Advance one step: draw the next state, then realize per-agent costs.

    Draw order (next-state uniform first, then the optional cost-noise
    uniform) is part of the determinism contract.
    """
    j = spec.encode_joint(joint_action)
    row = spec.transition[st.state_index, j]
    nxt = int(np.searchsorted(np.cumsum(row), st.rng.random(), side="right"))
    noise_u = st.rng.random() if spec.cost_noise is not None else None
    costs = spec.realized_costs(st.state_index, j, noise_u)
    return st.copy_with(nxt), costs


# ---------------------------------------------------------------------------
# concrete environments


def build_xor_mdp(n_agents: int, n_states: int, cost_mode: CostMode = CostMode.SIMPLE,
                  seed: int = 0) -> MmdpSpec:
    """Random chain controlled by the parity of all agents' binary actions.

    A base two-control kernel is drawn with strictly positive rows (uniform
    (0,1] entries, normalized), so the chain is irreducible under every
    policy. The effective control of a joint action is the XOR of the
    agents' bits. Per-stage costs are uniform on [0, 10]. Bounds are left
    unset for later calibration.
    """
    if n_states < 2:
        raise ValueError("need at least 2 states")
    rng = substream(seed, "xor-env")
    base = 1.0 - rng.random((n_states, 2, n_states))  # entries in (0, 1]
    base /= base.sum(axis=2, keepdims=True)
    n_joint = 2 ** n_agents
    parity = np.array([bin(j).count("1") % 2 for j in range(n_joint)])
    transition = base[:, parity, :]
    if cost_mode is CostMode.SIMPLE:
        costs = rng.uniform(0.0, 10.0, size=(n_agents, n_states, 2))
    else:
        costs = rng.uniform(0.0, 10.0, size=(n_agents, n_states, n_joint))
    return MmdpSpec(
        n_agents=n_agents,
        n_states=n_states,
        n_actions=2,
        transition=transition,
        cost_mode=cost_mode,
        costs=costs,
        bounds=None,
        reference_pair=(0, 0),
    )


QUEUE_ARRIVAL_PROBS = (0.35, 0.30, 0.25, 0.20)
QUEUE_HOLDING_COSTS = (0.3, 0.4, 0.5, 0.6)
QUEUE_COLLISION_COST = 1.0
QUEUE_PRICE_HIGH = 0.8
QUEUE_PRICE_LOW = 0.2
QUEUE_BUFFER = 2


def build_queueing_env() -> MmdpSpec:
    """Four agents sharing one channel, each with a buffer-2 packet queue.

    State is the tuple of queue levels (agent 0 most significant, base 3).
    Action 1 transmits the head packet; a lone transmitter pays the current
    channel price (0.8 or 0.2, equally likely, shared within a step), while
    simultaneous transmitters each pay the collision cost per other
    transmitter. Every agent always pays its holding cost per queued packet.
    Arrivals are Bernoulli and are dropped when the buffer is full.
    """
    n_agents = 4
    levels = QUEUE_BUFFER + 1
    n_states = levels ** n_agents
    n_joint = 2 ** n_agents
    radix_s = levels ** np.arange(n_agents - 1, -1, -1)
    arrival_p = np.asarray(QUEUE_ARRIVAL_PROBS)
    holding = np.asarray(QUEUE_HOLDING_COSTS)
    price_mean = 0.5 * (QUEUE_PRICE_HIGH + QUEUE_PRICE_LOW)

    bits = np.array([[(j >> (n_agents - 1 - i)) & 1 for i in range(n_agents)]
                     for j in range(n_joint)])
    arrival_prob = np.prod(np.where(bits == 1, arrival_p, 1.0 - arrival_p), axis=1)

    transition = np.zeros((n_states, n_joint, n_states))
    costs = np.zeros((n_agents, n_states, n_joint))
    coeff = np.zeros((n_agents, n_states, n_joint))

    for s in range(n_states):
        x = (s // radix_s) % levels
        for j in range(n_joint):
            xi = bits[j]
            served = x - xi * (x >= 1)
            # independent Bernoulli arrivals, dropped when the buffer is full
            nxt = np.minimum(served + bits, QUEUE_BUFFER) @ radix_s
            np.add.at(transition[s, j], nxt, arrival_prob)
            alone = xi * np.array([np.prod(np.delete(1 - xi, i)) for i in range(n_agents)])
            collisions = xi * (xi.sum() - xi)
            costs[:, s, j] = price_mean * alone + QUEUE_COLLISION_COST * collisions + holding * x
            coeff[:, s, j] = alone

    noise = StepCostNoise(
        outcomes=(QUEUE_PRICE_HIGH, QUEUE_PRICE_LOW),
        probs=(0.5, 0.5),
        coeff=coeff,
    )
    return MmdpSpec(
        n_agents=n_agents,
        n_states=n_states,
        n_actions=2,
        transition=transition,
        cost_mode=CostMode.GENERAL,
        costs=costs,
        bounds=None,
        reference_pair=(0, 0),
        cost_noise=noise,
    )


GRID_SIDE = 6
GRID_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))  # up, down, left, right as (dx, dy)


def build_gridworld_env() -> MmdpSpec:
    """Two agents on a 6x6 grid, both heading from bottom-left to top-right.

    Positions are indexed column-major as x + 6*y with (0,0) the bottom-left
    corner; the state is pos0 * 36 + pos1. Moves off the grid stay put.
    When both agents sit on the goal they each receive -10 and the next
    state is the joint start; otherwise both pay 0.5 per step, except that
    at Manhattan distance <= 1 agent 0 pays 1 and agent 1 receives -1.
    """
    n_cells = GRID_SIDE * GRID_SIDE
    n_states = n_cells * n_cells
    n_joint = 16
    goal = n_cells - 1
    start_state = 0

    def move(pos: int, action: int) -> int:
        x, y = pos % GRID_SIDE, pos // GRID_SIDE
        dx, dy = GRID_MOVES[action]
        nx, ny = x + dx, y + dy
        if not (0 <= nx < GRID_SIDE and 0 <= ny < GRID_SIDE):
            return pos
        return nx + GRID_SIDE * ny

    moved = np.array([[move(p, a) for a in range(4)] for p in range(n_cells)])

    transition = np.zeros((n_states, n_joint, n_states))
    costs = np.empty((2, n_states, n_joint))
    for s in range(n_states):
        p0, p1 = divmod(s, n_cells)
        x0, y0 = p0 % GRID_SIDE, p0 // GRID_SIDE
        x1, y1 = p1 % GRID_SIDE, p1 // GRID_SIDE
        dist = abs(x0 - x1) + abs(y0 - y1)
        at_goal = p0 == goal and p1 == goal
        for j in range(n_joint):
            a0, a1 = divmod(j, 4)
            if at_goal:
                nxt = start_state
                costs[:, s, j] = (-10.0, -10.0)
            else:
                nxt = moved[p0, a0] * n_cells + moved[p1, a1]
                costs[:, s, j] = (1.0, -1.0) if dist <= 1 else (0.5, 0.5)
            transition[s, j, nxt] = 1.0
    return MmdpSpec(
        n_agents=2,
        n_states=n_states,
        n_actions=4,
        transition=transition,
        cost_mode=CostMode.GENERAL,
        costs=costs,
        bounds=None,
        reference_pair=(0, 0),
    )


def calibrate_bounds(spec: MmdpSpec, reference_policy, margin: float) -> MmdpSpec:
    """Return a copy of the spec with bounds set to the reference policy's
    exact average cost plus the margin.

    ``reference_policy`` is an (n_agents, n_states) action table, or the
    string "uniform" for the uniformly random joint policy.
    """
    from .oracle import evaluate_policy

    evaluation = evaluate_policy(spec, reference_policy)
    return replace(spec, bounds=evaluation.avg_cost + margin)


def policy_from_id(spec: MmdpSpec, policy_id: int) -> np.ndarray:
    """Deterministic joint policy numbered by its base-|A| action encoding.

    Digits fill the (agent, state) table in row-major order with the last
    slot least significant; id 0 is the all-zeros policy.
    """
    slots = spec.n_agents * spec.n_states
    total = spec.n_actions ** slots
    if not (0 <= policy_id < total):
        raise ValueError(f"policy id {policy_id} out of range for {total} policies")
    digits = np.empty(slots, dtype=int)
    k = policy_id
    for slot in range(slots - 1, -1, -1):
        digits[slot] = k % spec.n_actions
        k //= spec.n_actions
    return digits.reshape(spec.n_agents, spec.n_states)

"""Experiment orchestration: config, seeding, learning + frozen evaluation,
sweeps, and CSV/JSON emission.

A run is two phases: ``learn_steps`` iterations of the full coupled loop,
then a policy freeze (greedy, no exploration) and ``eval_steps`` rollout
steps that only accumulate the empirical time-average cost. Trace rows and
the summary document are byte-reproducible functions of (config, seed).
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .env import (
    CostMode,
    MmdpSpec,
    build_gridworld_env,
    build_queueing_env,
    build_xor_mdp,
    calibrate_bounds,
    policy_from_id,
)
from .errors import CapacityError, ConfigError, StructureError
from .learner import HyperParams, Scheme, Simulation, StepSchedule, UpdateMode
from .oracle import check_feasibility, evaluate_policy
from .weights import build_graph

TRACE_SCHEMA = "trace-v1"
TRACE_COLUMNS = ("iteration", "agent", "z", "beta", "beta_minus_z", "state", "action", "cost")

_ENV_KINDS = ("xor", "queueing", "gridworld", "custom")
_GRAPH_KINDS = ("cycle", "complete", "line", "custom")


@dataclass
class ExperimentConfig:
    env: dict
    graph: dict = field(default_factory=lambda: {"kind": "complete"})
    scheme: str = "mh"
    temperature: float = 0.3
    mwu_gamma: float = 0.05
    epsilon_explore: float = 0.01
    eps_w: float = 0.02
    fast_exp: float = 0.8
    medium_exp: float = 0.9
    slow_exp: float = 1.0
    learn_steps: int = 200_000
    eval_steps: int = 100_000
    seed: int = 0
    bounds: dict = field(default_factory=lambda: {"reference_policy": 0, "margin": 0.1})
    update_mode: str = "synchronous"
    out_dir: str = "runs/out"
    trace_every: int = 100
    trace_weights: bool = False
    precheck_feasibility: bool = False

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.env, dict) or self.env.get("kind") not in _ENV_KINDS:
            out.append(f"env.kind must be one of {_ENV_KINDS}")
        if not isinstance(self.graph, dict) or self.graph.get("kind") not in _GRAPH_KINDS:
            out.append(f"graph.kind must be one of {_GRAPH_KINDS}")
        if self.scheme not in ("mwu", "mh"):
            out.append("scheme must be 'mwu' or 'mh'")
        if self.update_mode not in ("synchronous", "on-trajectory"):
            out.append("update_mode must be 'synchronous' or 'on-trajectory'")
        if self.learn_steps < 1:
            out.append("learn_steps must be >= 1")
        if self.eval_steps < 1:
            out.append("eval_steps must be >= 1")
        if self.trace_every < 1:
            out.append("trace_every must be >= 1")
        if not 0.0 <= self.epsilon_explore <= 1.0:
            out.append("epsilon_explore must lie in [0,1]")
        if self.temperature <= 0:
            out.append("temperature must be positive")
        if not 0.0 < self.mwu_gamma < 1.0:
            out.append("mwu_gamma must lie in (0,1)")
        if not 0.0 <= self.eps_w < 1.0:
            out.append("eps_w must lie in [0,1)")
        if not 0.5 < self.fast_exp < self.medium_exp < self.slow_exp <= 1.0:
            out.append("schedule exponents must satisfy 0.5 < fast < medium < slow <= 1")
        if not isinstance(self.bounds, dict) or not (
            "beta" in self.bounds or "reference_policy" in self.bounds
        ):
            out.append("bounds needs 'beta' or a 'reference_policy' recipe")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown field {u!r}" for u in unknown])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_spec(env_cfg: dict) -> MmdpSpec:
    kind = env_cfg["kind"]
    if kind == "xor":
        return build_xor_mdp(
            n_agents=int(env_cfg.get("n_agents", 7)),
            n_states=int(env_cfg.get("n_states", 2)),
            cost_mode=CostMode(env_cfg.get("cost_mode", "simple")),
            seed=int(env_cfg.get("seed", 0)),
        )
    if kind == "queueing":
        return build_queueing_env()
    if kind == "gridworld":
        return build_gridworld_env()
    if kind == "custom":
        if "spec" in env_cfg:
            return MmdpSpec.from_dict(env_cfg["spec"])
        with open(env_cfg["path"]) as fh:
            return MmdpSpec.from_dict(json.load(fh))
    raise ConfigError([f"unknown env kind {kind!r}"])


def apply_bounds(spec: MmdpSpec, bounds_cfg: dict) -> MmdpSpec:
    if "beta" in bounds_cfg:
        beta = np.asarray(bounds_cfg["beta"], dtype=float)
        return replace(spec, bounds=beta)
    ref = bounds_cfg.get("reference_policy", 0)
    margin = float(bounds_cfg.get("margin", 0.1))
    policy = "uniform" if ref == "uniform" else policy_from_id(spec, int(ref))
    return calibrate_bounds(spec, policy, margin)


def _graph_from_config(cfg: dict, n_agents: int):
    if n_agents == 1:
        return None
    return build_graph(cfg["kind"], n_agents, edges=cfg.get("edges"))


@dataclass
class RunSummary:
    config: dict
    beta: list
    z_eval: list
    satisfied: list
    all_satisfied: bool
    policy: list
    learn_steps: int
    eval_steps: int
    freeze_checksum: str
    post_eval_checksum: str
    trace_path: str
    summary_path: str

    def to_dict(self) -> dict:
        return asdict(self)


def _trace_header(n_agents: int, trace_weights: bool) -> list[str]:
    cols = list(TRACE_COLUMNS)
    if trace_weights:
        cols += [f"w_{j}" for j in range(n_agents)]
    return cols


def _write_trace_rows(writer, n: int, beta, z, state, actions, costs, rows_snapshot):
    for i in range(len(z)):
        row = [
            n, i, float(z[i]), float(beta[i]), float(beta[i] - z[i]),
            int(state), int(actions[i]), float(costs[i]),
        ]
        if rows_snapshot is not None:
            row += [float(w) for w in rows_snapshot[i]]
        writer.writerow(row)


def _frozen_rollout(spec: MmdpSpec, policy: np.ndarray, env_state, steps: int):
    """Roll the frozen joint policy forward; returns (states, actions, costs).

    Consumes the environment stream in the same order as the learning loop:
    one block of next-state uniforms, then one block of cost-noise uniforms.
    """
    states = np.empty(steps, dtype=int)
    joint = policy.T @ spec.action_radix  # per-state executed joint index
    cum = np.cumsum(spec.transition, axis=2)
    rng = env_state.rng
    u_env = rng.random(steps)
    u_noise = rng.random(steps) if spec.cost_noise is not None else None
    x = env_state.state_index
    n_states = spec.n_states
    for t in range(steps):
        states[t] = x
        x = min(int(np.searchsorted(cum[x, joint[x]], u_env[t], side="right")), n_states - 1)
    env_state.state_index = x
    env_state.step_count += steps
    actions = policy[:, states]  # (N, steps)
    j_path = joint[states]
    if spec.cost_mode is CostMode.SIMPLE:
        costs = spec.costs[np.arange(spec.n_agents)[:, None], states[None, :], actions]
    else:
        costs = spec.costs[:, states, j_path]
    if spec.cost_noise is not None:
        edges = np.cumsum(spec.cost_noise.probs)
        draws = np.asarray(spec.cost_noise.outcomes)[
            np.minimum(np.searchsorted(edges, u_noise, side="right"), len(edges) - 1)
        ]
        costs = costs + (draws - spec.cost_noise.mean)[None, :] * spec.cost_noise.coeff[:, states, j_path]
    return states, actions, costs


def run_experiment(config: ExperimentConfig, spec: Optional[MmdpSpec] = None) -> RunSummary:
    """Learn, freeze, evaluate, and write trace.csv + summary.json."""
    config.validate()
    if spec is None:
        spec = build_spec(config.env)
    spec = apply_bounds(spec, config.bounds)
    if config.precheck_feasibility:
        witness = check_feasibility(spec)
        if witness is None:
            raise StructureError("no deterministic joint policy satisfies the bounds")
    graph = _graph_from_config(config.graph, spec.n_agents)
    hyper = HyperParams(
        epsilon_explore=config.epsilon_explore,
        temperature=config.temperature,
        mwu_gamma=config.mwu_gamma,
        eps_w=config.eps_w,
        scheme=Scheme(config.scheme),
        update_mode=UpdateMode(config.update_mode),
    )
    schedule = StepSchedule(config.fast_exp, config.medium_exp, config.slow_exp)
    sim = Simulation(spec, graph, hyper, schedule, config.seed)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.csv"
    summary_path = out_dir / "summary.json"
    beta = spec.bounds

    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_trace_header(spec.n_agents, config.trace_weights))
        for n in range(1, config.learn_steps + 1):
            want = n % config.trace_every == 0 or n == config.learn_steps
            rec = sim.step(record=want, record_rows=config.trace_weights and want)
            if rec is not None:
                _write_trace_rows(
                    writer, rec.n, beta, rec.z, rec.state, rec.actions, rec.costs, rec.rows
                )

        # freeze: greedy policies, learning switched off for good
        frozen_policy = np.argmin(sim.q, axis=2)
        freeze_checksum = sim.learned_checksum()

        states, actions, costs = _frozen_rollout(
            spec, frozen_policy, sim.env_state, config.eval_steps
        )
        running_mean = np.cumsum(costs, axis=1) / np.arange(1, config.eval_steps + 1)
        rows_snapshot = sim.rows.copy() if config.trace_weights else None
        for t in range(config.eval_steps):
            n = config.learn_steps + t + 1
            if n % config.trace_every == 0 or t == config.eval_steps - 1:
                _write_trace_rows(
                    writer, n, beta, running_mean[:, t], states[t],
                    actions[:, t], costs[:, t], rows_snapshot,
                )

    post_eval_checksum = sim.learned_checksum()
    if post_eval_checksum != freeze_checksum:
        raise RuntimeError("learned state changed during the evaluation phase")

    z_eval = running_mean[:, -1]
    satisfied = z_eval <= beta + 1e-9
    summary = RunSummary(
        config=config.to_dict(),
        beta=[float(b) for b in beta],
        z_eval=[float(z) for z in z_eval],
        satisfied=[bool(s) for s in satisfied],
        all_satisfied=bool(satisfied.all()),
        policy=frozen_policy.tolist(),
        learn_steps=config.learn_steps,
        eval_steps=config.eval_steps,
        freeze_checksum=freeze_checksum,
        post_eval_checksum=post_eval_checksum,
        trace_path=str(trace_path),
        summary_path=str(summary_path),
    )
    with open(summary_path, "w") as fh:
        json.dump(
            {"schema": "summary-v1", "trace_schema": TRACE_SCHEMA, **summary.to_dict()},
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    return summary


def _sweep_worker(config_dict: dict) -> dict:
    try:
        summary = run_experiment(ExperimentConfig.from_dict(config_dict))
        return {"ok": True, "summary": summary.to_dict()}
    except Exception as exc:  # individual failures recorded, sweep continues
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(configs: list[ExperimentConfig], parallelism: int = 1) -> list[dict]:
    """Run independent seeded experiments; results come back ordered by
    config index regardless of parallelism."""
    if not configs:
        raise ValueError("sweep needs at least one config")
    payloads = [c.to_dict() for c in configs]
    if parallelism <= 1:
        results = [_sweep_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    out = []
    for idx, res in enumerate(results):
        entry = {"index": idx, **res}
        if res.get("ok"):
            entry["satisfied_agents"] = sum(res["summary"]["satisfied"])
            entry["all_satisfied"] = res["summary"]["all_satisfied"]
        out.append(entry)
    return out


def emit_policy_report(
    spec: MmdpSpec,
    policy: np.ndarray,
    empirical_z: Optional[np.ndarray] = None,
) -> dict:
    """Exact per-agent averages of a frozen policy next to the bounds and any
    empirical estimate; degrades to an empirical-only report when the
    instance is too large for the exact layer."""
    if spec.bounds is None:
        raise ValueError("spec has no bounds")
    try:
        ev = evaluate_policy(spec, policy)
        g = ev.avg_cost
        mode = "exact"
    except (CapacityError, StructureError) as exc:
        # instance too large, or the frozen policy has no start-independent
        # exact average: fall back to the empirical numbers
        g = None
        mode = f"empirical-only ({type(exc).__name__})"
    agents = []
    for i in range(spec.n_agents):
        entry = {"agent": i, "beta": float(spec.bounds[i])}
        if g is not None:
            entry["g_exact"] = float(g[i])
            entry["gap_g_minus_beta"] = float(g[i] - spec.bounds[i])
        if empirical_z is not None:
            entry["z_empirical"] = float(empirical_z[i])
            if g is not None:
                entry["abs_g_minus_z"] = float(abs(g[i] - empirical_z[i]))
        agents.append(entry)
    return {"schema": "policy-report-v1", "mode": mode, "agents": agents}

"""Runner orchestration tests: config validation, reproducibility, sweeps,
trace schema, freeze boundary and policy reports."""

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from gossipq.env import CostMode, MmdpSpec, build_xor_mdp, calibrate_bounds, policy_from_id
from gossipq.errors import ConfigError
from gossipq.oracle import evaluate_policy
from gossipq.runner import (
    TRACE_COLUMNS,
    ExperimentConfig,
    apply_bounds,
    build_spec,
    emit_policy_report,
    run_experiment,
    run_sweep,
)
from tests.helpers import constant_cost_spec, random_positive_spec


def _quick_config(tmp_path, name="run", **overrides) -> ExperimentConfig:
    base = dict(
        env={"kind": "xor", "n_agents": 3, "n_states": 2, "seed": 4},
        graph={"kind": "complete"},
        scheme="mh",
        learn_steps=2_000,
        eval_steps=2_000,
        seed=5,
        trace_every=100,
        out_dir=str(tmp_path / name),
    )
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


# -- config validation -------------------------------------------------------


def test_config_rejects_zero_eval_steps(tmp_path):
    cfg = _quick_config(tmp_path, eval_steps=0)
    with pytest.raises(ConfigError) as err:
        run_experiment(cfg)
    assert any("eval_steps" in p for p in err.value.problems)


def test_config_lists_every_offending_field(tmp_path):
    cfg = _quick_config(tmp_path, eval_steps=0, scheme="nope", temperature=-1.0)
    problems = cfg.problems()
    assert len(problems) >= 3


def test_config_rejects_unknown_fields():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"env": {"kind": "xor"}, "bogus_field": 1})
    assert "bogus_field" in str(err.value)


def test_config_file_round_trip(tmp_path):
    cfg = _quick_config(tmp_path)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg.to_dict()))
    clone = ExperimentConfig.from_file(path)
    assert clone == cfg


def test_custom_env_inline_spec(tmp_path):
    spec = random_positive_spec(2, 2, 2, np.random.default_rng(0))
    cfg = _quick_config(
        tmp_path,
        env={"kind": "custom", "spec": spec.to_dict()},
        bounds={"beta": [9.0, 9.0]},
        learn_steps=200,
        eval_steps=200,
    )
    summary = run_experiment(cfg)
    assert len(summary.beta) == 2


def test_custom_env_from_file(tmp_path):
    spec = random_positive_spec(2, 2, 2, np.random.default_rng(1))
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec.to_dict()))
    loaded = build_spec({"kind": "custom", "path": str(spec_path)})
    np.testing.assert_allclose(loaded.transition, spec.transition, atol=1e-15)
    np.testing.assert_allclose(loaded.costs, spec.costs, atol=1e-15)


# -- run_experiment ----------------------------------------------------------


def test_constant_cost_env_always_satisfied(tmp_path):
    spec = constant_cost_spec(3, 2, 2, 2.0, np.random.default_rng(1))
    cfg = _quick_config(
        tmp_path,
        env={"kind": "custom", "spec": spec.to_dict()},
        bounds={"beta": [3.0, 3.0, 3.0]},
        learn_steps=500,
        eval_steps=500,
    )
    summary = run_experiment(cfg)
    assert summary.all_satisfied
    assert summary.satisfied == [True, True, True]
    np.testing.assert_allclose(summary.z_eval, 2.0, atol=1e-9)


def test_same_seed_byte_identical_outputs(tmp_path):
    out = []
    for name in ("a", "b"):
        cfg = _quick_config(tmp_path, name=name, trace_weights=True)
        summary = run_experiment(cfg)
        out.append(
            (
                open(summary.trace_path, "rb").read(),
                json.load(open(summary.summary_path))["z_eval"],
            )
        )
    assert out[0][0] == out[1][0]
    assert out[0][1] == out[1][1]


def test_trace_schema_and_shape(tmp_path):
    cfg = _quick_config(tmp_path, trace_weights=False)
    summary = run_experiment(cfg)
    with open(summary.trace_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(TRACE_COLUMNS)
    widths = {len(r) for r in rows}
    assert widths == {len(TRACE_COLUMNS)}
    # one row per agent at each thinned iteration, learning and eval phases
    iterations = {int(r[0]) for r in rows[1:]}
    assert max(iterations) == cfg.learn_steps + cfg.eval_steps
    data = rows[1:]
    assert len(data) % 3 == 0


def test_trace_weight_columns_optional(tmp_path):
    cfg = _quick_config(tmp_path, trace_weights=True)
    summary = run_experiment(cfg)
    with open(summary.trace_path) as fh:
        header = fh.readline().strip().split(",")
    assert header == list(TRACE_COLUMNS) + ["w_0", "w_1", "w_2"]


def test_freeze_boundary_checksums_recorded(tmp_path):
    cfg = _quick_config(tmp_path)
    summary = run_experiment(cfg)
    assert summary.freeze_checksum == summary.post_eval_checksum
    saved = json.load(open(summary.summary_path))
    assert saved["freeze_checksum"] == summary.freeze_checksum
    assert saved["schema"] == "summary-v1"


def test_eval_phase_z_is_plain_running_mean(tmp_path):
    cfg = _quick_config(tmp_path, trace_every=1, learn_steps=50, eval_steps=60)
    summary = run_experiment(cfg)
    with open(summary.trace_path) as fh:
        rows = [r for r in csv.DictReader(fh)]
    eval_rows = [r for r in rows if int(r["iteration"]) > 50 and r["agent"] == "0"]
    costs = np.array([float(r["cost"]) for r in eval_rows])
    zs = np.array([float(r["z"]) for r in eval_rows])
    np.testing.assert_allclose(zs, np.cumsum(costs) / np.arange(1, 61), atol=1e-12)
    assert summary.z_eval[0] == pytest.approx(zs[-1])


def test_feasibility_precheck_blocks_hopeless_bounds(tmp_path):
    from gossipq.errors import StructureError

    spec = constant_cost_spec(2, 2, 2, 5.0, np.random.default_rng(7))
    cfg = _quick_config(
        tmp_path,
        env={"kind": "custom", "spec": spec.to_dict()},
        bounds={"beta": [4.0, 4.0]},
        precheck_feasibility=True,
        learn_steps=100,
        eval_steps=100,
    )
    with pytest.raises(StructureError):
        run_experiment(cfg)
    cfg2 = _quick_config(
        tmp_path,
        name="ok",
        env={"kind": "custom", "spec": spec.to_dict()},
        bounds={"beta": [6.0, 6.0]},
        precheck_feasibility=True,
        learn_steps=100,
        eval_steps=100,
    )
    assert run_experiment(cfg2).all_satisfied


def test_summary_flags_violations(tmp_path):
    spec = constant_cost_spec(2, 2, 2, 5.0, np.random.default_rng(2))
    cfg = _quick_config(
        tmp_path,
        env={"kind": "custom", "spec": spec.to_dict()},
        bounds={"beta": [6.0, 4.0]},  # agent 1 cannot meet its bound
        learn_steps=300,
        eval_steps=300,
    )
    summary = run_experiment(cfg)
    assert summary.satisfied == [True, False]
    assert not summary.all_satisfied


# -- sweeps ------------------------------------------------------------------


def test_single_element_sweep_matches_run(tmp_path):
    cfg_run = _quick_config(tmp_path, name="single")
    direct = run_experiment(cfg_run)
    results = run_sweep([_quick_config(tmp_path, name="single")], parallelism=1)
    assert results[0]["ok"]
    assert results[0]["summary"]["z_eval"] == direct.to_dict()["z_eval"]


def test_sweep_aggregates_by_index_and_counts(tmp_path):
    configs = [_quick_config(tmp_path, name=f"s{k}", seed=k) for k in range(3)]
    results = run_sweep(configs, parallelism=1)
    assert [r["index"] for r in results] == [0, 1, 2]
    assert all("satisfied_agents" in r for r in results)


def test_sweep_parallelism_does_not_change_output(tmp_path):
    def make(tag):
        return [
            _quick_config(tmp_path, name=f"{tag}{k}", seed=k, learn_steps=500, eval_steps=500)
            for k in range(4)
        ]

    seq = run_sweep(make("seq"), parallelism=1)
    par = run_sweep(make("par"), parallelism=4)
    for a, b in zip(seq, par):
        assert a["summary"]["z_eval"] == b["summary"]["z_eval"]
        assert a["summary"]["policy"] == b["summary"]["policy"]


def test_sweep_records_failures_and_continues(tmp_path):
    good = _quick_config(tmp_path, name="good")
    bad = _quick_config(tmp_path, name="bad")
    bad.env = {"kind": "custom", "spec": None}  # will blow up at build time
    results = run_sweep([bad, good], parallelism=1)
    assert not results[0]["ok"] and "error" in results[0]
    assert results[1]["ok"]


def test_sweep_requires_configs():
    with pytest.raises(ValueError):
        run_sweep([])


# -- policy report -----------------------------------------------------------


def test_report_reference_policy_recovers_margin():
    spec = build_xor_mdp(3, 2, seed=6)
    ref = policy_from_id(spec, 0)
    spec = calibrate_bounds(spec, ref, margin=0.1)
    report = emit_policy_report(spec, ref)
    assert report["mode"] == "exact"
    for entry in report["agents"]:
        assert entry["gap_g_minus_beta"] == pytest.approx(-0.1, abs=1e-12)


def test_report_queueing_exact_vs_rollout(tmp_path):
    # both report paths on the queueing instance: exact evaluation of the
    # frozen policy agrees with a long rollout
    cfg = ExperimentConfig.from_dict(
        dict(
            env={"kind": "queueing"},
            graph={"kind": "complete"},
            scheme="mh",
            temperature=0.3,
            epsilon_explore=0.05,
            learn_steps=20_000,
            eval_steps=150_000,
            seed=3,
            bounds={"reference_policy": "uniform", "margin": 0.1},
            update_mode="synchronous",
            out_dir=str(tmp_path / "queue"),
        )
    )
    summary = run_experiment(cfg)
    spec = apply_bounds(build_spec(cfg.env), cfg.bounds)
    report = emit_policy_report(
        spec, np.asarray(summary.policy), empirical_z=np.asarray(summary.z_eval)
    )
    assert report["mode"] == "exact"
    for entry in report["agents"]:
        assert entry["abs_g_minus_z"] <= 0.02


def test_report_empirical_only_on_capacity_error():
    spec = random_positive_spec(1, 2, 2, np.random.default_rng(3))
    spec = replace(spec, bounds=np.array([5.0]))
    object.__setattr__(spec, "n_states", 10**9)  # trip the capacity guard
    report = emit_policy_report(spec, np.zeros((1, 10**9), dtype=int), empirical_z=np.array([4.0]))
    assert report["mode"].startswith("empirical-only")
    assert report["agents"][0]["z_empirical"] == 4.0


def test_report_requires_bounds():
    spec = random_positive_spec(1, 2, 2, np.random.default_rng(3))
    with pytest.raises(ValueError):
        emit_policy_report(spec, np.zeros((1, 2), dtype=int))

import json
import os

import numpy as np
import pytest

from faultadapt import cli, envs, runner
from faultadapt.checkpoint import CheckpointContainer, load_checkpoint, save_checkpoint
from faultadapt.config import default_config, parse_config, parse_config_dict
from faultadapt.errors import CheckpointError, ConfigError
from faultadapt.harness import NOT_REACHED

TINY_PPO = {"n_steps": 32, "minibatch_size": 8, "epochs": 2, "lr": 0.002}
TINY_PHASES = {"phase1_steps": 64, "phase3_steps": 64, "eval_every": 32, "eval_episodes": 2}


def tiny_config(experiment_id, fault=None, approach=4, algorithm="ppo", seeds=(0, 1)):
    algo = {"name": algorithm, **(TINY_PPO if algorithm == "ppo" else
                                  {"capacity": 256, "batch_size": 8, "min_fill": 16})}
    phases = dict(TINY_PHASES)
    phases["approach"] = approach
    if fault is not None:
        phases["fault"] = fault
    return parse_config_dict({
        "experiment_id": experiment_id,
        "env": {"kind": "reach_arm"},
        "algorithm": algo,
        "phases": phases,
        "seeds": list(seeds),
    })


FROZEN = {"kind": "frozen_sensor", "joint": 1, "frozen_value": -1.5}


# ---------------------------------------------------------------------------
# config parsing


def test_minimal_config_materializes_defaults():
    xc = parse_config_dict({"experiment_id": "mini", "env": {"kind": "reach_arm"},
                            "algorithm": {"name": "ppo"}})
    doc = xc.resolved()
    assert doc["algorithm"]["n_steps"] == 2048
    assert doc["algorithm"]["minibatch_size"] == 8
    assert doc["algorithm"]["epochs"] == 24
    assert doc["algorithm"]["gamma"] == 0.848
    assert doc["phases"]["phase1_steps"] == 500_000
    assert doc["phases"]["phase3_steps"] == 30_000
    assert doc["seeds"] == list(range(30))
    assert doc["schema_version"] == 1


def test_missing_algorithm_names_key():
    with pytest.raises(ConfigError, match="algorithm"):
        parse_config_dict({"experiment_id": "x", "env": {"kind": "reach_arm"}})


def test_unknown_keys_rejected_with_name():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_dict({"experiment_id": "x", "env": {"kind": "reach_arm"},
                           "algorithm": {"name": "ppo"}, "bogus": 1})
    with pytest.raises(ConfigError, match="env.typo"):
        parse_config_dict({"experiment_id": "x", "env": {"kind": "reach_arm", "typo": 1},
                           "algorithm": {"name": "ppo"}})


def test_type_mismatch_names_key():
    with pytest.raises(ConfigError, match="phases.phase1_steps"):
        parse_config_dict({"experiment_id": "x", "env": {"kind": "reach_arm"},
                           "algorithm": {"name": "ppo"},
                           "phases": {"phase1_steps": "many"}})


def test_duplicate_seeds_rejected():
    with pytest.raises(ConfigError, match="seeds"):
        parse_config_dict({"experiment_id": "x", "env": {"kind": "reach_arm"},
                           "algorithm": {"name": "ppo"}, "seeds": [0, 0]})


def test_crawler_ppo_table_values_roundtrip(tmp_path):
    doc = {
        "experiment_id": "crawler_ppo",
        "env": {"kind": "quad_crawler"},
        "algorithm": {"name": "ppo", "minibatch_size": 1024, "epochs": 5,
                      "clip_eps": 0.3, "gamma": 0.9839, "gae_lambda": 0.911,
                      "c1": 1.0, "c2": 0.0019, "lr": 0.000123},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    xc = parse_config(str(path))
    a = xc.resolved()["algorithm"]
    assert (a["minibatch_size"], a["epochs"], a["clip_eps"]) == (1024, 5, 0.3)
    assert (a["gamma"], a["gae_lambda"], a["c1"], a["c2"]) == (0.9839, 0.911, 1.0, 0.0019)
    assert a["lr"] == 0.000123
    # resolved echo is a fixed point of the parser
    again = parse_config_dict(xc.resolved())
    assert again.resolved() == xc.resolved()
    assert again.digest() == xc.digest()


def test_reach_sac_defaults_match_selected_values():
    xc = default_config("reach_arm", "sac", "reach_sac")
    a = xc.resolved()["algorithm"]
    assert a["capacity"] == 10_000
    assert a["batch_size"] == 512
    assert a["tau"] == 0.0877
    assert a["gamma"] == 0.9646
    assert a["lr"] == 0.001092


def test_crawler_sac_buffer_default():
    xc = default_config("quad_crawler", "sac", "crawler_sac")
    assert xc.resolved()["algorithm"]["capacity"] == 500_000
    assert xc.resolved()["algorithm"]["tau"] == 0.0721


def test_shipped_configs_parse():
    here = os.path.join(os.path.dirname(__file__), "..", "configs")
    for name in os.listdir(here):
        xc = parse_config(os.path.join(here, name))
        assert xc.experiment_id


def test_fault_in_env_section():
    xc = parse_config_dict({
        "experiment_id": "x", "env": {"kind": "reach_arm", "faults": [FROZEN]},
        "algorithm": {"name": "ppo"}})
    assert xc.env.faults[0].kind == "frozen_sensor"
    with pytest.raises(ConfigError, match="frozen_value"):
        parse_config_dict({
            "experiment_id": "x",
            "env": {"kind": "reach_arm", "faults": [{"kind": "frozen_sensor", "joint": 1}]},
            "algorithm": {"name": "ppo"}})


# ---------------------------------------------------------------------------
# checkpoint container


def _container(with_storage=True):
    rng = np.random.default_rng(5)
    tensors = {"policy.w1": rng.standard_normal((4, 3)), "value.b3": rng.standard_normal(1)}
    storage = {"obs": rng.standard_normal((6, 4)), "bootstrap_value": np.array([0.5])}
    return CheckpointContainer(algorithm="ppo", counters={"update_count": 3, "adam.t": 9},
                               config_digest="abc123", tensors=tensors,
                               storage=storage if with_storage else None, captured_at=64)


def test_checkpoint_roundtrip_bit_identical(tmp_path):
    path = str(tmp_path / "c.ftrl")
    original = _container()
    save_checkpoint(original, path)
    loaded = load_checkpoint(path)
    assert loaded.algorithm == "ppo" and loaded.counters == original.counters
    assert loaded.captured_at == 64 and loaded.config_digest == "abc123"
    for key, value in original.tensors.items():
        assert np.array_equal(loaded.tensors[key], value)
    for key, value in original.storage.items():
        assert np.array_equal(loaded.storage[key], value)
    # a second save of the loaded container is byte-identical
    path2 = str(tmp_path / "c2.ftrl")
    save_checkpoint(loaded, path2)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_checkpoint_without_storage_section(tmp_path):
    path = str(tmp_path / "c.ftrl")
    save_checkpoint(_container(with_storage=False), path)
    assert load_checkpoint(path).storage is None


def test_checkpoint_corruption_detected(tmp_path):
    path = str(tmp_path / "c.ftrl")
    save_checkpoint(_container(), path)
    blob = bytearray(open(path, "rb").read())
    blob[-40] ^= 0xFF  # flip a payload byte
    open(path, "wb").write(bytes(blob))
    with pytest.raises(CheckpointError, match="digest mismatch"):
        load_checkpoint(path)


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = str(tmp_path / "c.ftrl")
    save_checkpoint(_container(), path)
    blob = open(path, "rb").read()
    open(path, "wb").write(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    open(path, "wb").write(blob[:-40])  # cut into the payload
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_version_gate(tmp_path):
    path = str(tmp_path / "c.ftrl")
    bad = _container()
    bad.version = 99
    save_checkpoint(bad, path)
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(path)


def test_checkpoint_config_digest_check(tmp_path):
    path = str(tmp_path / "c.ftrl")
    save_checkpoint(_container(), path)
    assert load_checkpoint(path, expected_config_digest="abc123").algorithm == "ppo"
    with pytest.raises(CheckpointError, match="config digest"):
        load_checkpoint(path, expected_config_digest="zzz")


# ---------------------------------------------------------------------------
# runner: train / adapt / report


def test_cmd_train_artifacts_and_rerun_identical(tmp_path):
    out = str(tmp_path)
    xc = tiny_config("t1")
    exp_dir = runner.cmd_train(xc, out, jobs=1)
    manifest = runner.load_manifest(exp_dir)
    assert all(e["status"] == "done" for e in manifest["seeds"].values())
    curve_path = os.path.join(exp_dir, "seed_0", "curve.csv")
    ckpt_path = os.path.join(exp_dir, "seed_0", "checkpoint.ftrl")
    curve_bytes = open(curve_path, "rb").read()
    ckpt_bytes = open(ckpt_path, "rb").read()
    # row count = budget / eval_every + 1 (step-0 evaluation)
    assert len(curve_bytes.decode().strip().split("\n")) == 1 + (64 // 32 + 1)

    os.remove(curve_path)
    manifest["seeds"]["0"]["status"] = "pending"
    runner._write_json_atomic(runner.manifest_path(exp_dir), manifest)
    runner.cmd_train(xc, out, jobs=1)
    assert open(curve_path, "rb").read() == curve_bytes
    assert open(ckpt_path, "rb").read() == ckpt_bytes


def test_cmd_train_parallel_jobs_identical(tmp_path):
    xc = tiny_config("t2", seeds=(0, 1, 2))
    d1 = runner.cmd_train(xc, str(tmp_path / "a"), jobs=1)
    d2 = runner.cmd_train(xc, str(tmp_path / "b"), jobs=2)
    for seed in (0, 1, 2):
        a = open(os.path.join(d1, f"seed_{seed}", "curve.csv"), "rb").read()
        b = open(os.path.join(d2, f"seed_{seed}", "curve.csv"), "rb").read()
        assert a == b
        a = open(os.path.join(d1, f"seed_{seed}", "checkpoint.ftrl"), "rb").read()
        b = open(os.path.join(d2, f"seed_{seed}", "checkpoint.ftrl"), "rb").read()
        assert a == b


def test_cmd_adapt_approaches_and_baseline_equivalence(tmp_path):
    out = str(tmp_path)
    train_dir = runner.cmd_train(tiny_config("base"), out, jobs=1)

    # all four approach flags execute
    for approach in (1, 2, 3, 4):
        xc = tiny_config(f"adapt_a{approach}", fault=FROZEN, approach=approach)
        exp_dir = runner.cmd_adapt(xc, train_dir, None, out, jobs=1)
        manifest = runner.load_manifest(exp_dir)
        assert all(e["status"] == "done" for e in manifest["seeds"].values())
        curve = runner.read_curve(os.path.join(exp_dir, "seed_0", "curve.csv"))
        assert curve.records[0].step == 0  # the no-adaptation evaluation

    # approach 4 output equals training from scratch in the fault environment
    fresh = parse_config_dict({
        "experiment_id": "fresh_fault",
        "env": {"kind": "reach_arm", "faults": [FROZEN]},
        "algorithm": {"name": "ppo", **TINY_PPO},
        "phases": {**TINY_PHASES, "phase1_steps": 64},
        "seeds": [0, 1],
    })
    fresh_dir = runner.cmd_train(fresh, out, jobs=1)
    for seed in (0, 1):
        a = open(os.path.join(out, "adapt_a4", f"seed_{seed}", "curve.csv"), "rb").read()
        b = open(os.path.join(fresh_dir, f"seed_{seed}", "curve.csv"), "rb").read()
        assert a == b


def test_cmd_adapt_algorithm_mismatch_fails_fast(tmp_path):
    out = str(tmp_path)
    train_dir = runner.cmd_train(tiny_config("base2"), out, jobs=1)
    sac_xc = tiny_config("sac_adapt", fault=FROZEN, algorithm="sac")
    with pytest.raises(ConfigError, match="algorithm"):
        runner.cmd_adapt(sac_xc, train_dir, None, out, jobs=1)
    assert not os.path.exists(os.path.join(out, "sac_adapt", "seed_0"))


def test_cmd_report_outputs(tmp_path):
    out = str(tmp_path)
    train_dir = runner.cmd_train(tiny_config("r_base"), out, jobs=1)
    arms = []
    for approach in (1, 4):
        xc = tiny_config(f"r_a{approach}", fault=FROZEN, approach=approach)
        arms.append(runner.cmd_adapt(xc, train_dir, None, out, jobs=1))
    report_dir = str(tmp_path / "report")
    result = runner.cmd_report(arms, report_dir)
    assert result["bundles"] == 2
    agg = open(os.path.join(report_dir, "aggregate_r_a1.csv")).read().strip().split("\n")
    assert agg[0] == "step,mean,ci_low,ci_high,n"
    assert len(agg) == 1 + 3
    savings = open(os.path.join(report_dir, "savings.csv")).read()
    assert savings.startswith("algorithm,fault,approach,savings_percent")
    bars = open(os.path.join(report_dir, "bars.csv")).read().strip().split("\n")
    assert any(line.startswith("r_a1,0,") for line in bars)


def test_cmd_report_partial_on_missing(tmp_path):
    report_dir = str(tmp_path / "report")
    result = runner.cmd_report([str(tmp_path / "missing_exp")], report_dir)
    assert result["bundles"] == 0 and result["issues"]
    assert os.path.exists(os.path.join(report_dir, "savings.csv"))


def test_savings_sentinel_rendering():
    assert runner.NOT_REACHED_CELL == "—"
    assert NOT_REACHED is None


def test_cmd_heatmap(tmp_path):
    out = str(tmp_path)
    train_dir = runner.cmd_train(tiny_config("h_base", seeds=(0,)), out, jobs=1)
    xc = tiny_config("h_map", fault=FROZEN, seeds=(0,))
    path = runner.cmd_heatmap(xc, os.path.join(train_dir, "seed_0", "checkpoint.ftrl"),
                              out, episodes=3, bins=10)
    rows = open(path).read().strip().split("\n")
    assert rows[0].startswith("joint,bin_0")
    for row in rows[1:]:
        probs = [float(x) for x in row.split(",")[1:]]
        assert abs(sum(probs) - 1.0) < 1e-9


# ---------------------------------------------------------------------------
# CLI surface


def test_parse_seed_range():
    assert cli.parse_seed_range("0-3") == [0, 1, 2, 3]
    assert cli.parse_seed_range("5") == [5]
    assert cli.parse_seed_range("1,4,9") == [1, 4, 9]
    with pytest.raises(ConfigError):
        cli.parse_seed_range("1,1")


def test_cli_train_and_error_json(tmp_path, capsys):
    config_path = tmp_path / "c.json"
    config_path.write_text(json.dumps({
        "experiment_id": "cli_t", "env": {"kind": "reach_arm"},
        "algorithm": {"name": "ppo", **TINY_PPO},
        "phases": {**TINY_PHASES}, "seeds": [0],
    }))
    code = cli.run(["train", "--config", str(config_path), "--out", str(tmp_path / "runs")])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["status"]["done"] == 1

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"env": {"kind": "reach_arm"}, "algorithm": {"name": "ppo"}}))
    with pytest.raises(SystemExit) as exc:
        cli.main_with_args(["train", "--config", str(bad), "--out", str(tmp_path / "runs")])
    assert exc.value.code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigError" and "experiment_id" in err["message"]


def test_cli_hpo_tiny(tmp_path):
    space_path = tmp_path / "space.json"
    space_path.write_text(json.dumps({
        "algorithm": "ppo",
        "params": {"lr": {"uniform": [0.0005, 0.003]},
                   "clip_eps": {"choice": [0.1, 0.2, 0.3]}},
    }))
    result = runner.cmd_hpo(str(space_path), "reach_arm", str(tmp_path / "runs"),
                            config_seeds=range(3), run_seeds=range(2),
                            phase1_steps=96, eval_every=8, jobs=1)
    assert result["n_unique"] >= 2
    assert os.path.exists(os.path.join(result["dir"], "leaderboard.csv"))
    assert os.path.exists(os.path.join(result["dir"], "winner.json"))

"""Command-line runner: config resolution, artifacts, determinism, exits."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from exchlab.cli.config import ConfigError, config_hash, load_config, parse_override
from exchlab.cli.main import main
from exchlab.cli.runners import estimate_training_flops
from exchlab.tinyformer import TransformerConfig, load_checkpoint

TINY_MODEL = '{"d_model":16,"d_ff":32,"n_heads":2,"n_layers":2,"dropout":0.0,"embed_hidden":[16,16]}'


def run_cli(*argv: str) -> int:
    return main(list(argv))


def read_csv(path) -> tuple[list[str], list[list[str]], dict]:
    """Returns (columns, data rows, header metadata)."""
    meta = {}
    columns = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        elif columns is None:
            columns = line.split(",")
        else:
            rows.append(line.split(","))
    return columns, rows, meta


# ---------------------------------------------------------------------------
# config resolution


def test_override_parsing_forms():
    assert parse_override("seed=7") == ("seed", 7)
    assert parse_override("scheme=causal") == ("scheme", "causal")  # bare word stays a string
    assert parse_override("xs=[1,2]") == ("xs", [1, 2])
    with pytest.raises(ConfigError, match="key=value"):
        parse_override("seed")


def test_load_config_layering(tmp_path):
    defaults = {"seed": 0, "opt": {"a": 1.0, "b": 2.0}, "out": "x.csv"}
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"seed": 5, "opt": {"a": 9.0}}))
    resolved = load_config(defaults, str(cfg_file), ["opt.b=3.5"])
    assert resolved == {"seed": 5, "opt": {"a": 9.0, "b": 3.5}, "out": "x.csv"}
    # defaults object untouched
    assert defaults["opt"] == {"a": 1.0, "b": 2.0}


def test_load_config_rejects_unknown_and_mistyped(tmp_path):
    defaults = {"seed": 0, "opt": {"a": 1.0}}
    with pytest.raises(ConfigError, match="unknown config key: typo"):
        load_config(defaults, None, ["typo=1"])
    with pytest.raises(ConfigError, match="opt.bad"):
        load_config(defaults, None, ["opt.bad=1"])
    with pytest.raises(ConfigError, match="expects a number"):
        load_config(defaults, None, ['seed="zero"'])
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(defaults, str(bad), [])


def test_open_subtree_accepts_new_keys():
    defaults = {"model_params": {}, "seed": 0}
    resolved = load_config(defaults, None, ["model_params.d_model=8"], open_paths=("model_params",))
    assert resolved["model_params"] == {"d_model": 8}


def test_config_hash_is_order_insensitive():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


# ---------------------------------------------------------------------------
# gap


def test_gap_headline_and_zero_sigma_rows(tmp_path):
    out = tmp_path / "gap.csv"
    code = run_cli(
        "gap",
        "--set", "prior_stds=[0.0,1.0]",
        "--set", "n_contexts=[0]",
        "--set", "n_futures=[2]",
        "--set", "n_sequences=4000",
        "--out", str(out),
    )
    assert code == 0
    columns, rows, meta = read_csv(out)
    assert columns == ["sigma", "tau", "t", "T", "closed_form", "mc_mean", "mc_se"]
    assert meta["schema_version"] == "1"
    assert meta["command"] == "gap"
    assert len(meta["config_hash"]) == 64
    by_sigma = {row[0]: row for row in rows}
    assert float(by_sigma["0.0"][4]) == 0.0
    assert float(by_sigma["0.0"][5]) == 0.0  # identical laws, identical scores
    headline = float(by_sigma["1.0"][4])
    assert headline == pytest.approx(math.log(2) - 0.5 * math.log(3), abs=1e-12)
    mc_mean, mc_se = float(by_sigma["1.0"][5]), float(by_sigma["1.0"][6])
    assert abs(mc_mean - headline) <= 4.0 * mc_se


def test_gap_rows_sorted_regardless_of_grid_order(tmp_path):
    out = tmp_path / "gap.csv"
    assert run_cli(
        "gap",
        "--set", "prior_stds=[2.0,0.5]",
        "--set", "n_contexts=[1,0]",
        "--set", "n_futures=[2]",
        "--set", "n_sequences=100",
        "--out", str(out),
    ) == 0
    _, rows, _ = read_csv(out)
    keys = [(float(r[0]), float(r[2])) for r in rows]
    assert keys == sorted(keys)


# ---------------------------------------------------------------------------
# determinism contracts


def test_uq_rerun_is_byte_identical(tmp_path):
    out = tmp_path / "uq.csv"
    args = (
        "uq",
        "--set", "n_reps=40",
        "--set", "chain_lengths=[1,5]",
        "--out", str(out),
    )
    assert run_cli(*args) == 0
    first = out.read_bytes()
    assert run_cli(*args) == 0
    assert out.read_bytes() == first


def test_bandit_worker_count_does_not_change_output(tmp_path):
    out = tmp_path / "bandit.csv"
    base = (
        "bandit",
        "--set", "n_reps=6",
        "--set", "horizon=8",
        "--set", "chain_length=5",
        "--out", str(out),
    )
    assert run_cli(*base, "--workers", "1") == 0
    serial = out.read_bytes()
    assert run_cli(*base, "--workers", "3") == 0
    assert out.read_bytes() == serial


def test_active_worker_count_does_not_change_output(tmp_path):
    out = tmp_path / "active.csv"
    base = (
        "active",
        "--set", "n_seeds=4",
        "--set", "horizon=4",
        "--set", "i_paths=4",
        "--set", "chain_length=4",
        "--out", str(out),
    )
    assert run_cli(*base, "--workers", "1") == 0
    serial = out.read_bytes()
    assert run_cli(*base, "--workers", "4") == 0
    assert out.read_bytes() == serial


def test_seed_changes_results(tmp_path):
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    common = ("uq", "--set", "n_reps=20", "--set", "chain_lengths=[2]")
    assert run_cli(*common, "--seed", "1", "--out", str(out_a)) == 0
    assert run_cli(*common, "--seed", "2", "--out", str(out_b)) == 0
    _, rows_a, _ = read_csv(out_a)
    _, rows_b, _ = read_csv(out_b)
    assert rows_a[0][2] != rows_b[0][2]


def test_flag_overrides_config_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 5, "n_reps": 20, "chain_lengths": [2]}))
    out = tmp_path / "uq.csv"
    assert run_cli("uq", "--config", str(cfg), "--seed", "7", "--out", str(out)) == 0
    _, _, meta = read_csv(out)
    embedded = json.loads(meta["config"])
    assert embedded["seed"] == 7
    assert embedded["n_reps"] == 20
    assert "workers" not in embedded  # execution detail, not experiment identity


# ---------------------------------------------------------------------------
# exit codes


def test_unknown_key_exits_2_and_names_it(tmp_path, capsys):
    assert run_cli("gap", "--set", "no_such_key=5", "--out", str(tmp_path / "x.csv")) == 2
    assert "no_such_key" in capsys.readouterr().err


def test_malformed_config_file_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("uq", "--config", str(bad)) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert run_cli("uq", "--config", str(tmp_path / "absent.json")) == 2


def test_wrong_value_type_exits_2(tmp_path, capsys):
    assert run_cli("uq", "--set", 'n_reps="many"', "--out", str(tmp_path / "x.csv")) == 2
    assert "n_reps" in capsys.readouterr().err


def test_invalid_grid_value_exits_2(tmp_path):
    # noise_std = 0 has no closed form; surfaces as a config error, not a traceback
    assert run_cli(
        "gap", "--set", "noise_stds=[0.0]", "--out", str(tmp_path / "x.csv")
    ) == 2


def test_budget_refusal_exits_3_and_writes_nothing(tmp_path, capsys):
    out = tmp_path / "log.csv"
    code = run_cli("train", "--set", "flop_budget=1000", "--out", str(out))
    assert code == 3
    assert "budget" in capsys.readouterr().err
    assert not out.exists()


def test_arch_budget_refusal_exits_3(tmp_path):
    assert run_cli("arch", "--set", "flop_budget=1", "--out", str(tmp_path / "x.csv")) == 3


def test_unknown_subcommand_exits_2(capsys):
    assert run_cli("bogus") == 2
    capsys.readouterr()


def test_module_entrypoint_runs():
    result = subprocess.run(
        [
            sys.executable, "-m", "exchlab.cli", "gap",
            "--set", "prior_stds=[1.0]",
            "--set", "n_contexts=[0]",
            "--set", "n_futures=[2]",
            "--set", "n_sequences=50",
            "--out", "gap_entry.csv",
        ],
        cwd="/tmp",
        capture_output=True,
        text=True,
    )
    assert result.returncode == 0, result.stderr


# ---------------------------------------------------------------------------
# uq content


def test_uq_theory_column_and_estimates(tmp_path):
    out = tmp_path / "uq.csv"
    assert run_cli(
        "uq",
        "--set", "n_reps=400",
        "--set", "n_context=5",
        "--set", "chain_lengths=[1,25]",
        "--out", str(out),
    ) == 0
    columns, rows, _ = read_csv(out)
    assert columns == ["chain_length", "n_reps", "mse", "se", "theory_mse"]
    post_var = 1.0 / (1.0 + 5.0)  # unit prior and noise, five observations
    for row in rows:
        j = int(row[0])
        assert float(row[4]) == pytest.approx(post_var + 1.0 / j, abs=1e-12)
        assert float(row[2]) == pytest.approx(float(row[4]), abs=6 * float(row[3]) + 1e-12)
    # longer chains isolate the epistemic part: mse strictly drops
    assert float(rows[1][2]) < float(rows[0][2])


# ---------------------------------------------------------------------------
# bandit content


def test_bandit_rows_cover_modes_and_steps(tmp_path):
    out = tmp_path / "bandit.csv"
    assert run_cli(
        "bandit",
        "--set", "n_reps=8",
        "--set", "horizon=5",
        "--set", "chain_length=4",
        "--set", 'modes=["one_step","exact"]',
        "--out", str(out),
    ) == 0
    columns, rows, _ = read_csv(out)
    assert columns == ["mode", "step", "mean_regret", "se_regret", "suboptimal_rate", "n_reps"]
    assert len(rows) == 2 * 5
    assert {row[0] for row in rows} == {"exact", "one_step"}
    steps = [int(r[1]) for r in rows if r[0] == "exact"]
    assert steps == [1, 2, 3, 4, 5]
    assert all(int(r[5]) == 8 for r in rows)


def test_bandit_constant_arm_config(tmp_path):
    out = tmp_path / "bandit.csv"
    arms = '[{"kind":"gaussian","latent_mean":-1.0,"latent_std":0.0,"noise_std":1.0},{"kind":"constant","value":0.0}]'
    assert run_cli(
        "bandit",
        "--set", f"arms={arms}",
        "--set", "n_reps=4",
        "--set", "horizon=6",
        "--set", 'modes=["one_step"]',
        "--out", str(out),
    ) == 0
    _, rows, _ = read_csv(out)
    assert len(rows) == 6


def test_bandit_bad_arm_kind_exits_2(tmp_path, capsys):
    assert run_cli(
        "bandit",
        "--set", 'arms=[{"kind":"mystery"},{"kind":"constant","value":0.0}]',
        "--out", str(tmp_path / "x.csv"),
    ) == 2
    assert "arms[0].kind" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# active content


def test_active_rows_and_first_query_metadata(tmp_path):
    out = tmp_path / "active.csv"
    assert run_cli(
        "active",
        "--set", "n_seeds=3",
        "--set", "horizon=4",
        "--set", "i_paths=6",
        "--set", "chain_length=8",
        "--out", str(out),
    ) == 0
    columns, rows, meta = read_csv(out)
    assert columns == ["mode", "step", "mean_nll", "se_nll", "n_seeds"]
    assert len(rows) == 2 * 4
    assert "first_query_widest_cluster_fraction_one_step" in meta
    frac = float(meta["first_query_widest_cluster_fraction_multi_step"])
    assert 0.0 <= frac <= 1.0
    assert all(int(r[4]) == 3 for r in rows)


# ---------------------------------------------------------------------------
# propcheck content


def test_propcheck_counterexample_report(tmp_path):
    out = tmp_path / "prop.json"
    assert run_cli("propcheck", "--set", "n_mc=4000", "--out", str(out)) == 0
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == "1"
    assert doc["model"] == "counterexample"
    assert doc["config_hash"] == config_hash(doc["config"])
    perm = doc["reports"]["perm_invariance"]
    cid = doc["reports"]["cid"]
    assert perm["passed"] is True
    assert cid["passed"] is False
    # the martingale gap after observing a single 1 is exactly one half
    assert cid["max_violation"] == pytest.approx(0.5, abs=0.05)


def test_propcheck_conjugate_passes_both(tmp_path):
    out = tmp_path / "prop.json"
    assert run_cli(
        "propcheck",
        "--set", "model=conjugate",
        "--set", "context=[0.4,-1.2,0.9]",
        "--set", "n_mc=2000",
        "--out", str(out),
    ) == 0
    reports = json.loads(out.read_text())["reports"]
    assert reports["perm_invariance"]["passed"] is True
    assert reports["cid"]["passed"] is True


def test_propcheck_joint_exchangeability(tmp_path):
    out = tmp_path / "prop.json"
    assert run_cli(
        "propcheck",
        "--set", 'checks=["joint_exchangeability"]',
        "--set", "joint_steps=3",
        "--out", str(out),
    ) == 0
    assert json.loads(out.read_text())["reports"]["joint_exchangeability"]["passed"] is False
    assert run_cli(
        "propcheck",
        "--set", "model=beta_bernoulli",
        "--set", 'checks=["joint_exchangeability"]',
        "--out", str(out),
    ) == 0
    assert json.loads(out.read_text())["reports"]["joint_exchangeability"]["passed"] is True


def test_propcheck_tinyformer_masks_differ_on_perm(tmp_path):
    out = tmp_path / "prop.json"
    context = "[[0.5,-0.3],[-1.0,0.8],[1.5,0.1]]"
    common = (
        "--set", f"model_params={TINY_MODEL}",
        "--set", f"context={context}",
        "--set", "x_probe=0.25",
        "--set", 'checks=["perm_invariance"]',
    )
    assert run_cli("propcheck", "--set", "model=tinyformer_cperm", *common, "--out", str(out)) == 0
    doc = json.loads(out.read_text())
    assert doc["reports"]["perm_invariance"]["passed"] is True
    assert doc["reports"]["perm_invariance"]["tolerance"] == 1e-5
    assert run_cli("propcheck", "--set", "model=tinyformer_causal", *common, "--out", str(out)) == 0
    assert json.loads(out.read_text())["reports"]["perm_invariance"]["passed"] is False


def test_propcheck_contextual_model_requires_probe(tmp_path, capsys):
    assert run_cli(
        "propcheck",
        "--set", "model=tinyformer_cperm",
        "--set", f"model_params={TINY_MODEL}",
        "--set", "context=[[0.5,-0.3]]",
        "--out", str(tmp_path / "x.json"),
    ) == 2
    assert "x_probe" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train / arch content


def test_train_writes_log_and_loadable_checkpoint(tmp_path):
    out = tmp_path / "log.csv"
    ckpt = tmp_path / "tiny.ckpt"
    assert run_cli(
        "train",
        "--set", f"model={TINY_MODEL}",
        "--set", "n_epochs=2",
        "--set", "steps_per_epoch=2",
        "--set", "horizon=6",
        "--set", 'opt={"batch_size":4}',
        "--set", "val_batches=1",
        "--set", "val_context_lens=[2]",
        "--set", f'checkpoint="{ckpt}"',
        "--out", str(out),
    ) == 0
    columns, rows, meta = read_csv(out)
    assert columns == ["epoch", "train_nll", "val_nll"]
    assert [int(r[0]) for r in rows] == [1, 2]
    assert meta["scheme"] == "c_perm"
    assert meta["diverged"] == "false"
    assert float(meta["prior_marginal_nll"]) == pytest.approx(1.4239136986312566)
    weights = load_checkpoint(str(ckpt))
    assert weights.config == TransformerConfig.from_dict(json.loads(TINY_MODEL))


def test_train_without_checkpoint(tmp_path):
    out = tmp_path / "log.csv"
    assert run_cli(
        "train",
        "--set", f"model={TINY_MODEL}",
        "--set", "n_epochs=1",
        "--set", "steps_per_epoch=1",
        "--set", "horizon=4",
        "--set", 'opt={"batch_size":2}',
        "--set", "val_batches=1",
        "--set", "val_context_lens=[2]",
        "--set", 'checkpoint=""',
        "--out", str(out),
    ) == 0
    _, _, meta = read_csv(out)
    assert meta["checkpoint"] == "none"


def test_arch_compares_schemes_beyond_training_horizon(tmp_path):
    out = tmp_path / "arch.csv"
    assert run_cli(
        "arch",
        "--set", f"model={TINY_MODEL}",
        "--set", "n_epochs=1",
        "--set", "steps_per_epoch=4",
        "--set", "train_horizon=6",
        "--set", "eval_context_lens=[2,8]",
        "--set", "eval_block=2",
        "--set", "n_eval_sequences=8",
        "--set", 'opt={"batch_size":4}',
        "--out", str(out),
    ) == 0
    columns, rows, meta = read_csv(out)
    assert columns == ["scheme", "inference", "context_len", "nll", "se", "n_sequences"]
    assert len(rows) == 2 * 2 * 2  # schemes x inference kinds x context lengths
    assert {r[0] for r in rows} == {"c_perm", "causal"}
    assert {r[1] for r in rows} == {"one_step", "multi_step"}
    assert {int(r[2]) for r in rows} == {2, 8}  # 8 exceeds the training horizon of 6
    assert "final_val_nll_c_perm" in meta and "final_val_nll_causal" in meta
    # with >= 2 layers the mask reaches the loss: schemes must not coincide
    nll = {(r[0], r[1], r[2]): float(r[3]) for r in rows}
    assert nll[("c_perm", "one_step", "2")] != nll[("causal", "one_step", "2")]


def test_flop_estimate_scales_linearly_in_steps():
    cfg = TransformerConfig()
    one = estimate_training_flops(cfg, batch_size=64, horizon=32, n_steps=100)
    two = estimate_training_flops(cfg, batch_size=64, horizon=32, n_steps=200)
    assert two == pytest.approx(2 * one)
    assert estimate_training_flops(cfg, 64, 32, 100, n_schemes=2) == pytest.approx(2 * one)

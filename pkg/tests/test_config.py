import pytest
import yaml

from stepdistill.config import ExperimentConfig, config_from_dict, config_hash, dump_config, load_config
from stepdistill.errors import ValidationError


def test_defaults_build_runtime_objects():
    cfg = ExperimentConfig()
    assert cfg.coarse_schedule().taus == (50, 40, 30, 20, 10, 0)
    assert cfg.rl_config().algorithm == "grpo"
    assert [c.label for c in cfg.reward_spec().components] == ["teacher_cosine@0", "mmd@0"]


def test_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig().replace(**{"rl.divergence": {"kind": "power", "alpha": 0.5, "lambda": 2.0}})
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    again = load_config(p)
    assert again == cfg and again.divergence_spec().lam == 2.0
    assert "lambda" in yaml.safe_load(p.read_text())["rl"]["divergence"]


def test_hash_ignores_key_order():
    d = ExperimentConfig().to_dict()
    shuffled = {k: d[k] for k in reversed(list(d))}
    shuffled["rl"] = {k: d["rl"][k] for k in reversed(list(d["rl"]))}
    assert config_hash(shuffled) == config_hash(d)
    assert config_from_dict(shuffled).config_hash() == ExperimentConfig().config_hash()


@pytest.mark.parametrize("path,value", [("seed", 1), ("rl.lr", 2e-4), ("coarse.K", 4), ("reward.mmd_bandwidth", 0.1),
                                        ("rl.divergence.lambda", 2.0), ("eval.k", 3)])
def test_hash_changes_with_any_value(path, value):
    base = ExperimentConfig()
    assert base.replace(**{path: value}).config_hash() != base.config_hash()


def test_hash_unchanged_by_identical_value():
    base = ExperimentConfig()
    assert base.replace(**{"rl.lr": 1e-4}).config_hash() == base.config_hash()


@pytest.mark.parametrize("raw", [{"epoch": 3}, {"rl": {"learning_rate": 1}}, {"rl": {"divergence": {"beta": 1}}},
                                 {"reward": {"components": [{"kind": "mmd", "scale": 2}]}}])
def test_unknown_keys_rejected(raw):
    with pytest.raises(ValidationError, match="unknown"):
        config_from_dict(raw)


@pytest.mark.parametrize("raw", [{"coarse": {"K": 50}}, {"rl": {"algorithm": "a2c"}}, {"epochs": -1},
                                 {"reward": {"components": []}}, {"rl": {"divergence": {"kind": "renyi", "alpha": 1}}},
                                 {"schedule": {"beta_max": 2.0}}, {"baseline": "ddim"}])
def test_invalid_values_rejected(raw):
    with pytest.raises(ValidationError):
        config_from_dict(raw)


def test_seed_environment_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 3\nepochs: 1\n")
    assert load_config(p, env={}).seed == 3
    assert load_config(p, env={"REDIF_SEED": "11"}).seed == 11
    with pytest.raises(ValidationError):
        load_config(p, env={"REDIF_SEED": "eleven"})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ValidationError):
        load_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("rl: [unclosed\n")
    with pytest.raises(ValidationError):
        load_config(bad)


def test_null_divergence_disables_penalty():
    cfg = config_from_dict({"rl": {"divergence": None}})
    assert cfg.divergence_spec() is None and not cfg.rl_config().uses_divergence

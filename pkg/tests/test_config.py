from pathlib import Path

import pytest

from driftcfl.config import ConfigError, ExperimentConfig, dump_toml, from_dict, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.population.num_clients >= 2


def test_defaults_are_valid():
    cfg = from_dict({})
    assert cfg == ExperimentConfig()


def test_all_problems_reported_at_once():
    with pytest.raises(ConfigError) as info:
        from_dict({"task": {"num_labels": 0, "noise": -1.0}, "training": {"eta": "fast"}, "bogus": {}})
    problems = info.value.problems
    assert any(p.startswith("bogus") for p in problems)
    assert any(p.startswith("training.eta") for p in problems)
    assert len(problems) >= 2


def test_semantic_problems_collected():
    with pytest.raises(ConfigError) as info:
        from_dict({"task": {"num_labels": 0, "noise": -1.0}, "policy": {"mode": "sometimes", "tau_fraction": -1}})
    fields = {p.split(":")[0] for p in info.value.problems}
    assert {"task.num_labels", "task.noise", "policy.mode", "policy.tau_fraction"} <= fields


def test_type_errors():
    for bad in ({"population": {"num_clients": 2.5}}, {"run": {"seed": True}}, {"policy": {"pairwise_variant": 1}},
                {"population": {"switches": {"at_segment": 1}}}):
        with pytest.raises(ConfigError):
            from_dict(bad)


def test_new_switch_needs_extra_concepts():
    with pytest.raises(ConfigError) as info:
        from_dict({"population": {"switches": [{"at_segment": 0, "fraction": 0.5, "target": "new"}]}})
    assert "extra_concepts" in str(info.value)


def test_js_needs_histograms():
    with pytest.raises(ConfigError):
        from_dict({"representation": {"kind": "embedding", "metric": "js"}})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[task\nnum_labels = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_with_override_returns_validated_copy():
    cfg = ExperimentConfig()
    new = cfg.with_override("policy.tau_fraction", 0.25)
    assert new.policy.tau_fraction == 0.25
    assert cfg.policy.tau_fraction != 0.25
    assert new.config_hash() != cfg.config_hash()
    assert cfg.with_override("training.aggregation.method", "fedprox").training.aggregation.method == "fedprox"
    with pytest.raises(ConfigError):
        cfg.with_override("policy.no_such_knob", 1)
    with pytest.raises(ConfigError):
        cfg.with_override("training.eta", -1.0)


def test_hash_ignores_output_location():
    cfg = ExperimentConfig()
    moved = cfg.with_override("run.output_dir", "/elsewhere")
    renamed = cfg.with_override("run.name", "other")
    assert cfg.config_hash() == moved.config_hash() == renamed.config_hash()
    assert cfg.config_hash() != cfg.with_override("run.seed", cfg.run.seed + 1).config_hash()


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.stem)
def test_dump_roundtrip(path, tmp_path):
    cfg = load_config(path)
    out = tmp_path / "copy.toml"
    out.write_text(dump_toml(cfg))
    again = load_config(out)
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()

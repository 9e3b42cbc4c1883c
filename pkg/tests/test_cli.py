import json

import pytest
import yaml

from lrl_adapt import cli
from lrl_adapt.cli import ConfigError, RunConfig, dump_config, from_dict, main, parse_config, to_dict

TINY = {
    "family": {"seed": 5, "vocab_size": 30, "n_parallel": 250, "n_mono_lrl": 250, "n_test": 40, "n_dev": 20},
    "model": {"d_model": 16, "n_heads": 2, "enc_layers": 1, "dec_layers": 1, "d_ff": 32, "max_len": 40,
              "critic_hidden": [16, 16, 8]},
    "pretrain": {"epochs": 1, "batch_tokens": 300, "warmup": 5},
    "supervised": {"epochs": 1, "batch_tokens": 300, "warmup": 5},
    "en2lrl": {"epochs": 1, "batch_tokens": 300, "warmup": 5},
    "lrl2en": {"epochs": 1, "batch_tokens": 300, "warmup": 5},
    "pipeline": {"k_max": 1, "later_epochs": 1, "decode": {"max_len": 20}},
    "eval": {"probe_samples": 120, "ablation_sizes": [50, 200]},
}


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


@pytest.fixture(scope="module")
def iterated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    out = root / "run"
    for command in ("synth-data", "prepare", "iterate"):
        assert main([command, "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    return cfg, out


def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert to_dict(parse_config(path)) == to_dict(RunConfig())
    assert to_dict(parse_config(None)) == to_dict(RunConfig())


def test_unknown_key_named_in_error():
    with pytest.raises(ConfigError, match="foo"):
        from_dict({"foo": 1})
    with pytest.raises(ConfigError, match="model.bar"):
        from_dict({"model": {"bar": 2}})


def test_partial_section_keeps_other_defaults():
    cfg = from_dict({"en2lrl": {"lr": 0.5}})
    assert cfg.en2lrl.lr == 0.5
    assert cfg.en2lrl.epochs == RunConfig().en2lrl.epochs
    assert cfg.en2lrl.direction == RunConfig().en2lrl.direction


def test_adversarial_multiplier_round_trips():
    cfg = from_dict({"en2lrl": {"weights": {"adv_generator": -60}}})
    echoed = yaml.safe_load(dump_config(cfg))
    assert echoed["en2lrl"]["weights"]["adv_generator"] == -60
    assert to_dict(from_dict(echoed)) == to_dict(cfg)


def test_seed_override_reaches_every_stage():
    cfg = RunConfig().with_seed(9)
    assert cfg.seed == cfg.family.seed == cfg.pretrain.seed == cfg.en2lrl.seed == cfg.lrl2en.seed == 9


def test_bad_config_exit_code(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("foo: 1\n")
    assert main(["prepare", "--config", str(path), "--out", str(tmp_path / "o"), "--quiet"]) == 2
    assert main(["no-such-command"]) == 2


def test_evaluate_without_checkpoint_exits_3(tiny_yaml, tmp_path):
    out = tmp_path / "run"
    assert main(["evaluate", "--config", str(tiny_yaml), "--out", str(out), "--quiet"]) == 3
    assert main(["synth-data", "--config", str(tiny_yaml), "--out", str(out), "--quiet"]) == 0
    assert main(["prepare", "--config", str(tiny_yaml), "--out", str(out), "--quiet"]) == 0
    assert main(["evaluate", "--config", str(tiny_yaml), "--out", str(out), "--quiet"]) == 3
    assert main(["train-en2lrl", "--config", str(tiny_yaml), "--out", str(out), "--quiet"]) == 3


def test_iterate_manifest_lists_both_directions(iterated):
    _, out = iterated
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"en2lrl_1", "lrl2en_1"} <= set(manifest["checkpoints"])
    assert (out / "config.effective.yaml").exists()


def test_evaluate_and_report(iterated):
    cfg, out = iterated
    assert main(["evaluate", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    results = json.loads((out / "eval.json").read_text())
    assert "purity" in results["en2lrl_1"] and "probe_accuracy" in results["en2lrl_1"]
    assert main(["report", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert (out / "report" / "losses.png").exists()
    assert (out / "report" / "bleu_by_iteration.png").exists()


def test_iterate_again_is_a_no_op(iterated):
    cfg, out = iterated
    before = (out / "manifest.json").read_text()
    assert main(["iterate", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
    assert (out / "manifest.json").read_text() == before


def test_held_lock_exits_4(iterated):
    from filelock import FileLock

    cfg, out = iterated
    with FileLock(str(out / ".lock")):
        assert main(["report", "--config", str(cfg), "--out", str(out), "--quiet"]) == 4


def test_out_precedence(monkeypatch, tmp_path):
    cfg = RunConfig(out="from-config")
    assert str(cli.resolve_out(cfg, None)) == "from-config"
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.resolve_out(cfg, None) == tmp_path / "env"
    assert cli.resolve_out(cfg, "flag").name == "flag"


def test_env_var_used_by_main(monkeypatch, tmp_path, tiny_yaml):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env_out"))
    assert main(["synth-data", "--config", str(tiny_yaml), "--quiet"]) == 0
    assert (tmp_path / "env_out" / "data" / "manifest.json").exists()

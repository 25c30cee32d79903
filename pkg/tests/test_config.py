import pytest

from localind.config import (PRESETS, ConfigError, ExperimentConfig, config_hash,
                             parse_config_text, resolve)


def test_presets_apply():
    cfg = resolve(flag_values={"experiment": "toy8d"})
    assert (cfg.M, cfg.activation, cfg.learning_rate, cfg.n) == (4, "relu", 1e-4, 10_000)


def test_precedence_flag_over_file_over_preset():
    file_values = parse_config_text("experiment = case2\nepochs = 7\nseed = 3\n")
    cfg = resolve(file_values, {"epochs": 9})
    assert cfg.experiment == "case2" and cfg.seed == 3 and cfg.epochs == 9
    cfg = resolve(file_values, {})
    assert cfg.epochs == 7
    assert resolve({}, {"experiment": "case2"}).epochs == PRESETS["case2"]["epochs"]


def test_config_text_parsing():
    values = parse_config_text("# comment\nlambda = 0.2  # inline\nhidden = 32,16\n\nlr=0.01\n")
    cfg = resolve(values)
    assert cfg.lam == 0.2 and cfg.hidden == (32, 16) and cfg.learning_rate == 0.01


def test_flag_strings_are_coerced():
    cfg = resolve(flag_values={"hidden": "8,8", "M": "2", "baseline": "false"})
    assert cfg.hidden == (8, 8) and cfg.M == 2 and cfg.baseline is False


def test_baseline_forces_single_model():
    cfg = resolve(flag_values={"baseline": True, "M": 2, "lam": 0.5})
    assert cfg.M == 1 and cfg.lam == 0.0
    assert cfg.epochs == PRESETS["case1"]["baseline_epochs"]


@pytest.mark.parametrize("text", ["nonsense line", "colour = red", "M = two"])
def test_bad_config_text(text):
    with pytest.raises(ConfigError):
        resolve(parse_config_text(text))


@pytest.mark.parametrize("flags", [{"experiment": "case9"}, {"lam": -1.0},
                                   {"grid_resolution": 1}, {"experiment": "csv"}])
def test_invalid_values(flags):
    with pytest.raises(ConfigError):
        resolve(flag_values=flags)


def test_run_dirs_are_content_addressed(tmp_path):
    a = resolve(flag_values={"seed": 1, "out": str(tmp_path)})
    b = resolve(flag_values={"seed": 1, "out": str(tmp_path)})
    c = resolve(flag_values={"seed": 2, "out": str(tmp_path)})
    assert a.run_dir("train") == b.run_dir("train") != c.run_dir("train")
    # eval-only settings do not change the data or train directories
    d = resolve(flag_values={"seed": 1, "out": str(tmp_path), "grid_resolution": 10})
    assert d.run_dir("train") == a.run_dir("train") and d.run_dir("eval") != a.run_dir("eval")
    base = resolve(flag_values={"seed": 1, "out": str(tmp_path), "baseline": True})
    assert "-baseline-" in base.run_dir("train")


def test_output_root_env(monkeypatch):
    monkeypatch.setenv("LOCALIND_OUTPUT_DIR", "/somewhere")
    assert ExperimentConfig().output_root() == "/somewhere"
    assert ExperimentConfig(out="x").output_root() == "x"


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert len(config_hash({})) == 12

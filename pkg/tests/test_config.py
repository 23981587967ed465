from dataclasses import fields

import pytest
from hypothesis import given, strategies as st

from harlstm import config
from harlstm.kvfile import KVSyntaxError, format_kv, parse_kv
from harlstm.layers import ConfigError


def test_kv_parsing_rules():
    text = "# header\n\na = 1\nb=two words  # trailing\nc = x#y\n"
    assert parse_kv(text) == {"a": "1", "b": "two words", "c": "x#y"}


@pytest.mark.parametrize("text", ["a = 1\na = 2\n", "no equals sign\n", " = 3\n"])
def test_kv_errors_name_line(text):
    with pytest.raises(KVSyntaxError, match=r"<string>:\d"):
        parse_kv(text)


def test_defaults_follow_reference_settings():
    cfg = config.ExperimentConfig()
    assert (cfg.learning_rate, cfg.l2_lambda, cfg.batch_size, cfg.clip_norm) == (0.001, 0.0015, 100, 15.0)
    assert (cfg.residual_blocks, cfg.bidir_layers_per_block, cfg.hidden_width) == (2, 2, 28)
    assert cfg.target_std == 0.5 and cfg.dropout_keep_prob == 0.85


def test_shorthand_and_unicode():
    cfg = config.loads("architecture = 3×1\nhidden_width = 8\n")
    assert (cfg.residual_blocks, cfg.bidir_layers_per_block) == (3, 1)


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError, match="hidden_width"):
        config.loads("hiden_width = 8\n")


@pytest.mark.parametrize("text", ["residual_blocks = 0\n", "architecture = 0x2\n", "bidir_layers_per_block = 0\n"])
def test_one_based_counts(text):
    with pytest.raises(ConfigError):
        config.loads(text)


@pytest.mark.parametrize("text", ["epochs = many\n", "normalize = maybe\n", "learning_rate = -1\n", "dataset = s3\n"])
def test_bad_values(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_sizes_from_data():
    cfg = config.loads("hidden_width = 5\n")
    arch = cfg.architecture(9, 6, 128)
    assert (arch.input_channels, arch.num_classes, arch.window_length) == (9, 6, 128)
    with pytest.raises(ConfigError):
        cfg.architecture()


def test_train_config_carries_fields():
    cfg = config.loads("learning_rate = 0.02\nseed = 7\n")
    tc = cfg.train_config()
    assert tc.learning_rate == 0.02 and tc.seed == 7


field_values = {
    "dataset": st.sampled_from(["uci", "generic", "toy"]),
    "data_path": st.text("abc/._-", max_size=12).map(str.strip),
    "output_dir": st.text("abc/._-", min_size=1, max_size=12).map(str.strip).filter(bool),
    "dropout_placement": st.just("depth") | st.just("output"),
    "learning_rate": st.floats(1e-6, 1.0),
    "l2_lambda": st.floats(0, 1.0),
    "target_std": st.floats(0.01, 10),
    "window_overlap": st.floats(0, 0.9),
    "bn_beta_init": st.floats(-2, 2),
    "seed": st.integers(0, 2**63 - 1),
    "hidden_width": st.integers(1, 256),
    "residual": st.booleans(),
    "normalize": st.booleans(),
}


@given(st.fixed_dictionaries({}, optional=field_values))
def test_round_trip_identity(values):
    cfg = config.ExperimentConfig(**values)
    text = config.dumps(cfg)
    again = config.loads(text)
    assert again == cfg
    assert config.dumps(again) == text


def test_dump_lists_every_field():
    keys = parse_kv(config.dumps(config.ExperimentConfig())).keys()
    assert set(keys) == {f.name for f in fields(config.ExperimentConfig)}


def test_overrides():
    cfg = config.ExperimentConfig().with_overrides({"epochs": "3", "architecture": "1x1"})
    assert cfg.epochs == 3 and cfg.residual_blocks == 1
    assert config.parse_override(" seed = 4 ") == ("seed", "4")
    with pytest.raises(ConfigError):
        config.parse_override("seed")


def test_digest_changes_with_content():
    a = config.ExperimentConfig()
    assert a.digest() == config.ExperimentConfig().digest()
    assert a.digest() != a.with_overrides({"seed": "1"}).digest()


def test_grid_file(tmp_path):
    p = tmp_path / "grid.txt"
    p.write_text("learning_rate = 0.001, 0.01\nbatch_size = 50,100\nresidual = true, false\n")
    grid = config.load_grid(p)
    assert grid == {"learning_rate": [0.001, 0.01], "batch_size": [50, 100], "residual": [True, False]}


@pytest.mark.parametrize("text", ["lr = 0.1\n", "output_dir = a, b\n", "", "epochs = ,\n"])
def test_grid_file_errors(tmp_path, text):
    p = tmp_path / "grid.txt"
    p.write_text(text)
    with pytest.raises(ConfigError):
        config.load_grid(p)


def test_data_path_relative_to_config(tmp_path):
    cfg = config.loads("data_path = data/uci\n")
    assert config.resolve_data_path(cfg, tmp_path / "exp.cfg") == tmp_path / "data" / "uci"


def test_shorthand_conflict():
    with pytest.raises(ConfigError, match="conflicts"):
        config.loads("architecture = 2x2\nresidual_blocks = 3\n")

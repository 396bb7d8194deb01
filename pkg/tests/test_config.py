import dataclasses
from pathlib import Path

import pytest

from serpent.config import (
    KEY_DOCS,
    MismatchError,
    SECTIONS,
    check_echo,
    default_config,
    describe_keys,
    load_config,
)
from serpent.harness import DataError

REPO = Path(__file__).resolve().parent.parent


def test_canonical_example_parses():
    cfg = load_config(REPO / "configs" / "deblur64.toml")
    assert cfg.model.patch_size == 4
    assert cfg.model.num_scales == 2
    assert cfg.train.epochs == 20
    assert cfg.degrade.kernel_size == 9
    assert cfg.paths.out_dir == "runs/deblur64"


def test_defaults_without_file():
    cfg = load_config()
    assert cfg == default_config()
    assert cfg.train.learning_rate == pytest.approx(5e-4)
    assert cfg.degrade.noise_sigma == pytest.approx(0.05)


def test_precedence_file_then_cli(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("[train]\nepochs = 7\nseed = 3\n")
    cfg = load_config(f, ["train.epochs=9", "model.patch_size=2"])
    assert cfg.train.epochs == 9      # cli beats file
    assert cfg.train.seed == 3        # file beats default
    assert cfg.model.patch_size == 2


def test_unknown_section_and_key(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("[nope]\nx = 1\n")
    with pytest.raises(DataError, match="unknown config section"):
        load_config(f)
    f.write_text("[train]\nepochz = 1\n")
    with pytest.raises(DataError, match="unknown config key"):
        load_config(f)
    with pytest.raises(DataError, match="unknown config key"):
        load_config(None, ["train.epochz=1"])
    with pytest.raises(DataError, match="section.key"):
        load_config(None, ["epochs=1"])
    with pytest.raises(DataError, match="form"):
        load_config(None, ["train.epochs"])


def test_type_coercion_errors(tmp_path):
    with pytest.raises(DataError, match="integer"):
        load_config(None, ["train.epochs=2.5"])
    with pytest.raises(DataError, match="true/false"):
        load_config(None, ["degrade.clamp=maybe"])
    cfg = load_config(None, ["degrade.clamp=false", "train.learning_rate=1e-3"])
    assert cfg.degrade.clamp is False
    assert cfg.train.learning_rate == pytest.approx(1e-3)


def test_invalid_values_are_data_errors():
    with pytest.raises(DataError):
        load_config(None, ["degrade.kernel_size=4"])
    with pytest.raises(DataError):
        load_config(None, ["model.patch_size=3"])


def test_missing_config_file():
    with pytest.raises(DataError, match="not found"):
        load_config("/nonexistent/config.toml")


def test_describe_keys_covers_every_field():
    text = describe_keys()
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            assert f"{section}.{f.name}" in text
            assert f"{section}.{f.name}" in KEY_DOCS


def test_check_echo_names_differing_field():
    cfg = default_config()
    echo = dict(cfg.model.__dict__)
    check_echo(cfg.model, echo)  # identical passes
    echo["patch_size"] = 2
    with pytest.raises(MismatchError, match="model.patch_size"):
        check_echo(cfg.model, echo)

import json

import pytest

from msved.common.config import (
    Interleave,
    TrainingConfig,
    TrainingMode,
    read_config_file,
    resolve_config,
    worker_threads,
)
from msved.common.errors import ConfigurationError, ParseError


def test_defaults():
    config = TrainingConfig()
    assert config.mode is TrainingMode.SD_SUP
    assert (config.lambda_m, config.beta, config.alpha) == (0.2, 0.4, 0.8)
    assert config.batch_size == 32 and config.beam_size == 8 and config.patience == 10
    assert not config.schedules_resolved


@pytest.mark.parametrize("raw", ["semi-sup", "SEMI_SUP", " Semi-Sup "])
def test_mode_parsing(raw):
    assert TrainingMode.parse(raw) is TrainingMode.SEMI_SUP


def test_unknown_mode_lists_the_valid_ones():
    with pytest.raises(ConfigurationError) as info:
        TrainingMode.parse("semi")
    assert "sd-sup" in str(info.value)


@pytest.mark.parametrize(
    "changes",
    [{"beta": 1.0}, {"lambda_m": -0.1}, {"alpha": -1.0}, {"tau_min": 2.0}, {"batch_size": 0},
     {"interleave": "sometimes"}, {"patience": 0}, {"grad_clip_norm": 0.0}],
)
def test_invalid_values_are_rejected(changes):
    with pytest.raises(ConfigurationError):
        TrainingConfig(**changes)


def test_dict_round_trip_and_hash():
    config = TrainingConfig(mode="bd-sup", interleave="joint", seed=7)
    raw = config.to_dict()
    assert raw["mode"] == "bd-sup" and raw["interleave"] == "joint"
    json.dumps(raw)
    again = TrainingConfig.from_dict(raw)
    assert again == config
    assert again.config_hash() == config.config_hash()
    assert config.override(seed=8).config_hash() != config.config_hash()


def test_from_dict_coerces_strings():
    config = TrainingConfig.from_dict(
        {"batch_size": "16", "beta": "0.25", "checked": "yes", "ramp_steps": "none", "interleave": "joint"}
    )
    assert config.batch_size == 16 and config.beta == 0.25 and config.checked is True
    assert config.ramp_steps is None and config.interleave is Interleave.JOINT


def test_from_dict_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigurationError, match="Unknown config keys: colour"):
        TrainingConfig.from_dict({"colour": "red"})
    with pytest.raises(ConfigurationError):
        TrainingConfig.from_dict({"batch_size": "many"})
    with pytest.raises(ConfigurationError):
        TrainingConfig.from_dict({"batch_size": 2.5})


def test_override_ignores_unset_flags():
    config = TrainingConfig(seed=3)
    assert config.override(seed=None, max_epochs=None) is config
    assert config.override(max_epochs=4).max_epochs == 4


def test_resolve_schedules_keeps_explicit_values():
    config = TrainingConfig(ramp_steps=5, tau_rate=0.5).resolve_schedules(steps_per_epoch=1000)
    assert (config.ramp_steps, config.tau_rate) == (5, 0.5)
    resolved = TrainingConfig(ramp_epochs=1.5).resolve_schedules(steps_per_epoch=10)
    assert resolved.ramp_steps == 15 and resolved.schedules_resolved


def test_read_config_file_formats(tmp_path):
    kv = tmp_path / "run.cfg"
    kv.write_text("# comment\nmode = semi-sup\n\nbeta=0.3  # trailing\n")
    assert read_config_file(kv) == {"mode": "semi-sup", "beta": "0.3"}

    js = tmp_path / "run.json"
    js.write_text(json.dumps({"alpha": 0.5}))
    assert read_config_file(js) == {"alpha": 0.5}

    bad = tmp_path / "bad.cfg"
    bad.write_text("mode semi-sup\n")
    with pytest.raises(ConfigurationError, match="bad.cfg:1"):
        read_config_file(bad)
    with pytest.raises(ConfigurationError):
        read_config_file(tmp_path / "missing.cfg")


def test_flags_override_the_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed=5\nmax_epochs=3\n")
    config = resolve_config(path, seed=9, batch_size=None)
    assert config.seed == 9 and config.max_epochs == 3 and config.batch_size == 32


def test_worker_threads(monkeypatch):
    monkeypatch.delenv("MSVED_THREADS", raising=False)
    assert worker_threads() == 1
    monkeypatch.setenv("MSVED_THREADS", "0")
    assert worker_threads() == 1
    monkeypatch.setenv("MSVED_THREADS", "four")
    with pytest.raises(ConfigurationError):
        worker_threads()


def test_parse_error_names_its_location():
    error = ParseError("expected 3 fields", "train.tsv", 12)
    assert str(error) == "train.tsv:12: expected 3 fields"
    assert str(ParseError("empty")) == "empty"

import pytest

from secagglab.config import MNIST_2NN_PARAMETERS, PRESETS, ExperimentConfig, load_config, parse_config
from secagglab.errors import ConfigurationError
from secagglab.simnet import NO_DROPOUTS


def test_parse_with_comments_and_dashes():
    cfg = parse_config("""
    # a run
    protocol = secagg   # baseline
    clients = 12
    key-size-bits = 2048
    scale = 1024
    """)
    assert (cfg.protocol, cfg.clients, cfg.key_size_bits, cfg.scale) == ("secagg", 12, 2048, 1024.0)
    assert cfg.rounds == ExperimentConfig().rounds


@pytest.mark.parametrize("text, fragment", [
    ("colour = blue", "unknown key"),
    ("clients 10", "expected key = value"),
    ("clients = ten", "expected a number"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        parse_config(text)


def test_model_dimension():
    assert ExperimentConfig(model="2nn-mnist-shape").dimension == MNIST_2NN_PARAMETERS == 199_210
    assert ExperimentConfig(model="synthetic:7").dimension == 7
    with pytest.raises(ConfigurationError):
        ExperimentConfig(model="resnet").dimension


def test_validate_lists_every_problem():
    cfg = ExperimentConfig(protocol="accessfl", clients=4, rounds=0, key_size_bits=7, prg_profile="x")
    with pytest.raises(ConfigurationError) as info:
        cfg.validate()
    text = str(info.value)
    for key in ("clients", "rounds", "key_size_bits", "prg_profile"):
        assert key in text


def test_validate_headroom():
    with pytest.raises(ConfigurationError, match="scale/clip_range"):
        ExperimentConfig(clients=600).validate()


def test_two_clients_allowed_for_baselines():
    ExperimentConfig(protocol="fedavg", clients=2).validate()


def test_presets_validate():
    for cfg in PRESETS.values():
        cfg.validate()
    cfg, base = load_config("preset:reference-tables")
    assert (cfg.clients, cfg.rounds, cfg.price_key_bits, cfg.price_dimension) == (100, 100, 2048, 199_210)
    assert base is None
    with pytest.raises(ConfigurationError):
        load_config("preset:nope")


def test_load_file_and_relative_schedule(tmp_path):
    (tmp_path / "drops.txt").write_text("drop 2: 3\n")
    (tmp_path / "exp.conf").write_text("clients = 8\ndropout_schedule = drops.txt\n")
    cfg, base = load_config(str(tmp_path / "exp.conf"))
    assert cfg.schedule(base).failing(2) == {3}
    assert ExperimentConfig().schedule() is NO_DROPOUTS


def test_missing_files():
    with pytest.raises(ConfigurationError):
        load_config("/nonexistent/exp.conf")
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dropout_schedule="/nonexistent/drops").schedule()


def test_protocol_options():
    assert ExperimentConfig(protocol="fedavg").protocol_options() == {}
    assert set(ExperimentConfig().protocol_options()) == {"prg_profile", "history_mode", "max_retries"}

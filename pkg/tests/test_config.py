import pytest

from fedgraph_fdia.config import ConfigError, RunConfig, format_config, load_config, parse_config


def test_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.model.lstm_units == (32, 32) and cfg.model.gcn_units == (128, 128, 1)
    assert cfg.train.batch_size == 64 and cfg.train.local_epochs == 1
    assert cfg.n_samples == 8752 and cfg.window == 24


def test_round_trip_defaults():
    cfg = RunConfig()
    assert parse_config(format_config(cfg)) == cfg


def test_round_trip_custom(tmp_path):
    text = """
[grid]
case = ieee118
[data]
window = 6        ; short windows
samples = auto
[attack]
kinds = replay, scale
delta = 3
scale_choices = 0.5, 1.5
[model]
lstm_units = 4, 5
gcn_units = 7, 1
[train]
rounds = 3
gcn_lr = 0.25
gcn_optimizer = adam
[fed_mlp]
hidden = 3
server_lr = 1.0
[compare]
methods = fedgraph, fed_mlp
"""
    cfg = parse_config(text)
    assert cfg.case == "ieee118" and cfg.window == 6 and cfg.n_samples is None
    assert cfg.attack.kinds == ("replay", "scale") and cfg.attack.scale_choices == (0.5, 1.5)
    assert cfg.model.gcn_units == (7, 1) and cfg.train.gcn_lr == 0.25
    assert cfg.fed_mlp.hidden == (3,) and cfg.fed_mlp.server_lr == 1.0
    assert cfg.methods == ("fedgraph", "fed_mlp")
    path = tmp_path / "run.ini"
    path.write_text(format_config(cfg))
    assert load_config(path) == cfg
    assert format_config(load_config(path)) == format_config(cfg)


def test_float_values_survive_exactly():
    cfg = parse_config("[train]\nlr_local = 0.1\nlr_server = 3e-4\n")
    back = parse_config(format_config(cfg))
    assert back.train.lr_local == 0.1 and back.train.lr_server == 3e-4


def test_with_seed():
    cfg = RunConfig().with_seed(9)
    assert {cfg.profile_seed, cfg.data_seed, cfg.partition_seed, cfg.train.seed,
            cfg.fed_lstm.seed, cfg.fed_mlp.seed} == {9}


@pytest.mark.parametrize("text", [
    "[grdi]\ncase = ieee57\n",
    "[train]\nlearning_rate = 0.1\n",
    "[data]\nwindow = many\n",
    "[data]\nwindow = 0\n",
    "[data]\ntest_ratio = 1.0\n",
    "[partition]\nnum_clients = 0\n",
    "[eval]\nthreshold = 1.5\n",
    "[compare]\nmethods = fedgraph, fed_gru\n",
    "[grid]\ncase = /no/such/file.case\n",
    "[profile]\nsource = /no/such/load.csv\n",
    "[train]\nlr_local = -1\n",
    "[train]\ngcn_optimizer = rmsprop\n",
    "[attack]\nattack_fraction = 2\n",
    "[model]\nlstm_units = 0\n",
    "[fed_lstm]\nhidden = 4, 0\n",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_case_file_path(tmp_path):
    from conftest import TRIANGLE
    path = tmp_path / "tri.case"
    path.write_text(TRIANGLE)
    assert parse_config(f"[grid]\ncase = {path}\n").case == str(path)

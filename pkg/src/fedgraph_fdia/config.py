"""Run configuration: an INI file with one section per pipeline stage.

Grammar (``configparser`` syntax; lists are comma separated; every key is
optional and falls back to the default shown)::

    [grid]       case = ieee57                 ; bundled name or path to a case file
    [profile]    source = synthetic            ; "synthetic" or a CSV path
                 seed = 1
    [data]       window = 24
                 samples = 8752                ; omit or "auto" to use every window
                 test_ratio = 0.2
                 seed = 0
    [attack]     attack_fraction = 0.5
                 kinds = random_uniform, random_gaussian, replay, scale
                 uniform_low = -0.1
                 uniform_high = 0.1
                 sigma_z = 1.0
                 delta = 12
                 scale_choices = 0.8, 1.2
                 target_fraction = 0.3
    [partition]  num_clients = 4
                 seed = 0
    [model]      lstm_units = 32, 32
                 gcn_units = 128, 128, 1
    [train]      rounds, lr_local, lr_server, gcn_lr (or "none"), gcn_optimizer,
                 batch_size, local_epochs, participation, threads, seed
    [fed_lstm]   rounds, lr_local, server_lr, hidden, batch_size, local_epochs, seed
    [fed_mlp]    same keys as [fed_lstm]
    [eval]       threshold = 0.5
    [compare]    methods = fedgraph, fed_lstm, fed_mlp
    [output]     dir = runs

Unknown sections or keys are rejected so typos do not silently fall back to
defaults. :func:`format_config` writes every resolved value, so a manifest
echoed by any command reloads to the same :class:`RunConfig`.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .baselines import BaselineConfig
from .data import AttackConfig
from .federated.trainer import TrainConfig
from .grid import BUNDLED_CASES
from .model import HybridConfig


class ConfigError(ValueError):
    pass


METHODS = ("fedgraph", "fed_lstm", "fed_mlp")


@dataclass(frozen=True)
class RunConfig:
    case: str = "ieee57"
    profile_source: str = "synthetic"
    profile_seed: int = 1
    window: int = 24
    n_samples: int | None = 8752
    test_ratio: float = 0.2
    data_seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)
    num_clients: int = 4
    partition_seed: int = 0
    model: HybridConfig = field(default_factory=HybridConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fed_lstm: BaselineConfig = field(default_factory=lambda: BaselineConfig("fed_lstm"))
    fed_mlp: BaselineConfig = field(default_factory=lambda: BaselineConfig("fed_mlp"))
    threshold: float = 0.5
    methods: tuple[str, ...] = METHODS
    out_dir: str = "runs"

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.n_samples is not None and self.n_samples < 1:
            raise ConfigError("samples must be >= 1")
        if not 0 <= self.test_ratio < 1:
            raise ConfigError("test_ratio must lie in [0, 1)")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ConfigError(f"methods must be drawn from {METHODS}")
        if self.case not in BUNDLED_CASES and not Path(self.case).is_file():
            raise ConfigError(f"grid case {self.case!r} is neither bundled nor an existing file")
        if self.profile_source != "synthetic" and not Path(self.profile_source).is_file():
            raise ConfigError(f"profile CSV {self.profile_source!r} does not exist")

    def with_seed(self, seed):
        """Override every seed with ``seed`` (the ``--seed`` flag)."""
        return replace(self, profile_seed=seed, data_seed=seed, partition_seed=seed,
                       train=replace(self.train, seed=seed),
                       fed_lstm=replace(self.fed_lstm, seed=seed),
                       fed_mlp=replace(self.fed_mlp, seed=seed))

    def baseline(self, kind) -> BaselineConfig:
        return self.fed_lstm if kind == "fed_lstm" else self.fed_mlp


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _strs(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _opt_float(text):
    return None if text.strip().lower() in ("none", "") else float(text)


def _opt_int(text):
    return None if text.strip().lower() in ("none", "auto", "") else int(text)


_TRAIN_KEYS = {"rounds": int, "lr_local": float, "lr_server": float, "gcn_lr": _opt_float,
               "gcn_optimizer": str, "batch_size": int, "local_epochs": int,
               "participation": float, "threads": int, "seed": int}
_BASELINE_KEYS = {"rounds": int, "lr_local": float, "server_lr": _opt_float, "hidden": _ints,
                  "batch_size": int, "local_epochs": int, "seed": int}
_ATTACK_KEYS = {"attack_fraction": float, "kinds": _strs, "uniform_low": float,
                "uniform_high": float, "sigma_z": float, "delta": int,
                "scale_choices": _floats, "target_fraction": float}
_SCHEMA = {
    "grid": {"case": str},
    "profile": {"source": str, "seed": int},
    "data": {"window": int, "samples": _opt_int, "test_ratio": float, "seed": int},
    "attack": _ATTACK_KEYS,
    "partition": {"num_clients": int, "seed": int},
    "model": {"lstm_units": _ints, "gcn_units": _ints},
    "train": _TRAIN_KEYS,
    "fed_lstm": _BASELINE_KEYS,
    "fed_mlp": _BASELINE_KEYS,
    "eval": {"threshold": float},
    "compare": {"methods": _strs},
    "output": {"dir": str},
}


def _read_sections(parser):
    out = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values = {}
        for key, raw in parser.items(section):
            conv = _SCHEMA[section].get(key)
            if conv is None:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values[key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
        out[section] = values
    return out


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    s = _read_sections(parser)
    get = lambda sec, key, default: s.get(sec, {}).get(key, default)
    d = RunConfig.__dataclass_fields__
    try:
        attack = AttackConfig(**s.get("attack", {}))
        model = HybridConfig(**s.get("model", {}))
        train = TrainConfig(**s.get("train", {}))
        fed_lstm = BaselineConfig("fed_lstm", **s.get("fed_lstm", {}))
        fed_mlp = BaselineConfig("fed_mlp", **s.get("fed_mlp", {}))
        return RunConfig(
            case=get("grid", "case", d["case"].default),
            profile_source=get("profile", "source", d["profile_source"].default),
            profile_seed=get("profile", "seed", d["profile_seed"].default),
            window=get("data", "window", d["window"].default),
            n_samples=get("data", "samples", d["n_samples"].default),
            test_ratio=get("data", "test_ratio", d["test_ratio"].default),
            data_seed=get("data", "seed", d["data_seed"].default),
            attack=attack,
            num_clients=get("partition", "num_clients", d["num_clients"].default),
            partition_seed=get("partition", "seed", d["partition_seed"].default),
            model=model, train=train, fed_lstm=fed_lstm, fed_mlp=fed_mlp,
            threshold=get("eval", "threshold", d["threshold"].default),
            methods=get("compare", "methods", METHODS),
            out_dir=get("output", "dir", d["out_dir"].default),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    """Every resolved value in INI form; :func:`parse_config` inverts it."""
    sections = {
        "grid": {"case": cfg.case},
        "profile": {"source": cfg.profile_source, "seed": cfg.profile_seed},
        "data": {"window": cfg.window, "samples": cfg.n_samples, "test_ratio": cfg.test_ratio,
                 "seed": cfg.data_seed},
        "attack": {k: getattr(cfg.attack, k) for k in _ATTACK_KEYS},
        "partition": {"num_clients": cfg.num_clients, "seed": cfg.partition_seed},
        "model": {"lstm_units": cfg.model.lstm_units, "gcn_units": cfg.model.gcn_units},
        "train": {k: getattr(cfg.train, k) for k in _TRAIN_KEYS},
        "fed_lstm": {k: getattr(cfg.fed_lstm, k) for k in _BASELINE_KEYS},
        "fed_mlp": {k: getattr(cfg.fed_mlp, k) for k in _BASELINE_KEYS},
        "eval": {"threshold": cfg.threshold},
        "compare": {"methods": cfg.methods},
        "output": {"dir": cfg.out_dir},
    }
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        lines += [f"{k} = {_fmt(v)}" for k, v in values.items()]
        lines.append("")
    return "\n".join(lines)


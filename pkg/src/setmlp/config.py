"""Experiment configuration: INI-style file with sections, plus presets.

Example file::

    [data]
    path = data/cll_sub_111.csv
    label_column = -1
    has_header = true

    [network]
    preset = cll-sub-111
    epochs = 200

    [experiment]
    trials = 5
    output_dir = runs/cll

Keys map one-to-one onto :class:`ExperimentConfig` fields. A ``[data]``
section without ``path`` generates synthetic data from the ``synth_*`` keys.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import SplitSpec
from .network import NetworkConfig
from .topology import TopologyParams

# Hidden widths, learning rate and batch size used for the four microarray sets.
PRESETS = {
    "leukemia": {"hidden": (27500, 27500), "learning_rate": 0.005, "batch_size": 5},
    "cll-sub-111": {"hidden": (9000, 9000), "learning_rate": 0.01, "batch_size": 5},
    "smk-can-187": {"hidden": (16000, 16000), "learning_rate": 0.005, "batch_size": 5},
    "gli-85": {"hidden": (20000,), "learning_rate": 0.005, "batch_size": 1},
}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    # data source
    data_path: str | None = None
    label_column: str = "-1"
    has_header: bool = False
    synth_samples: int = 150
    synth_features: int = 1000
    synth_classes: int = 3
    synth_informative: int = 30
    synth_noise: float = 1.0
    synth_class_sep: float = 1.0
    synth_seed: int = 0
    # split / preprocessing
    train_fraction: float = 2 / 3
    stratified: bool = True
    split_seed: int = 0
    scaling: str = "minmax"
    # network
    hidden: tuple = (1000, 1000)
    epsilon: float = 10.0
    zeta: float = 0.3
    regrow_sigma: float = 0.01
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0002
    batch_size: int = 5
    epochs: int = 500
    dropout_rate: float = 0.0
    evolution: bool = True
    evolution_impl: str = "v2"
    hidden_activation: str = "relu"
    dtype: str = "float64"
    # experiment
    trials: int = 1
    seed: int = 0
    output_dir: str = "run"
    parallel_trials: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.data_path is not None and not Path(self.data_path).exists():
            raise ConfigError("data_path", f"file not found: {self.data_path}")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if self.parallel_trials < 1:
            raise ConfigError("parallel_trials", "must be >= 1")
        if self.scaling not in ("minmax", "zscore", "none"):
            raise ConfigError("scaling", "must be minmax, zscore or none")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        try:
            self.split_spec()
            TopologyParams(self.epsilon, self.zeta, self.regrow_sigma, 0)
            self.network_config(2, 2, 0)
        except ValueError as exc:
            raise ConfigError("network" if "split" not in str(exc) else "split", str(exc)) from None
        return self

    def split_spec(self) -> SplitSpec:
        try:
            return SplitSpec(self.train_fraction, self.stratified, self.split_seed)
        except ValueError as exc:
            raise ConfigError("train_fraction", str(exc)) from None

    def network_config(self, n_features: int, n_classes: int, seed: int) -> NetworkConfig:
        return NetworkConfig(
            layer_widths=(n_features, *self.hidden, n_classes),
            topology=TopologyParams(self.epsilon, self.zeta, self.regrow_sigma, seed),
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            dropout_rate=self.dropout_rate,
            evolution_enabled=self.evolution,
            evolution_impl=self.evolution_impl,
            hidden_activation=self.hidden_activation,
            dtype=self.dtype,
        )

    def apply(self, values: dict) -> "ExperimentConfig":
        """Set fields from string or typed values, applying ``preset`` first."""
        values = dict(values)
        preset = values.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            for k, v in PRESETS[preset].items():
                setattr(self, k, v)
        types = {f.name: f.type for f in dataclasses.fields(self)}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in types:
                raise ConfigError(key, "unknown configuration key")
            setattr(self, key, _coerce(key, types[key], raw))
        return self


def _coerce(key, type_name, raw):
    if not isinstance(raw, str):
        return tuple(raw) if type_name == "tuple" else raw
    raw = raw.strip()
    try:
        if type_name == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        if type_name == "tuple":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if type_name == "str | None":
            return raw or None
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type_name}") from None


_SECTION_ALIASES = {"path": "data_path"}


def read_config(path) -> dict:
    """Flatten an INI config file into a ``{field: string}`` dict."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError("config", f"cannot read {path}")
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[_SECTION_ALIASES.get(key, key)] = value
    return out


def write_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["experiment"] = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        parser["experiment"][f.name] = " ".join(map(str, v)) if isinstance(v, tuple) else str(v)
    with open(path, "w") as fh:
        parser.write(fh)

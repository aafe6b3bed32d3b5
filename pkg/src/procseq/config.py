"""Run configuration read from INI files.

Precedence, lowest to highest: dataclass defaults, the ``--config`` file,
explicit command-line flags.

Example::

    [data]
    log = helpdesk.csv
    label_rule = max_state_changes:25
    split_ratio = 0.8

    [model]
    kind = mann
    hidden = 100
    memory_slots = 5

    [train]
    task = suffix
    epochs = 300
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dcwmann import DCwMANNConfig
from .eventlog import CsvSchema
from .extmem import MemoryConfig

TASKS = ("next", "suffix")
MODEL_KINDS = ("mann", "lstm", "gru", "knn")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    log: str | None = None
    test_log: str | None = None
    case_column: str = "case_id"
    activity_column: str = "activity"
    timestamp_column: str = "timestamp"
    resource_column: str | None = None
    timestamp_format: str | None = None
    label_rule: str = "none"
    filter: str = "all"
    split_ratio: float = 0.8
    split_seed: int = 0
    min_prefix: int = 4
    val_ratio: float = 0.1

    def schema(self) -> CsvSchema:
        return CsvSchema(self.case_column, self.activity_column, self.timestamp_column,
                         self.resource_column, self.timestamp_format)


@dataclass
class ModelConfig:
    kind: str = "mann"
    hidden: int = 100
    memory_slots: int = 5
    memory_width: int = 20
    read_heads: int = 1
    max_decode_len: int | None = None  # None: longest training trace + 1
    time_head: bool = True
    k: int = 1


@dataclass
class TrainConfig:
    task: str = "next"
    epochs: int = 300
    batch: int = 16
    patience: int = 10
    lr: float = 0.001
    lam: float = 1.0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out: str = "out"

    def validate(self) -> None:
        if self.train.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.train.task!r}")
        if self.model.kind not in MODEL_KINDS:
            raise ConfigError(f"model kind must be one of {MODEL_KINDS}, got {self.model.kind!r}")
        if self.train.epochs < 0 or self.train.batch < 1 or self.model.k < 1:
            raise ConfigError("epochs must be >= 0, batch and k >= 1")

    def mann_config(self, input_dim: int, vocab_size: int, longest_trace: int = 49) -> DCwMANNConfig:
        m = self.model
        return DCwMANNConfig(
            input_dim=input_dim,
            vocab_size=vocab_size,
            memory=MemoryConfig(N=m.memory_slots, W=m.memory_width, R=m.read_heads),
            controller_hidden=m.hidden,
            time_head=m.time_head,
            max_decode_len=m.max_decode_len or longest_trace + 1,
        )

    def to_dict(self) -> dict:
        # the output directory is left out so reruns elsewhere stay byte-identical
        d = asdict(self)
        d.pop("out")
        return d


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig}


def _coerce(raw: str, annotation: str, name: str):
    # annotations are strings here (postponed evaluation)
    text = raw.strip()
    if "None" in annotation and text.lower() in ("", "none"):
        return None
    base = annotation.split("|")[0].strip()
    try:
        if base == "bool":
            return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return text


def load_config(path: str | Path | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section in parser.sections():
        if section == "run":
            target = cfg
        elif section in _SECTIONS:
            target = getattr(cfg, section)
        else:
            raise ConfigError(f"unknown config section [{section}]")
        known = {f.name: f for f in fields(target) if f.name not in _SECTIONS}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            setattr(target, key, _coerce(raw, str(known[key].type), f"{section}.{key}"))
    cfg.validate()
    return cfg


def apply_overrides(cfg: RunConfig, **flags) -> RunConfig:
    """Set config keys from flags that were actually given (not None)."""
    targets = {
        "seed": (cfg, "seed"), "out": (cfg, "out"), "task": (cfg.train, "task"),
        "epochs": (cfg.train, "epochs"), "model": (cfg.model, "kind"), "k": (cfg.model, "k"),
        "max_decode_len": (cfg.model, "max_decode_len"), "log": (cfg.data, "log"),
    }
    for name, value in flags.items():
        if value is None:
            continue
        if name not in targets:
            raise ConfigError(f"no config key for flag {name!r}")
        obj, attr = targets[name]
        setattr(obj, attr, value)
    cfg.validate()
    return cfg

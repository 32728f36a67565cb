"""Experiment configuration: a flat ``key = value`` file.

Lists are comma separated. Any key can be overridden by an environment
variable ``FEDCMFS_<KEY>`` (upper case) and then by ``--override key=value``.

Example::

    dataset = data/chd49.csv
    format = csv
    data_kind = continuous
    label_count = 6
    n_clients = 3, 5, 10
    seeds = 0, 1, 2, 3, 4
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

ENV_PREFIX = "FEDCMFS_"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = "csv"
    data_kind: str = "continuous"
    label_count: int = 1
    dataset_name: str = ""
    train_path: str = ""
    test_path: str = ""
    test_fraction: float = 0.3
    split_seed: int = 0
    n_clients: list[int] = field(default_factory=lambda: [3])
    fraction_low: float = 0.4
    fraction_high: float = 0.6
    seeds: list[int] = field(default_factory=lambda: [0])
    alpha: float = 0.05
    k1: float = 0.3
    k2: float = 0.3
    max_cond: int = 3
    mlknn_k: int = 10
    mlknn_smoothing: float = 1.0
    out: str = "results"
    trace_messages: bool = False
    raw_coverage: bool = False
    fedcfr_pseudocode_variant: bool = False
    prefetch: bool = True
    cache_enabled: bool = True
    batch_size: int = 100
    n_workers: int = 1

    def validate(self) -> None:
        if not self.dataset and not (self.train_path and self.test_path):
            raise ConfigError("set `dataset`, or both `train_path` and `test_path`")
        if self.format not in ("csv", "arff"):
            raise ConfigError(f"format must be csv or arff, got {self.format!r}")
        if self.data_kind not in ("discrete", "continuous"):
            raise ConfigError(f"data_kind must be discrete or continuous, got {self.data_kind!r}")
        if self.label_count < 1:
            raise ConfigError("label_count must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not self.n_clients or min(self.n_clients) < 1:
            raise ConfigError("n_clients must list positive integers")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not 0 < self.fraction_low <= self.fraction_high <= 1:
            raise ConfigError("need 0 < fraction_low <= fraction_high <= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        for name in ("k1", "k2"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(
                    f"{name}={value} is out of range: must be in (0, 1], "
                    f"documented working range (0, 0.3]"
                )
        if self.max_cond < 1:
            raise ConfigError("max_cond must be >= 1")
        if self.mlknn_k < 1 or self.mlknn_smoothing <= 0:
            raise ConfigError("mlknn_k must be >= 1 and mlknn_smoothing > 0")
        if self.batch_size < 1 or self.n_workers < 1:
            raise ConfigError("batch_size and n_workers must be >= 1")

    @property
    def name(self) -> str:
        return self.dataset_name or Path(self.dataset or self.train_path).stem


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    f = _FIELDS.get(key)
    if f is None:
        raise ConfigError(f"unknown config key {key!r}")
    kind = f.type
    try:
        if kind == "bool":
            return _bool(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "list[int]":
            return _int_list(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None
    return raw.strip()


def parse_pairs(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"override {pair!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=(), environ=None) -> RunConfig:
    raw: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                           inline_comment_prefixes=("#",))
        try:
            text = Path(path).read_text(encoding="utf-8")
            parser.read_string("[run]\n" + text)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        raw.update(parser["run"])
    environ = os.environ if environ is None else environ
    for key in _FIELDS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            raw[key] = environ[env_key]
    raw.update(parse_pairs(overrides))
    cfg = RunConfig(**{k: _convert(k, v) for k, v in raw.items()})
    cfg.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in dataclasses.asdict(cfg).items():
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

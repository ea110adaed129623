"""Flat key-value configuration.

Config files are lines of `key = value` with `#` comments. Unknown keys are
rejected by name. Training keys mirror the trainer's contract; paper-scale
values (max_steps 50000, batch 24, lr 1e-5/1e-4, 8 relational layers) are
reachable by config, while the defaults are desk-scale.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    # downstream encoder
    enc_width: int = 64           # M
    enc_heads: int = 4
    base_layers: int = 2          # stand-in for the pretrained language model
    relation_layers: int = 2      # relation-aware layers; paper setting is 8
    dropout_encoder: float = 0.1
    max_input_len: int = 512
    # decoder
    dec_hidden: int = 128
    dec_emb: int = 48
    dropout_decoder: float = 0.3
    max_actions: int = 200
    beam: int = 3
    # frozen SQL encoder
    sql_width: int = 128          # N
    sql_layers: int = 4
    sql_heads: int = 4
    sql_max_len: int = 256
    sql_dropout: float = 0.1
    # pretraining
    pre_steps: int = 400
    pre_batch: int = 16
    pre_lr: float = 1e-3
    # training
    max_steps: int = 3000
    batch_size: int = 8
    lr_encoder: float = 5e-4      # embedding + base-layer group
    lr_rest: float = 1e-3         # relational layers, projection, decoder
    rdrop: bool = True
    grad_clip: float = 5.0
    seed: int = 13
    ckpt_every: int = 500
    # data
    value_cap: int = 5000
    use_values: bool = True


_FIELDS = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str, base: Config | None = None) -> Config:
    cfg = base or Config()
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        updates[key] = _coerce(key, raw)
    return replace(cfg, **updates)


def load_config(path: str | Path | None, overrides: dict | None = None) -> Config:
    cfg = Config()
    if path is not None:
        cfg = parse_config(Path(path).read_text(encoding="utf-8"), cfg)
    if overrides:
        bad = set(overrides) - set(_FIELDS)
        if bad:
            raise ConfigError(f"unknown config key: {sorted(bad)[0]}")
        cfg = replace(cfg, **overrides)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    if cfg.max_steps <= 0:
        raise ConfigError("max_steps must be positive")
    for key in ("dropout_encoder", "dropout_decoder", "sql_dropout"):
        v = getattr(cfg, key)
        if not 0.0 <= v < 1.0:
            raise ConfigError(f"{key} must be in [0, 1), got {v}")
    if cfg.enc_width % cfg.enc_heads != 0:
        raise ConfigError("enc_width must be divisible by enc_heads")
    if cfg.sql_width % cfg.sql_heads != 0:
        raise ConfigError("sql_width must be divisible by sql_heads")
    if cfg.beam < 1:
        raise ConfigError("beam must be >= 1")


def config_dict(cfg: Config) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(Config)}

"""Run configuration: JSON file, DEDUCT_<FIELD> environment overrides, then
CLI flag overrides, in that order. The seed is mandatory everywhere so every
run is reproducible."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .arith import OP_BY_SYMBOL, OpType
from .constraints import RuleSet, profile
from .errors import ConfigError

ENV_PREFIX = "DEDUCT_"


@dataclass
class RunConfig:
    seed: int | None = None
    # data
    raw_path: str | None = None          # preprocess / solve input
    train_path: str | None = None        # preprocessed JSONL
    dev_path: str | None = None
    data_path: str | None = None         # eval / explain input
    constants_path: str | None = None
    out_dir: str = "runs/latest"
    checkpoint: str | None = None
    # encoder
    encoder_kind: str = "bigru"
    encoder_layers: int = 2
    encoder_heads: int = 4
    encoder_mode: str = "trainable"
    embeddings_prefix: str | None = None
    dim: int = 64
    # reasoner
    ops: str = "+,-,-rev,*,/,/rev"
    rationalizer: str = "gru"
    dropout: float = 0.1
    t_max: int = 10
    topk: int = 5
    allow_pow_rev: bool = False
    # rules
    rule_profile: str = "default"
    forbid_same_pair: bool | None = None
    forbid_negative: bool | None = None
    # optimizer
    lr: float = 2e-5
    batch_size: int = 30
    weight_decay: float = 0.01
    epochs: int = 30
    l2_in_loss: bool = False
    early_stop_acc: float | None = None
    eval_every: int = 1
    # execution
    workers: int = 1

    def op_types(self) -> tuple[OpType, ...]:
        out = []
        for sym in self.ops.split(","):
            sym = sym.strip()
            if sym not in OP_BY_SYMBOL:
                raise ConfigError(f"unknown operation symbol {sym!r}")
            out.append(OP_BY_SYMBOL[sym])
        return tuple(out)

    def rules(self) -> RuleSet:
        base = profile(self.rule_profile)
        same = base.forbid_same_quantity_pair if self.forbid_same_pair is None else self.forbid_same_pair
        neg = base.forbid_negative_intermediate if self.forbid_negative is None else self.forbid_negative
        return RuleSet(forbid_same_quantity_pair=same, forbid_negative_intermediate=neg)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

_PATH_FIELDS = ("raw_path", "train_path", "dev_path", "data_path",
                "constants_path", "embeddings_prefix")


def _coerce(name: str, raw) -> object:
    if raw is None:
        return None
    f = _FIELDS[name]
    t = f.type
    if isinstance(raw, str):
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
        if "bool" in t:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"bad boolean for {name}: {raw!r}")
    return raw


def load_config(path: str | None = None, overrides: dict | None = None,
                require_seed: bool = True) -> RunConfig:
    values: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        for k, v in raw.items():
            if k not in _FIELDS:
                raise ConfigError(f"unknown config field {k!r} in {path}")
            values[k] = _coerce(k, v)
    for name in _FIELDS:
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            values[name] = _coerce(name, env)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _FIELDS:
            raise ConfigError(f"unknown config field {k!r}")
        values[k] = _coerce(k, v)
    cfg = RunConfig(**values)
    if require_seed and cfg.seed is None:
        raise ConfigError("seed is mandatory: set it in the config file, "
                          "DEDUCT_SEED, or --seed")
    for name in _PATH_FIELDS:
        p = getattr(cfg, name)
        if p is not None and name != "embeddings_prefix" and not Path(p).exists():
            raise ConfigError(f"{name} points to a missing file: {p}")
    if cfg.embeddings_prefix is not None:
        for suffix in (".manifest.json", ".bin"):
            if not Path(cfg.embeddings_prefix + suffix).exists():
                raise ConfigError(
                    f"embeddings_prefix is missing {cfg.embeddings_prefix + suffix}")
    return cfg


def code_version() -> str:
    """Hash of the package sources, recorded in run metadata."""
    pkg_dir = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(pkg_dir.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]

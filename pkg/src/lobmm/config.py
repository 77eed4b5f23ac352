"""Flat key/value run configuration (YAML) with exhaustive validation.

Every key is optional except ``train_data``.  ``LOBMM_OUTPUT_DIR`` and
``LOBMM_SEED`` override ``output_dir`` and ``seed``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Mapping, Optional, Union, get_args, get_origin, get_type_hints

import yaml

from .agents import TrainConfig
from .env import EnvConfig
from .errors import ConfigError


@dataclass
class RunConfig:
    instrument: str = "SYN-USD"
    fit_data: Optional[str] = None     # day used to fit the normalizer; defaults to train_data
    train_data: Optional[str] = None
    agent: str = "ppo"
    reward: str = "trade_completion"
    output_dir: str = "runs/default"
    seed: int = 0
    backend: Optional[str] = None
    # training
    gamma: float = 0.99
    learning_rate: float = 3e-4
    n_steps: Optional[int] = None
    training_steps: int = 10_000_000
    action_repeat: int = 5
    n_envs: int = 4
    clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantages: Optional[bool] = None
    adam_eps: float = 1e-5
    shared_width: int = 256
    head_width: int = 128
    activation: str = "tanh"
    checkpoint_interval: int = 100_000
    # environment
    window: int = 100
    feature_width: Optional[int] = None
    max_positions: int = 10
    lot_size: float = 1.0
    market_fee: float = 0.002
    rho: float = 0.01
    epsilon: float = 2.0
    varpi: float = 0.002
    ruin_threshold: Optional[float] = 0.05
    episode_length: Optional[int] = None
    random_start: bool = False

    def train_config(self) -> TrainConfig:
        d = asdict(self)
        d["algo"] = self.agent
        return TrainConfig.from_dict(d)

    def env_config(self) -> EnvConfig:
        names = {f.name for f in fields(EnvConfig)}
        return EnvConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> List[str]:
        errs = []
        if not self.train_data:
            errs.append("train_data is required")
        if self.agent not in ("a2c", "ppo"):
            errs.append(f"agent must be 'a2c' or 'ppo', got {self.agent!r}")
        if self.backend not in (None, "python", "compiled"):
            errs.append(f"backend must be 'python' or 'compiled', got {self.backend!r}")
        errs += [e for e in self.train_config().validate() if not e.startswith("algo")]
        errs += self.env_config().validate()
        return errs


def _check_type(name: str, value, hint) -> Optional[str]:
    optional = get_origin(hint) is Union and type(None) in get_args(hint)
    if value is None:
        return None if optional else f"{name} may not be empty"
    base = [a for a in get_args(hint) if a is not type(None)][0] if optional else hint
    if base is bool:
        ok = isinstance(value, bool)
    elif base is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif base is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, base)
    return None if ok else f"{name} must be {base.__name__}, got {type(value).__name__} {value!r}"


def build_config(values: Mapping, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Validate a flat mapping into a :class:`RunConfig`, listing every problem."""
    environ = os.environ if environ is None else environ
    hints = get_type_hints(RunConfig)
    values = dict(values)
    errs = []
    if "LOBMM_OUTPUT_DIR" in environ:
        values["output_dir"] = environ["LOBMM_OUTPUT_DIR"]
    if "LOBMM_SEED" in environ:
        try:
            values["seed"] = int(environ["LOBMM_SEED"])
        except ValueError:
            errs.append(f"LOBMM_SEED must be an integer, got {environ['LOBMM_SEED']!r}")
            values.pop("seed", None)
    clean = {}
    for key in sorted(values):
        if key not in hints:
            errs.append(f"unknown key {key!r}")
            continue
        value = values[key]
        if isinstance(value, (dict, list)):
            errs.append(f"{key} must be a scalar (the config is flat)")
            continue
        if isinstance(value, int) and not isinstance(value, bool) and hints[key] in (float, Optional[float]):
            value = float(value)
        msg = _check_type(key, value, hints[key])
        if msg:
            errs.append(msg)
            continue
        clean[key] = value
    cfg = RunConfig(**clean)
    if not errs:
        errs = cfg.validate()
    else:
        errs += [e for e in cfg.validate() if e.split()[0] not in {m.split()[0] for m in errs}]
    if errs:
        raise ConfigError(errs)
    return cfg


def load_config(path, environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a key/value mapping")
    cfg = build_config(raw, environ)
    base = path.parent
    for key in ("train_data", "fit_data"):
        value = getattr(cfg, key)
        if value and not Path(value).is_absolute():
            setattr(cfg, key, str(base / value))
    return cfg

# semid/config.py
"""
Global configuration and default values.

Precedence of the effective configuration of a command:
    dataclass defaults < TOML config file (--config) < explicit CLI flags
"""

from __future__ import annotations

import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional

from semid.errors import ConfigError


DEFAULT_SEED = 0

# Env var used as the default of --threads
THREADS_ENV = "RSID_THREADS"


@dataclass
class FamaeDefaults:
    """Encoder and optimizer defaults (embedding/hidden 128, 2 layers, 4 heads)."""
    dim: int = 128
    layers: int = 2
    heads: int = 4
    ffn: int = 512
    dropout: float = 0.1
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch: int = 256
    epochs: int = 500
    patience: int = 3
    negatives: int = 128
    full_softmax_max_vocab: int = 1024  # vocabularies up to this size never sample negatives
    max_len: int = 32
    stride: int = 1
    eval_k: int = 10
    field_weights: Optional[List[float]] = None  # alpha_k per field, None = all 1.0
    seed: int = DEFAULT_SEED


@dataclass
class QuantizeDefaults:
    method: str = "gaoq"          # gaoq | hkmeans | rqkmeans
    branching: Optional[List[int]] = None  # None = heuristic from N
    anchors: Optional[List[int]] = None    # None = auto (g_l = b_l)
    iters: int = 50
    target_prefix_population: int = 15
    seed: int = DEFAULT_SEED


@dataclass
class DiagnoseDefaults:
    bits: bool = False


@dataclass
class RunDefaults:
    threads: int = 1
    log_level: str = "INFO"
    log_file: Optional[str] = None  # JSON lines are also appended here


_SECTIONS = {
    "famae": FamaeDefaults,
    "quantize": QuantizeDefaults,
    "diagnose": DiagnoseDefaults,
    "run": RunDefaults,
}


@dataclass
class RunConfig:
    """Effective configuration of one command."""
    subcommand: str
    famae: FamaeDefaults = field(default_factory=FamaeDefaults)
    quantize: QuantizeDefaults = field(default_factory=QuantizeDefaults)
    diagnose: DiagnoseDefaults = field(default_factory=DiagnoseDefaults)
    run: RunDefaults = field(default_factory=RunDefaults)
    config_path: Optional[str] = None

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _apply_section(obj: Any, section: str, values: Mapping[str, Any], source: str) -> Any:
    known = {f.name for f in fields(obj)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) in [{section}]: {', '.join(unknown)}")
    return replace(obj, **dict(values))


def read_config_file(path: str) -> Dict[str, Dict[str, Any]]:
    """Reads a TOML config file and checks its sections."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown section(s): {', '.join(unknown)}")
    for name, body in data.items():
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: [{name}] must be a table")
    return data


def build_run_config(
    subcommand: str,
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
) -> RunConfig:
    """Merges defaults, the optional TOML file and CLI overrides (None = not given)."""
    cfg = RunConfig(subcommand=subcommand, config_path=config_path)
    layers: List[tuple[str, Mapping[str, Mapping[str, Any]]]] = []
    if config_path:
        layers.append((config_path, read_config_file(config_path)))
    if overrides:
        cleaned = {
            sec: {k: v for k, v in vals.items() if v is not None}
            for sec, vals in overrides.items()
        }
        layers.append(("command line", cleaned))
    for source, layer in layers:
        for section, values in layer.items():
            if section not in _SECTIONS:
                raise ConfigError(f"{source}: unknown section [{section}]")
            current = getattr(cfg, section)
            setattr(cfg, section, _apply_section(current, section, values, source))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    f = cfg.famae
    if f.dim < 1 or f.heads < 1 or f.dim % f.heads != 0:
        raise ConfigError(f"dim ({f.dim}) must be a positive multiple of heads ({f.heads})")
    if f.layers < 0 or f.ffn < 1:
        raise ConfigError("layers must be >= 0 and ffn >= 1")
    if not (0.0 <= f.dropout < 1.0):
        raise ConfigError("dropout must be in [0, 1)")
    if f.lr < 0 or f.weight_decay < 0:
        raise ConfigError("lr and weight_decay must be >= 0")
    if f.batch < 1 or f.epochs < 0 or f.patience < 1:
        raise ConfigError("batch >= 1, epochs >= 0 and patience >= 1 are required")
    if f.negatives < 0 or f.max_len < 2 or f.stride < 1:
        raise ConfigError("negatives >= 0, max_len >= 2 and stride >= 1 are required")
    q = cfg.quantize
    if q.method not in {"gaoq", "hkmeans", "rqkmeans"}:
        raise ConfigError(f"unknown method {q.method!r} (gaoq|hkmeans|rqkmeans)")
    if q.iters < 1:
        raise ConfigError("iters must be >= 1")
    if q.branching is not None and any(int(b) < 2 for b in q.branching):
        raise ConfigError("every branching factor must be >= 2")
    if q.anchors is not None:
        if q.branching is None or len(q.anchors) != len(q.branching):
            raise ConfigError("anchors needs one value per branching level")
        if any(int(g) < int(b) for g, b in zip(q.anchors, q.branching)):
            raise ConfigError("anchors must satisfy g_l >= b_l")
    if cfg.run.threads < 1:
        raise ConfigError("threads must be >= 1")

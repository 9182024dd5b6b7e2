"""
Konfigurácia tréningového behu (JSON). Schéma sa kontroluje pri načítaní: neznáme kľúče,
nesprávne typy aj hodnoty mimo rozsahu sú ConfigError.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from engine.model import ModelConfig
from engine.training import MODES, LoraSettings, OptimizerConfig
from exceptions import ConfigError

logger = logging.getLogger(__name__)

_NUMBER = (int, float)
_OPTIONAL_NUMBER = (int, float, type(None))

MODEL_SCHEMA = {
    "d_model": int, "n_layers": int, "n_heads": int, "vocab_size": int, "max_seq_len": int,
    "attention": str, "window": int, "embedding_layernorm": (bool, type(None)), "feedforward_mult": int,
    "norm_eps": _NUMBER, "rope_base": _NUMBER,
}
OPTIMIZER_SCHEMA = {
    "learning_rate": _NUMBER, "batch_size": int, "beta1": _NUMBER, "beta2": _NUMBER, "eps": _NUMBER,
    "warmup_ratio": _NUMBER, "weight_decay": _NUMBER, "max_length": int, "num_epochs": int,
    "grad_clip": _OPTIONAL_NUMBER, "log_every": int,
}
LORA_SCHEMA = {"rank": int, "alpha": _OPTIONAL_NUMBER, "dropout": _NUMBER, "targets": (list, type(None))}
DATA_SCHEMA = {
    "kind": str, "template": str, "val_fraction": _NUMBER, "n_examples": int, "length": int, "alphabet": str,
}
PATHS_SCHEMA = {"corpus": (str, type(None)), "checkpoint_dir": str, "run_log": str}
TOP_SCHEMA = {"seed": int, "precision": str, "model": dict, "optimizer": dict, "lora": (dict, type(None)),
              "data": dict, "paths": dict}


@dataclass(frozen=True)
class DataSettings:
    kind: str = "copy_task"
    template: str = "qa_instruction"
    val_fraction: float = 0.1
    n_examples: int = 64
    length: int = 6
    alphabet: str = "abcdefgh"


@dataclass(frozen=True)
class RunPaths:
    checkpoint_dir: Path
    run_log: Path
    corpus: Optional[Path] = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    optimizer: OptimizerConfig
    paths: RunPaths
    mode: str = "full"
    lora: Optional[LoraSettings] = None
    data: DataSettings = field(default_factory=DataSettings)
    seed: int = 0
    precision: str = "float32"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "precision": self.precision,
            "model": self.model.to_dict(),
            "optimizer": self.optimizer.__dict__.copy(),
            "lora": None if self.lora is None else {
                "rank": self.lora.rank, "alpha": self.lora.alpha, "dropout": self.lora.dropout,
                "targets": list(self.lora.targets) if self.lora.targets else None,
            },
            "data": self.data.__dict__.copy(),
            "paths": {k: (str(v) if v is not None else None) for k, v in self.paths.__dict__.items()},
        }


def _check(section: str, data: Any, schema: dict) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"config section '{section}' must be an object")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        raise ConfigError(f"config section '{section}': unknown keys {unknown}")
    for key, value in data.items():
        expected = schema[key]
        # bool je podtrieda int, v ciselnych poliach ho nepripustame
        if isinstance(value, bool) and bool not in (expected if isinstance(expected, tuple) else (expected,)):
            raise ConfigError(f"config '{section}.{key}' has the wrong type (bool)")
        if not isinstance(value, expected):
            raise ConfigError(f"config '{section}.{key}' has the wrong type ({type(value).__name__})")
    return data


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def parse_run_config(raw: dict, mode: str, base_dir: Path = Path(".")) -> RunConfig:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got '{mode}'")
    _check("<root>", raw, TOP_SCHEMA)
    model = ModelConfig.from_dict(_check("model", raw.get("model", {}), MODEL_SCHEMA))
    optimizer = OptimizerConfig.for_mode(mode, **_check("optimizer", raw.get("optimizer", {}), OPTIMIZER_SCHEMA))

    lora_raw = raw.get("lora")
    lora = None
    if lora_raw is not None or mode == "lora":
        values = dict(_check("lora", lora_raw or {}, LORA_SCHEMA))
        if values.get("targets") is not None:
            values["targets"] = tuple(values["targets"])
        lora = LoraSettings(**values)

    data = DataSettings(**_check("data", raw.get("data", {}), DATA_SCHEMA))
    if data.kind not in ("corpus", "copy_task"):
        raise ConfigError(f"data.kind must be 'corpus' or 'copy_task', got '{data.kind}'")
    if not 0.0 <= data.val_fraction < 1.0:
        raise ConfigError(f"data.val_fraction must lie in [0, 1), got {data.val_fraction}")

    paths_raw = _check("paths", raw.get("paths", {}), PATHS_SCHEMA)
    paths = RunPaths(
        checkpoint_dir=_resolve(base_dir, paths_raw.get("checkpoint_dir", "checkpoints")),
        run_log=_resolve(base_dir, paths_raw.get("run_log", "run_log.jsonl")),
        corpus=_resolve(base_dir, paths_raw.get("corpus")),
    )
    if data.kind == "corpus":
        if paths.corpus is None:
            raise ConfigError("data.kind 'corpus' needs paths.corpus")
        if not paths.corpus.is_file():
            raise ConfigError(f"paths.corpus does not exist: {paths.corpus}")

    precision = raw.get("precision", "float32")
    if precision not in ("float32", "float64"):
        raise ConfigError(f"precision must be 'float32' or 'float64', got '{precision}'")
    return RunConfig(model=model, optimizer=optimizer, paths=paths, mode=mode, lora=lora, data=data,
                     seed=raw.get("seed", 0), precision=precision)


def load_run_config(path: Path, mode: str = "full") -> RunConfig:
    """Načíta JSON konfiguráciu; relatívne cesty sú voči adresáru konfigurácie."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno}: {exc.msg}") from None
    try:
        return parse_run_config(raw, mode, base_dir=path.parent)
    except TypeError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc

"""
LoRA: paralelná nízkohodnostná vetva h_out = W_0 h_in + (alpha/r) W_up W_down h_in.

W_up [d×r] začína na nule, W_down [r×k] je gaussovská so std 1/sqrt(r), takže čerstvý
adaptér nemení výstup modelu. Dropout ide len na vstup vetvy a len pri tréningu.
"""
from __future__ import annotations

import copy
import fnmatch
import logging
from typing import Iterable, Optional, Sequence

import numpy as np

from engine import numerics as nx
from engine.model import DecoderModel
from engine.numerics import Tensor
from exceptions import ConfigError, DimensionError

logger = logging.getLogger(__name__)

DEFAULT_RANK = 128
DEFAULT_DROPOUT = 0.1


class LoraAdapter:
    def __init__(self, target: str, d: int, k: int, rank: int = DEFAULT_RANK, alpha: Optional[float] = None,
                 dropout: float = DEFAULT_DROPOUT, rng: Optional[np.random.Generator] = None, dtype=None):
        if rank < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
        if rank > min(d, k):
            raise ConfigError(f"LoRA rank {rank} exceeds min(d, k) = {min(d, k)} for '{target}'")
        alpha = float(rank if alpha is None else alpha)
        if alpha <= 0:
            raise ConfigError(f"LoRA alpha must be positive, got {alpha}")
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"LoRA dropout must be in [0, 1), got {dropout}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.target = target
        self.d, self.k = d, k
        self.rank = rank
        self.alpha = alpha
        self.dropout = dropout
        self.up = Tensor(np.zeros((d, rank)), requires_grad=True, name=f"{target}.lora_up", dtype=dtype)
        self.down = Tensor(rng.normal(0.0, rank ** -0.5, (rank, k)), requires_grad=True,
                           name=f"{target}.lora_down", dtype=dtype)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @property
    def param_count(self) -> int:
        return self.rank * (self.d + self.k)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return [(self.up.name, self.up), (self.down.name, self.down)]

    def hyperparams(self) -> dict:
        return {"rank": self.rank, "alpha": self.alpha, "dropout": self.dropout}

    def branch(self, x: Tensor, training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """(alpha/r) · dropout(x) W_down^T W_up^T pre riadky x [t×k]; ΔW sa nematerializuje."""
        if x.shape[-1] != self.k:
            raise DimensionError(f"LoRA '{self.target}': input {x.shape} does not match k={self.k}")
        h = nx.dropout(x, self.dropout, rng, training)
        low = nx.matmul(h, nx.transpose(self.down))
        return nx.scale(nx.matmul(low, nx.transpose(self.up)), self.scaling)

    def delta(self) -> np.ndarray:
        return self.scaling * (self.up.data.astype(np.float64) @ self.down.data.astype(np.float64))


def _as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def apply(adapter: LoraAdapter, w0, h_in, training: bool = False,
          rng: Optional[np.random.Generator] = None) -> Tensor:
    """h_out = W_0 h_in + (alpha/r) W_up (W_down h_in); h_in je vektor [k] alebo riadky [t×k]."""
    w0 = _as_tensor(w0, adapter.up.data.dtype)
    h = _as_tensor(h_in, w0.data.dtype)
    if w0.shape != (adapter.d, adapter.k):
        raise DimensionError(f"LoRA '{adapter.target}': W_0 {w0.shape} does not match ({adapter.d}, {adapter.k})")
    if h.shape[-1] != adapter.k:
        raise DimensionError(f"LoRA '{adapter.target}': h_in {h.shape} does not match k={adapter.k}")
    vector = h.ndim == 1
    rows = nx.reshape(h, (1, adapter.k)) if vector else h
    out = nx.matmul(rows, nx.transpose(w0)) + adapter.branch(rows, training=training, rng=rng)
    return nx.reshape(out, (adapter.d,)) if vector else out


def merge(adapter: LoraAdapter, w0) -> np.ndarray:
    """W_0 + (alpha/r) W_up W_down. Opakované zlúčenie pripočíta ΔW znova."""
    base = w0.data if isinstance(w0, Tensor) else np.asarray(w0)
    if base.shape != (adapter.d, adapter.k):
        raise DimensionError(f"LoRA '{adapter.target}': W_0 {base.shape} does not match ({adapter.d}, {adapter.k})")
    return (base.astype(np.float64) + adapter.delta()).astype(base.dtype)


def reduction_factor(d: int, k: int, r: int) -> float:
    """dk / (r(d+k)): koľkokrát menej trénovateľných parametrov má adaptér ako W_0."""
    if d < 1 or k < 1 or r < 1:
        raise ConfigError(f"reduction_factor needs positive d, k, r, got ({d}, {k}, {r})")
    factor = (d * k) / (r * (d + k))
    if factor <= 1.0:
        logger.warning("LoRA adapter with r=%d on a %dx%d weight is not smaller than the weight (factor %.3f)",
                       r, d, k, factor)
    return factor


def resolve_targets(model: DecoderModel, targets: Optional[Iterable[str]]) -> list[str]:
    """Mená lineárnych vrstiev; podporuje vzory typu 'layers.*.attn.q'."""
    if targets is None:
        return model.attention_projections()
    resolved: list[str] = []
    for pattern in targets:
        matched = [n for n in model.linear_names if fnmatch.fnmatchcase(n, pattern)]
        if not matched:
            raise ConfigError(f"unknown LoRA target '{pattern}'")
        for name in matched:
            if name not in resolved:
                resolved.append(name)
    return resolved


def attach(model: DecoderModel, targets: Optional[Sequence[str]] = None, rank: int = DEFAULT_RANK,
           alpha: Optional[float] = None, dropout: float = DEFAULT_DROPOUT, seed: int = 0) -> DecoderModel:
    """Zmrazí bázu a zaregistruje trénovateľné adaptéry (na mieste; vracia ten istý model)."""
    names = resolve_targets(model, targets)
    for name in names:
        if name in model.adapters:
            raise ConfigError(f"LoRA target '{name}' already has an adapter")
    model.set_trainable(False)
    rng = np.random.default_rng(seed)
    dtype = model.params["embed.weight"].data.dtype
    for name in names:
        d, k = model.params[f"{name}.weight"].shape
        model.adapters[name] = LoraAdapter(name, d, k, rank=rank, alpha=alpha, dropout=dropout, rng=rng,
                                           dtype=dtype)
    if names:
        trainable = sum(a.param_count for a in model.adapters.values())
        logger.info("attached %d LoRA adapters (r=%d), %d trainable parameters", len(names), rank, trainable)
    return model


def adapter_state(model: DecoderModel) -> dict[str, np.ndarray]:
    state = {}
    for adapter in model.adapters.values():
        for name, tensor in adapter.named_tensors():
            state[name] = tensor.data
    return state


def load_adapters(model: DecoderModel, specs: dict[str, dict], state: dict[str, np.ndarray]) -> DecoderModel:
    """Znovu pripojí adaptéry z checkpointu (hyperparametre + tenzory)."""
    for target, entry in sorted(specs.items()):
        if target not in model.linear_names:
            raise ConfigError(f"unknown LoRA target '{target}'")
        d, k = model.params[f"{target}.weight"].shape
        adapter = LoraAdapter(target, d, k, rank=int(entry["rank"]), alpha=float(entry["alpha"]),
                              dropout=float(entry["dropout"]), dtype=model.params[f"{target}.weight"].data.dtype)
        for name, tensor in adapter.named_tensors():
            if name not in state:
                raise ConfigError(f"adapter tensor '{name}' missing")
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise DimensionError(f"adapter tensor '{name}' has shape {value.shape}, expected {tensor.shape}")
            tensor.data = value.astype(tensor.data.dtype, copy=True)
        model.adapters[target] = adapter
    if specs:
        model.set_trainable(False)
    return model


def merge_model(model: DecoderModel) -> DecoderModel:
    """Nový model s adaptérmi zlúčenými do váh; bez réžie adaptérov pri inferencii."""
    merged = copy.deepcopy(model)
    for target, adapter in merged.adapters.items():
        weight = merged.params[f"{target}.weight"]
        weight.data = merge(adapter, weight)
    merged.adapters = {}
    merged.set_trainable(True)
    return merged

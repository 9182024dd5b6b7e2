"""
Malý dekodérový transformer s dvoma variantmi pozornosti:

* sliding_window - kauzálna pozornosť obmedzená na posledných W pozícií, rotačné pozície,
  SiLU vo feedforward vrstve, lineárne vrstvy bez biasu,
* alibi - kauzálna pozornosť s lineárnym biasom podľa vzdialenosti, layernorm hneď
  za embeddingom, GELU, lineárne vrstvy s biasom.

Model spracuje jednu sekvenciu tokenov; s RollingKVCache pokračuje od cache.next_pos.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from engine import numerics as nx
from engine.numerics import Tensor
from exceptions import ConfigError, ContractError, LengthError, TokenIndexError

if TYPE_CHECKING:
    from engine.kvcache import RollingKVCache
    from engine.lora import LoraAdapter

logger = logging.getLogger(__name__)

VARIANTS = ("sliding_window", "alibi")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    vocab_size: int = 259
    max_seq_len: int = 128
    attention: str = "sliding_window"
    window: int = 64
    embedding_layernorm: Optional[bool] = None
    feedforward_mult: int = 4
    norm_eps: float = 1e-5
    rope_base: float = 10000.0

    def __post_init__(self):
        for name in ("d_model", "n_heads", "vocab_size", "max_seq_len", "feedforward_mult"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.n_layers, int) or self.n_layers < 0:
            raise ConfigError(f"n_layers must be a non-negative integer, got {self.n_layers!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.attention not in VARIANTS:
            raise ConfigError(f"attention must be one of {VARIANTS}, got '{self.attention}'")
        if self.attention == "sliding_window":
            if self.window < 1:
                raise ConfigError(f"sliding window W must be >= 1, got {self.window}")
            if self.head_dim % 2:
                raise ConfigError(f"rotary positions need an even head dimension, got {self.head_dim}")
        if self.norm_eps <= 0:
            raise ConfigError(f"norm_eps must be positive, got {self.norm_eps}")
        if self.embedding_layernorm is None:
            object.__setattr__(self, "embedding_layernorm", self.attention == "alibi")
        elif self.attention == "alibi" and not self.embedding_layernorm:
            raise ConfigError("the alibi variant always uses the post-embedding layernorm")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def ffn_dim(self) -> int:
        return self.d_model * self.feedforward_mult

    @property
    def use_bias(self) -> bool:
        return self.attention == "alibi"

    @property
    def cache_window(self) -> int:
        """Kapacita rolling cache; pre alibi je to max_seq_len."""
        return self.window if self.attention == "sliding_window" else self.max_seq_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def alibi_slopes(n_heads: int) -> np.ndarray:
    """Geometrické sklony 2^(-8(h+1)/n_heads)."""
    h = np.arange(n_heads, dtype=np.float64)
    return 2.0 ** (-8.0 * (h + 1) / n_heads)


def alibi_bias(n_heads: int, query_pos: Sequence[int], key_pos: Sequence[int], dtype=None) -> Tensor:
    """bias[h][q][k] = -slope(h) * (q_pos - k_pos); budúce kľúče aj tak odreže kauzálna maska."""
    q = np.asarray(query_pos, dtype=np.float64)
    k = np.asarray(key_pos, dtype=np.float64)
    if (q < 0).any() or (k < 0).any():
        raise ContractError("alibi_bias: positions must be non-negative")
    distance = q[:, None] - k[None, :]
    bias = -alibi_slopes(n_heads)[:, None, None] * distance[None, :, :]
    return Tensor(bias, dtype=dtype)


def window_mask(query_pos: Sequence[int], key_pos: Sequence[int], window: Optional[int]) -> np.ndarray:
    """Povolené páry: k <= q a (ak je okno) q - k < W, teda presne W pozícií [q-W+1, q]."""
    q = np.asarray(query_pos, dtype=np.int64)[:, None]
    k = np.asarray(key_pos, dtype=np.int64)[None, :]
    allowed = k <= q
    if window is not None:
        allowed &= (q - k) < window
    return allowed


def apply_sliding_window_mask(scores: Tensor, query_pos: Sequence[int], key_pos: Sequence[int],
                              window: int) -> Tensor:
    if window < 1:
        raise ConfigError(f"sliding window W must be >= 1, got {window}")
    return nx.masked_fill(scores, window_mask(query_pos, key_pos, window))


class DecoderModel:
    def __init__(self, config: ModelConfig, seed: int = 0, init: str = "gaussian"):
        if init not in ("gaussian", "zeros"):
            raise ConfigError(f"unknown init '{init}'")
        self.config = config
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.adapters: dict[str, "LoraAdapter"] = {}
        self.linear_names: list[str] = []
        self._build(np.random.default_rng(seed), init)

    # -- parametre ---------------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _add_norm(self, prefix: str) -> None:
        d = self.config.d_model
        self._add(f"{prefix}.gain", np.ones(d))
        self._add(f"{prefix}.bias", np.zeros(d))

    def _add_linear(self, prefix: str, d_out: int, d_in: int, rng: np.random.Generator, init: str) -> None:
        std = self.config.d_model ** -0.5
        weight = rng.normal(0.0, std, (d_out, d_in)) if init == "gaussian" else np.zeros((d_out, d_in))
        self._add(f"{prefix}.weight", weight)
        if self.config.use_bias:
            self._add(f"{prefix}.bias", np.zeros(d_out))
        self.linear_names.append(prefix)

    def _build(self, rng: np.random.Generator, init: str) -> None:
        cfg = self.config
        d, f, vocab = cfg.d_model, cfg.ffn_dim, cfg.vocab_size
        embed = rng.normal(0.0, d ** -0.5, (vocab, d)) if init == "gaussian" else np.zeros((vocab, d))
        self._add("embed.weight", embed)
        if cfg.embedding_layernorm:
            self._add_norm("embed_norm")
        for i in range(cfg.n_layers):
            self._add_norm(f"layers.{i}.attn_norm")
            for proj in ("q", "k", "v", "o"):
                self._add_linear(f"layers.{i}.attn.{proj}", d, d, rng, init)
            self._add_norm(f"layers.{i}.ffn_norm")
            self._add_linear(f"layers.{i}.ffn.up", f, d, rng, init)
            self._add_linear(f"layers.{i}.ffn.down", d, f, rng, init)
        self._add_norm("final_norm")
        self._add_linear("head", vocab, d, rng, init)

    def attention_projections(self) -> list[str]:
        return [n for n in self.linear_names if ".attn." in n]

    def parameters(self, trainable_only: bool = False) -> list[tuple[str, Tensor]]:
        named = list(self.params.items())
        for target, adapter in self.adapters.items():
            named.extend(adapter.named_tensors())
        if trainable_only:
            named = [(n, t) for n, t in named if t.requires_grad]
        return named

    def zero_grad(self) -> None:
        for _, tensor in self.parameters():
            tensor.zero_grad()

    def set_trainable(self, trainable: bool) -> None:
        for tensor in self.params.values():
            tensor.requires_grad = trainable

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ContractError(f"state is missing tensors: {sorted(missing)}")
        for name, tensor in self.params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise ContractError(f"tensor '{name}' has shape {value.shape}, expected {tensor.shape}")
            tensor.data = value.astype(tensor.data.dtype, copy=True)

    # -- dopredny prechod --------------------------------------------------

    def linear(self, name: str, x: Tensor, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> Tensor:
        weight = self.params[f"{name}.weight"]
        y = nx.matmul(x, nx.transpose(weight))
        adapter = self.adapters.get(name)
        if adapter is not None:
            y = y + adapter.branch(x, training=training, rng=rng)
        bias = self.params.get(f"{name}.bias")
        if bias is not None:
            y = y + bias
        return y

    def _norm(self, prefix: str, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"], self.config.norm_eps)

    def _split_heads(self, x: Tensor) -> Tensor:
        t = x.shape[0]
        return nx.transpose(nx.reshape(x, (t, self.config.n_heads, self.config.head_dim)), (1, 0, 2))

    def _attention(self, layer: int, h: Tensor, positions: np.ndarray, cache: Optional["RollingKVCache"],
                   training: bool, rng) -> Tensor:
        cfg = self.config
        prefix = f"layers.{layer}.attn"
        q = self._split_heads(self.linear(f"{prefix}.q", h, training, rng))
        k = self._split_heads(self.linear(f"{prefix}.k", h, training, rng))
        v = self._split_heads(self.linear(f"{prefix}.v", h, training, rng))
        if cfg.attention == "sliding_window":
            q = nx.rotary(q, positions, cfg.rope_base)
            k = nx.rotary(k, positions, cfg.rope_base)

        key_pos = positions
        if cache is not None:
            cached_pos, cached_k, cached_v = cache.gather_arrays(layer)
            # nove kluce idu do cache az po precitani starych
            cache.append_block(layer, np.transpose(k.data, (1, 0, 2)), np.transpose(v.data, (1, 0, 2)))
            if len(cached_pos):
                dtype = k.data.dtype
                k = nx.concat([Tensor(np.transpose(cached_k, (1, 0, 2)), dtype=dtype), k], axis=1)
                v = nx.concat([Tensor(np.transpose(cached_v, (1, 0, 2)), dtype=dtype), v], axis=1)
                key_pos = np.concatenate([cached_pos, positions])

        scores = nx.scale(nx.matmul(q, nx.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(cfg.head_dim))
        if cfg.attention == "alibi":
            scores = scores + alibi_bias(cfg.n_heads, positions, key_pos, dtype=scores.data.dtype)
        scores = nx.masked_fill(scores, window_mask(positions, key_pos, cfg.cache_window))
        out = nx.matmul(nx.softmax_rows(scores), v)
        out = nx.reshape(nx.transpose(out, (1, 0, 2)), (h.shape[0], cfg.d_model))
        return self.linear(f"{prefix}.o", out, training, rng)

    def _feedforward(self, layer: int, h: Tensor, training: bool, rng) -> Tensor:
        act = nx.silu if self.config.attention == "sliding_window" else nx.gelu
        up = act(self.linear(f"layers.{layer}.ffn.up", h, training, rng))
        return self.linear(f"layers.{layer}.ffn.down", up, training, rng)

    def forward(self, tokens: Sequence[int], cache: Optional["RollingKVCache"] = None,
                training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        """Logity [t×vocab] pre každú vstupnú pozíciu."""
        cfg = self.config
        ids = np.asarray(tokens, dtype=np.int64).reshape(-1)
        if ids.size == 0:
            raise ContractError("forward needs at least one token")
        if ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise TokenIndexError(f"token id out of range for vocabulary of {cfg.vocab_size}")
        if cache is None:
            if ids.size > cfg.max_seq_len:
                raise LengthError(f"sequence of {ids.size} tokens exceeds max_seq_len {cfg.max_seq_len}")
            start = 0
        else:
            cache.check_compatible(cfg)
            start = cache.next_pos
        positions = start + np.arange(ids.size, dtype=np.int64)

        x = nx.embedding(self.params["embed.weight"], ids)
        if cfg.embedding_layernorm:
            x = self._norm("embed_norm", x)
        for layer in range(cfg.n_layers):
            x = x + self._attention(layer, self._norm(f"layers.{layer}.attn_norm", x), positions, cache,
                                    training, rng)
            x = x + self._feedforward(layer, self._norm(f"layers.{layer}.ffn_norm", x), training, rng)
        x = self._norm("final_norm", x)
        return self.linear("head", x, training, rng)

    def embed(self, tokens: Sequence[int]) -> Tensor:
        """Výstup embeddingu (po embedding layernorme, ak je zapnutá)."""
        x = nx.embedding(self.params["embed.weight"], tokens)
        if self.config.embedding_layernorm:
            x = self._norm("embed_norm", x)
        return x

    def checksum(self, trainable: Optional[bool] = None) -> str:
        """Odtlačok hodnôt parametrov (na kontrolu zmrazenej bázy)."""
        digest = hashlib.md5()
        for name, tensor in self.params.items():
            if trainable is not None and tensor.requires_grad != trainable:
                continue
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(tensor.data).tobytes())
        return digest.hexdigest()


def param_count(model: DecoderModel, trainable_only: bool = False) -> int:
    return int(sum(tensor.size for _, tensor in model.parameters(trainable_only)))


def expected_param_count(config: ModelConfig) -> int:
    """Počet parametrov ako čistá funkcia konfigurácie (bez adaptérov)."""
    d, f, vocab = config.d_model, config.ffn_dim, config.vocab_size
    bias = 1 if config.use_bias else 0
    per_layer = 2 * (2 * d) + 4 * (d * d + bias * d) + (d * f + bias * f) + (f * d + bias * d)
    total = vocab * d + config.n_layers * per_layer + 2 * d + (d * vocab + bias * vocab)
    if config.embedding_layernorm:
        total += 2 * d
    return total

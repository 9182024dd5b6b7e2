"""
Rolling buffer KV cache, predvyplnenie promptu po kúskoch a generovanie tokenov.

Kľúč/hodnota pre časový krok i leží v slote i mod W; staršie záznamy sa prepisujú.
Pozície sú absolútne (bez prečíslovania po vyhodení), rotačné kódovanie aj ALiBi
s nimi rátajú.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from engine import numerics as nx
from engine.model import DecoderModel, ModelConfig
from exceptions import ConfigError, ContractError, DimensionError, TokenIndexError

logger = logging.getLogger(__name__)


class RollingKVCache:
    def __init__(self, window: int, n_layers: int, n_heads: int, head_dim: int, dtype=None):
        if window < 1:
            raise ConfigError(f"cache window W must be >= 1, got {window}")
        self.window = window
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.head_dim = head_dim
        dtype = dtype or nx.default_dtype()
        self._keys = [np.zeros((window, n_heads, head_dim), dtype=dtype) for _ in range(n_layers)]
        self._values = [np.zeros((window, n_heads, head_dim), dtype=dtype) for _ in range(n_layers)]
        self._tags = [np.full(window, -1, dtype=np.int64) for _ in range(n_layers)]
        # kazda vrstva pocita svoje zapisy; casovy krok je hotovy, ked ho zapisali vsetky
        self._counts = [0] * n_layers

    @classmethod
    def for_model(cls, model: DecoderModel) -> "RollingKVCache":
        cfg = model.config
        dtype = model.params["embed.weight"].data.dtype
        return cls(cfg.cache_window, cfg.n_layers, cfg.n_heads, cfg.head_dim, dtype=dtype)

    @property
    def next_pos(self) -> int:
        return min(self._counts) if self._counts else 0

    def check_compatible(self, config: ModelConfig) -> None:
        expected = (config.cache_window, config.n_layers, config.n_heads, config.head_dim)
        actual = (self.window, self.n_layers, self.n_heads, self.head_dim)
        if expected != actual:
            raise ConfigError(
                f"cache (W, layers, heads, head_dim) = {actual} does not match the model's {expected}"
            )

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer < self.n_layers:
            raise TokenIndexError(f"layer {layer} out of range for a cache with {self.n_layers} layers")

    def slot(self, pos: int) -> int:
        return pos % self.window

    def append(self, layer: int, k: np.ndarray, v: np.ndarray) -> None:
        """Zapíše jeden časový krok ([heads×head_dim]) do slotu pos mod W."""
        self._check_layer(layer)
        k = np.asarray(k)
        v = np.asarray(v)
        expected = (self.n_heads, self.head_dim)
        if k.shape != expected or v.shape != expected:
            raise DimensionError(f"cache append: k {k.shape} / v {v.shape}, expected {expected}")
        pos = self._counts[layer]
        slot = self.slot(pos)
        self._keys[layer][slot] = k
        self._values[layer][slot] = v
        self._tags[layer][slot] = pos
        self._counts[layer] = pos + 1

    def append_block(self, layer: int, keys: np.ndarray, values: np.ndarray) -> None:
        """Po sebe idúce časové kroky, tvar [t×heads×head_dim]."""
        for k, v in zip(keys, values):
            self.append(layer, k, v)

    def __len__(self) -> int:
        return min(self.next_pos, self.window)

    def valid_entries(self, layer: int) -> int:
        self._check_layer(layer)
        return int((self._tags[layer] >= 0).sum())

    def gather_arrays(self, layer: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pozície, kľúče, hodnoty) platných záznamov vo vzostupnom poradí pozícií."""
        self._check_layer(layer)
        tags = self._tags[layer]
        slots = np.nonzero(tags >= 0)[0]
        slots = slots[np.argsort(tags[slots], kind="stable")]
        return tags[slots].copy(), self._keys[layer][slots], self._values[layer][slots]

    def gather(self, layer: int) -> list[tuple[int, np.ndarray, np.ndarray]]:
        positions, keys, values = self.gather_arrays(layer)
        return [(int(p), k, v) for p, k, v in zip(positions, keys, values)]

    def retained_positions(self, layer: int = 0) -> list[int]:
        return [int(p) for p in self.gather_arrays(layer)[0]]


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 32
    sampling: str = "greedy"
    temperature: float = 1.0
    seed: int = 0
    stop_token: Optional[int] = None
    prefill_chunk: Optional[int] = None

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ConfigError(f"max_new_tokens must be >= 0, got {self.max_new_tokens}")
        if self.sampling not in ("greedy", "temperature"):
            raise ConfigError(f"sampling must be 'greedy' or 'temperature', got '{self.sampling}'")
        if self.sampling == "temperature" and self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.prefill_chunk is not None and self.prefill_chunk < 1:
            raise ConfigError(f"prefill_chunk must be >= 1, got {self.prefill_chunk}")


def prefill(model: DecoderModel, cache: RollingKVCache, prompt: Sequence[int], chunk: int) -> np.ndarray:
    """Spracuje prompt po kúskoch veľkosti chunk; vráti logity poslednej pozície."""
    tokens = [int(t) for t in prompt]
    if not tokens:
        raise ContractError("prefill needs a non-empty prompt")
    if chunk < 1:
        raise ConfigError(f"prefill chunk must be >= 1, got {chunk}")
    logits = None
    with nx.no_grad():
        for start in range(0, len(tokens), chunk):
            logits = model.forward(tokens[start:start + chunk], cache=cache)
    return logits.data[-1].copy()


def _pick(logits: np.ndarray, params: GenerationParams, rng: np.random.Generator) -> int:
    if params.sampling == "greedy":
        return int(np.argmax(logits))
    scaled = logits.astype(np.float64) / params.temperature
    scaled -= scaled.max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    return int(rng.choice(len(probs), p=probs))


def generate(model: DecoderModel, prompt: Sequence[int], params: GenerationParams,
             cache: Optional[RollingKVCache] = None) -> list[int]:
    """Autoregresívne generovanie s rolling cache; stop_token sa do výstupu nepridáva."""
    if len(prompt) == 0:
        raise ContractError("generate needs a non-empty prompt")
    if params.max_new_tokens == 0:
        return []
    if cache is None:
        cache = RollingKVCache.for_model(model)
    rng = np.random.default_rng(params.seed)
    chunk = params.prefill_chunk or cache.window
    logits = prefill(model, cache, prompt, chunk)
    out: list[int] = []
    with nx.no_grad():
        while True:
            token = _pick(logits, params, rng)
            if params.stop_token is not None and token == params.stop_token:
                break
            out.append(token)
            if len(out) >= params.max_new_tokens:
                break
            logits = model.forward([token], cache=cache).data[-1]
    logger.debug("generated %d tokens after a %d-token prompt", len(out), len(prompt))
    return out

"""
Dolaďovanie modelu: AdamW s odpojeným weight decay, lineárny warmup a pokles learning rate,
dávky s pravým paddingom a maskou straty, plné dolaďovanie aj LoRA so zmrazenou bázou.
"""
from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from engine import checkpoint, lora
from engine import numerics as nx
from engine.model import DecoderModel
from engine.numerics import IGNORE_INDEX, ComputeTape
from engine.tokenizer import Tokenizer
from exceptions import ConfigError, ContractError, NumericError
from models import LossRecord, QaExample
from utils.fileio import write_jsonl
from utils.templates import TRAINING_FIELDS, InstructionTemplate

logger = logging.getLogger(__name__)

MODES = ("full", "lora")
MODE_DEFAULTS = {
    "full": {"batch_size": 8, "learning_rate": 2e-5},
    "lora": {"batch_size": 4, "learning_rate": 2e-4},
}


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 2e-5
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_ratio: float = 0.05
    weight_decay: float = 0.01
    max_length: int = 1024
    num_epochs: int = 10
    grad_clip: Optional[float] = None
    log_every: int = 10

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"betas must lie in (0, 1), got ({self.beta1}, {self.beta2})")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.num_epochs < 0:
            raise ConfigError(f"num_epochs must be >= 0, got {self.num_epochs}")
        if self.max_length < 2:
            raise ConfigError(f"max_length must be >= 2, got {self.max_length}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")

    @classmethod
    def for_mode(cls, mode: str, **overrides) -> "OptimizerConfig":
        """Predvolené hodnoty: batch 8 / lr 2e-5 pre full, batch 4 / lr 2e-4 pre lora."""
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{mode}'")
        values = {**MODE_DEFAULTS[mode], **{k: v for k, v in overrides.items() if v is not None}}
        return cls(**values)


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Sequence[tuple[str, nx.Tensor]], grads: dict[str, np.ndarray], state: AdamWState,
               config: OptimizerConfig, step: int, lr: Optional[float] = None) -> None:
    """
    Jeden krok AdamW (step začína od 1):
    w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * w.
    Zmrazené tenzory (requires_grad=False) sa nemenia.
    """
    if step < 1:
        raise ContractError(f"adamw step index starts at 1, got {step}")
    lr = config.learning_rate if lr is None else lr
    trainable = [(name, t) for name, t in params if t.requires_grad]
    # najprv kontrola vsetkych gradientov, aby sa krok neurobil napoly
    for name, tensor in trainable:
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != tensor.shape:
            raise ContractError(f"gradient for '{name}' has shape {grad.shape}, expected {tensor.shape}")
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient in tensor '{name}'")
    b1, b2 = config.beta1, config.beta2
    for name, tensor in trainable:
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        update = lr * m_hat / (np.sqrt(v_hat) + config.eps) + lr * config.weight_decay * tensor.data
        tensor.data = (tensor.data - update).astype(tensor.data.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Orezanie podľa globálnej L2 normy; vráti normu pred orezaním."""
    total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for name in grads:
            grads[name] = grads[name] * factor
    return total


def warmup_steps(total_steps: int, config: OptimizerConfig) -> int:
    # 0.05 * 1000 musi dat presne 50
    return math.ceil(round(config.warmup_ratio * total_steps, 9))


def lr_at(step: int, total_steps: int, config: OptimizerConfig) -> float:
    """Lineárny nárast z 0 na learning_rate počas warmupu, potom lineárny pokles na 0."""
    if total_steps <= 0:
        raise ConfigError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_steps(total_steps, config)
    if step < warmup:
        return config.learning_rate * step / warmup
    if step >= total_steps:
        return 0.0
    return config.learning_rate * (total_steps - step) / (total_steps - warmup)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class EncodedExample:
    id: str
    tokens: list[int]
    loss_mask: list[bool]

    def __post_init__(self):
        if len(self.tokens) != len(self.loss_mask):
            raise ContractError(f"example '{self.id}': {len(self.tokens)} tokens but {len(self.loss_mask)} mask flags")

    @property
    def loss_positions(self) -> int:
        # prvy token (BOS) sa nikdy nepredpoveda
        return sum(self.loss_mask[1:])


def format_training_example(ex: QaExample, template: InstructionTemplate, tokenizer: Tokenizer,
                            max_length: int = 1024, add_eos: bool = True) -> EncodedExample:
    """
    BOS + šablóna s dosadeným kontextom, otázkou a odpoveďou. Strata sa počíta iba na tokenoch
    odpovede (a EOS). Príliš dlhý príklad stráca najprv začiatok kontextu, potom koniec odpovede.
    """
    template.require(TRAINING_FIELDS)
    values = {"context": ex.context, "question": ex.question, "answer": ex.answer}
    pieces: list[tuple[str, list[int]]] = []
    for kind, value in template.segments():
        if kind == "literal":
            pieces.append(("literal", tokenizer.encode(value)))
        else:
            pieces.append((value, tokenizer.encode(values[value])))

    eos = [tokenizer.eos_id] if add_eos else []
    total = 1 + sum(len(ids) for _, ids in pieces) + len(eos)
    excess = total - max_length
    if excess > 0:
        for i, (kind, ids) in enumerate(pieces):
            if kind == "context":
                cut = min(excess, len(ids))
                pieces[i] = (kind, ids[cut:])
                excess -= cut
        if excess > 0 and eos:
            eos, excess = [], excess - 1
        for i, (kind, ids) in enumerate(pieces):
            if kind == "answer" and excess > 0:
                cut = min(excess, len(ids))
                pieces[i] = (kind, ids[:len(ids) - cut])
                excess -= cut
        if excess > 0:
            raise ConfigError(
                f"example '{ex.id}' does not fit into max_length {max_length} even without context and answer"
            )
        logger.debug("example %s truncated to %d tokens", ex.id, max_length)

    tokens, mask = [tokenizer.bos_id], [False]
    for kind, ids in pieces:
        tokens.extend(ids)
        mask.extend([kind == "answer"] * len(ids))
    tokens.extend(eos)
    mask.extend([True] * len(eos))
    return EncodedExample(ex.id, tokens, mask)


def copy_task_dataset(n_examples: int, tokenizer: Tokenizer, length: int = 6, alphabet: str = "abcdefgh",
                      seed: int = 0) -> list[EncodedExample]:
    """Syntetická úloha: BOS s = s EOS; strata iba na zopakovanej časti."""
    if n_examples < 1 or length < 1:
        raise ConfigError("copy task needs n_examples >= 1 and length >= 1")
    rng = np.random.default_rng(seed)
    sep = tokenizer.encode("=")
    examples = []
    for i in range(n_examples):
        text = "".join(rng.choice(list(alphabet), size=length))
        source = tokenizer.encode(text)
        tokens = [tokenizer.bos_id] + source + sep + source + [tokenizer.eos_id]
        mask = [False] * (1 + len(source) + len(sep)) + [True] * (len(source) + 1)
        examples.append(EncodedExample(f"copy-{i:05d}", tokens, mask))
    return examples


def split_dataset(examples: Sequence, val_fraction: float = 0.1) -> tuple[list, list]:
    """Deterministické rozdelenie podľa md5 hashu id príkladu."""
    train, val = [], []
    for ex in examples:
        bucket = int(hashlib.md5(ex.id.encode("utf-8")).hexdigest(), 16) % 1000
        (val if bucket < val_fraction * 1000 else train).append(ex)
    return train, val


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    lengths: list[int]

    @property
    def n_targets(self) -> int:
        return int((self.targets != IGNORE_INDEX).sum())


def collate(examples: Sequence[EncodedExample], pad_id: int) -> Batch:
    """Pravý padding; ciele mimo masky straty a na paddingu sú IGNORE_INDEX."""
    width = max(len(ex.tokens) for ex in examples) - 1
    inputs = np.full((len(examples), width), pad_id, dtype=np.int64)
    targets = np.full((len(examples), width), IGNORE_INDEX, dtype=np.int64)
    lengths = []
    for row, ex in enumerate(examples):
        n = len(ex.tokens) - 1
        inputs[row, :n] = ex.tokens[:-1]
        target = np.asarray(ex.tokens[1:], dtype=np.int64)
        targets[row, :n] = np.where(np.asarray(ex.loss_mask[1:]), target, IGNORE_INDEX)
        lengths.append(n)
    return Batch(inputs, targets, lengths)


def batch_loss(model: DecoderModel, batch: Batch, training: bool = False,
               rng: Optional[np.random.Generator] = None) -> nx.Tensor:
    """Priemer cross-entropy cez všetky započítané pozície dávky."""
    total = None
    for row in range(batch.inputs.shape[0]):
        logits = model.forward(batch.inputs[row], training=training, rng=rng)
        loss = nx.cross_entropy(logits, batch.targets[row], reduction="sum")
        total = loss if total is None else total + loss
    return nx.scale(total, 1.0 / max(batch.n_targets, 1))


def evaluate_loss(model: DecoderModel, examples: Sequence[EncodedExample], batch_size: int, pad_id: int) -> float:
    total, count = 0.0, 0
    with nx.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = collate(examples[start:start + batch_size], pad_id)
            total += batch_loss(model, batch).item() * batch.n_targets
            count += batch.n_targets
    return total / count if count else 0.0


# ---------------------------------------------------------------------------
# treningova slucka
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoraSettings:
    rank: int = lora.DEFAULT_RANK
    alpha: Optional[float] = None
    dropout: float = lora.DEFAULT_DROPOUT
    targets: Optional[tuple[str, ...]] = None


@dataclass
class TrainResult:
    records: list[LossRecord]
    steps: int
    final_train_loss: Optional[float]
    final_val_loss: Optional[float]
    checkpoints: dict[str, Path] = field(default_factory=dict)


def _save_checkpoints(model: DecoderModel, mode: str, checkpoint_dir: Optional[Path], stem: str,
                      meta: dict) -> dict[str, Path]:
    if checkpoint_dir is None:
        return {}
    paths = {f"{stem}_model": Path(checkpoint_dir) / f"{stem}.ckpt"}
    checkpoint.save_model(model, paths[f"{stem}_model"], meta)
    if mode == "lora":
        paths[f"{stem}_adapter"] = Path(checkpoint_dir) / f"{stem}.adapter.ckpt"
        checkpoint.save_adapters(model, paths[f"{stem}_adapter"], meta)
    return paths


def _write_run_log(run_log: Optional[Path], records: Sequence[LossRecord], seed: int) -> None:
    if run_log is not None:
        write_jsonl(run_log, ({**r.to_dict(), "seed": seed} for r in records))


def train(model: DecoderModel, dataset: Sequence[EncodedExample], config: OptimizerConfig, mode: str = "full",
          val_dataset: Sequence[EncodedExample] = (), seed: int = 0, pad_id: int = 0,
          lora_settings: Optional[LoraSettings] = None, checkpoint_dir: Optional[Path] = None,
          run_log: Optional[Path] = None, meta: Optional[dict] = None,
          on_record: Optional[Callable[[LossRecord], None]] = None) -> TrainResult:
    """
    Dolaďovanie v režime full alebo lora. Posledný dobrý checkpoint (last_good) sa ukladá na začiatku
    a po každej epoche; pri NaN strate sa beh preruší a last_good ostane.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got '{mode}'")
    if not dataset:
        raise ContractError("training dataset is empty")
    too_long = [ex.id for ex in dataset if len(ex.tokens) > config.max_length]
    if too_long:
        raise ContractError(f"examples longer than max_length {config.max_length}: {too_long[:5]}")

    if mode == "lora":
        if not model.adapters:
            s = lora_settings or LoraSettings()
            lora.attach(model, s.targets, rank=s.rank, alpha=s.alpha, dropout=s.dropout, seed=seed)
        model.set_trainable(False)
    else:
        if model.adapters:
            raise ConfigError("full fine-tuning expects a model without LoRA adapters")
        model.set_trainable(True)

    meta = {"seed": seed, "mode": mode, **(meta or {})}
    rng = np.random.default_rng(seed)
    params = model.parameters(trainable_only=True)
    state = AdamWState()
    steps_per_epoch = math.ceil(len(dataset) / config.batch_size)
    total_steps = config.num_epochs * steps_per_epoch
    base_checksum = model.checksum(trainable=False) if mode == "lora" else None
    logger.info("training (%s): %d examples, %d steps, %d trainable parameters", mode, len(dataset), total_steps,
                sum(t.size for _, t in params))

    records: list[LossRecord] = []
    checkpoints = _save_checkpoints(model, mode, checkpoint_dir, "last_good", meta)
    started = time.monotonic()
    step = 0
    train_loss = val_loss = None

    def emit(record: LossRecord) -> None:
        records.append(record)
        if on_record is not None:
            on_record(record)

    try:
        for epoch in range(config.num_epochs):
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), config.batch_size):
                batch = collate([dataset[i] for i in order[start:start + config.batch_size]], pad_id)
                lr = lr_at(step, total_steps, config)
                model.zero_grad()
                with ComputeTape() as tape:
                    try:
                        loss = batch_loss(model, batch, training=True, rng=rng)
                    except NumericError as exc:
                        raise NumericError(f"non-finite loss at step {step + 1}: {exc}") from exc
                    if not math.isfinite(loss.item()):
                        raise NumericError(f"non-finite loss at step {step + 1}")
                    tape.backward(loss)
                grads = {name: t.grad for name, t in params if t.grad is not None}
                if config.grad_clip is not None:
                    clip_gradients(grads, config.grad_clip)
                adamw_step(params, grads, state, config, step + 1, lr=lr)
                step += 1
                train_loss = loss.item()
                last_in_epoch = start + config.batch_size >= len(order)
                if step % config.log_every == 0 or last_in_epoch:
                    if last_in_epoch and val_dataset:
                        val_loss = evaluate_loss(model, val_dataset, config.batch_size, pad_id)
                    record = LossRecord(step=step, epoch=epoch, train_loss=train_loss, lr=lr,
                                        wall_ms=int((time.monotonic() - started) * 1000),
                                        val_loss=val_loss if last_in_epoch and val_dataset else None)
                    emit(record)
                    logger.info("step %d epoch %d loss %.4f lr %.2e%s", step, epoch, train_loss, lr,
                                f" val {record.val_loss:.4f}" if record.val_loss is not None else "")
            checkpoints.update(_save_checkpoints(model, mode, checkpoint_dir, "last_good", meta))
    except NumericError:
        _write_run_log(run_log, records, seed)
        logger.error("training aborted at step %d; last good checkpoint kept in %s", step + 1, checkpoint_dir)
        raise

    if base_checksum is not None and model.checksum(trainable=False) != base_checksum:
        raise ContractError("base weights changed during LoRA training")
    checkpoints.update(_save_checkpoints(model, mode, checkpoint_dir, "final", meta))
    _write_run_log(run_log, records, seed)
    return TrainResult(records, step, train_loss, val_loss, checkpoints)

"""Príkazy pre model: tréning, zlúčenie adaptéra, evaluácia a generovanie."""
import json
import logging
from pathlib import Path
from typing import Optional

import click
import numpy as np
from rich.table import Table

from engine import lora
from engine import numerics as nx
from engine.checkpoint import load_adapters_into, load_model, save_model
from engine.kvcache import GenerationParams, generate as generate_tokens
from engine.model import DecoderModel
from engine.tokenizer import ByteTokenizer
from engine.training import MODES, copy_task_dataset, format_training_example, split_dataset, train as train_model
from exceptions import ConfigError, NumericError
from extensions import get_console
from models import LossRecord
from routes import echo, echo_seed, resolve_seed
from runconfig import RunConfig, load_run_config
from utils.corpus import read_corpus, read_predictions
from utils.evalmetrics import score_corpus
from utils.fileio import atomic_write_text, write_jsonl
from utils.templates import get_template, render_inference_prompt, training_templates

logger = logging.getLogger(__name__)

lab_group = click.Group("lab")

MERGE_TOLERANCE = 1e-5


def _fmt_loss(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def _build_dataset(cfg: RunConfig, tokenizer: ByteTokenizer, seed: int) -> list:
    if cfg.data.kind == "copy_task":
        return copy_task_dataset(cfg.data.n_examples, tokenizer, length=cfg.data.length,
                                 alphabet=cfg.data.alphabet, seed=seed)
    template = get_template(cfg.data.template)
    # vstupy modelu su tokeny[:-1], preto +1
    max_length = min(cfg.optimizer.max_length, cfg.model.max_seq_len + 1)
    return [format_training_example(ex, template, tokenizer, max_length=max_length)
            for ex in read_corpus(cfg.paths.corpus)]


def _load(ckpt_path: Path, adapter_path: Optional[Path]) -> DecoderModel:
    model, _ = load_model(ckpt_path)
    if adapter_path is not None:
        load_adapters_into(model, adapter_path)
    return model


def _prompt_tokens(tokenizer: ByteTokenizer, text: str, max_seq_len: int) -> list[int]:
    tokens = [tokenizer.bos_id] + tokenizer.encode(text)
    if len(tokens) > max_seq_len:
        # zaciatok kontextu sa zahodi, BOS ostane
        tokens = [tokenizer.bos_id] + tokens[len(tokens) - max_seq_len + 1:]
    return tokens


@lab_group.command("train")
@click.argument("config_path", type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice(MODES), default="full", show_default=True,
              help="full: všetky váhy (batch 8, lr 2e-5); lora: iba adaptéry (batch 4, lr 2e-4, r 128).")
def train(config_path: Path, mode: str):
    """Dolaďovanie podľa JSON konfigurácie; zapíše run log a checkpointy."""
    cfg = load_run_config(config_path, mode)
    seed = resolve_seed(cfg.seed)
    echo_seed(seed)
    tokenizer = ByteTokenizer()
    if cfg.model.vocab_size < tokenizer.vocab_size:
        raise ConfigError(f"model.vocab_size {cfg.model.vocab_size} is smaller than the byte vocabulary "
                          f"({tokenizer.vocab_size})")

    def on_record(record: LossRecord) -> None:
        val = "" if record.val_loss is None else f" val {record.val_loss:.4f}"
        echo(f"step {record.step} epoch {record.epoch} loss {record.train_loss:.4f} lr {record.lr:.2e}{val}")

    with nx.precision(cfg.precision):
        examples = _build_dataset(cfg, tokenizer, seed)
        train_set, val_set = split_dataset(examples, cfg.data.val_fraction)
        model = DecoderModel(cfg.model, seed=seed)
        summary_path = cfg.paths.checkpoint_dir / "run_summary.json"
        try:
            result = train_model(model, train_set, cfg.optimizer, mode=mode, val_dataset=val_set, seed=seed,
                                 pad_id=tokenizer.pad_id, lora_settings=cfg.lora,
                                 checkpoint_dir=cfg.paths.checkpoint_dir, run_log=cfg.paths.run_log,
                                 meta={"precision": cfg.precision}, on_record=on_record)
        except NumericError as exc:
            atomic_write_text(summary_path, json.dumps(
                {"seed": seed, "mode": mode, "status": "failed", "error": str(exc), "config": cfg.to_dict()},
                indent=2))
            raise

    summary = {
        "seed": seed,
        "mode": mode,
        "status": "ok",
        "steps": result.steps,
        "train_examples": len(train_set),
        "val_examples": len(val_set),
        "final_train_loss": result.final_train_loss,
        "final_val_loss": result.final_val_loss,
        "checkpoints": {k: str(v) for k, v in sorted(result.checkpoints.items())},
        "config": cfg.to_dict(),
    }
    atomic_write_text(summary_path, json.dumps(summary, indent=2))
    for key, path in sorted(result.checkpoints.items()):
        echo(f"{key}: {path}")
    echo(f"final train loss {_fmt_loss(result.final_train_loss)} | val loss {_fmt_loss(result.final_val_loss)}")


@lab_group.command("merge")
@click.argument("base_ckpt", type=click.Path(path_type=Path))
@click.argument("adapter_ckpt", type=click.Path(path_type=Path))
@click.argument("out_ckpt", type=click.Path(path_type=Path))
@click.option("--probe-batch", default=8, show_default=True, help="Počet náhodných sekvencií na kontrolu.")
@click.option("--probe-len", default=16, show_default=True)
def merge(base_ckpt: Path, adapter_ckpt: Path, out_ckpt: Path, probe_batch: int, probe_len: int):
    """Zlúči adaptér do váh bázy a overí, že výstup sa nezmenil."""
    seed = resolve_seed()
    echo_seed(seed)
    model = _load(base_ckpt, adapter_ckpt)
    merged = lora.merge_model(model)

    rng = np.random.default_rng(seed)
    length = max(1, min(probe_len, model.config.max_seq_len))
    deviation = 0.0
    with nx.no_grad():
        for _ in range(probe_batch):
            tokens = rng.integers(0, model.config.vocab_size, size=length)
            diff = np.abs(model.forward(tokens).data.astype(np.float64) - merged.forward(tokens).data)
            deviation = max(deviation, float(diff.max()))
    if deviation >= MERGE_TOLERANCE:
        raise NumericError(f"merged model deviates by {deviation:.3e} on the probe batch (limit {MERGE_TOLERANCE})")

    save_model(merged, out_ckpt, {"seed": seed, "merged_from": [str(base_ckpt), str(adapter_ckpt)]})
    echo(f"max probe deviation {deviation:.3e} over {probe_batch}x{length} tokens -> {out_ckpt}")


@lab_group.command("eval")
@click.argument("ckpt", type=click.Path(path_type=Path))
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--template", "template_name", default="qa_instruction", show_default=True,
              help=f"Tréningová šablóna: {', '.join(training_templates())}.")
@click.option("--adapter", "adapter_path", type=click.Path(path_type=Path), default=None)
@click.option("--max-new-tokens", default=64, show_default=True)
@click.option("--predictions", "predictions_path", type=click.Path(path_type=Path), default=None,
              help="Hotové predikcie {id, prediction} namiesto generovania.")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Záznamy pre každý príklad (predvolene <ckpt>.eval.jsonl).")
def evaluate(ckpt: Path, corpus_path: Path, template_name: str, adapter_path: Optional[Path], max_new_tokens: int,
             predictions_path: Optional[Path], out_path: Optional[Path]):
    """Exact Match a F1 modelu na QA korpuse."""
    seed = resolve_seed()
    echo_seed(seed)
    model = _load(ckpt, adapter_path)
    corpus = read_corpus(corpus_path)
    template = get_template(template_name)

    if predictions_path is not None:
        predictions = read_predictions(predictions_path)
    else:
        tokenizer = ByteTokenizer()
        params = GenerationParams(max_new_tokens=max_new_tokens, stop_token=tokenizer.eos_id, seed=seed)
        predictions = []
        for ex in corpus:
            prompt = _prompt_tokens(tokenizer, render_inference_prompt(template, ex.context, ex.question),
                                    model.config.max_seq_len)
            answer = tokenizer.decode(generate_tokens(model, prompt, params)).strip()
            predictions.append((ex.id, answer))
            logger.debug("%s -> %r", ex.id, answer)
    report = score_corpus(predictions, corpus)

    out_path = out_path or ckpt.with_name(ckpt.name + ".eval.jsonl")
    write_jsonl(out_path, ({**s.to_dict(), "seed": seed} for s in report.per_example))

    table = Table(title=f"{report.n} examples")
    table.add_column("Model")
    table.add_column("Exact", justify="right")
    table.add_column("F1-score", justify="right")
    table.add_row(ckpt.name, f"{report.exact:.2f}", f"{report.f1:.2f}")
    get_console().print(table)


@lab_group.command("generate")
@click.argument("ckpt", type=click.Path(path_type=Path))
@click.argument("prompt")
@click.option("--adapter", "adapter_path", type=click.Path(path_type=Path), default=None)
@click.option("--max-new-tokens", default=32, show_default=True)
@click.option("--sampling", type=click.Choice(["greedy", "temperature"]), default="greedy", show_default=True)
@click.option("--temperature", default=1.0, show_default=True)
@click.option("--prefill-chunk", type=int, default=None, help="Veľkosť kúska pri plnení cache (predvolene W).")
def generate(ckpt: Path, prompt: str, adapter_path: Optional[Path], max_new_tokens: int, sampling: str,
             temperature: float, prefill_chunk: Optional[int]):
    """Pokračovanie textu z checkpointu s rolling cache."""
    seed = resolve_seed()
    echo_seed(seed)
    model = _load(ckpt, adapter_path)
    tokenizer = ByteTokenizer()
    params = GenerationParams(max_new_tokens=max_new_tokens, sampling=sampling, temperature=temperature,
                              seed=seed, stop_token=tokenizer.eos_id, prefill_chunk=prefill_chunk)
    out = generate_tokens(model, _prompt_tokens(tokenizer, prompt, model.config.max_seq_len), params)
    echo(tokenizer.decode(out))

"""Príkazy dátovej linky: predspracovanie, štatistiky, generovanie a značkovanie korpusu."""
import json
import logging
from pathlib import Path
from typing import Optional

import click
from rich.table import Table

from exceptions import ConfigError
from extensions import get_console
from models import STAT_COLUMNS, QualityLabel
from routes import echo, echo_seed, resolve_seed
from utils.corpus import (
    apply_human_labels,
    compute_stats,
    label_corpus,
    quality_report,
    read_contexts,
    read_corpus,
    read_labels,
    write_contexts,
    write_corpus,
)
from utils.fileio import atomic_write_text, read_text, write_jsonl
from utils.preprocessing import DEFAULT_SEGMENT_CHARS, dedupe_examples, preprocess_document
from utils.qa_generator import GeminiCompletionClient, RetryPolicy, ScriptedCompletionClient, generate_candidates
from utils.templates import craft_prompts, generation_templates, get_template

logger = logging.getLogger(__name__)

data_group = click.Group("data")

STAT_LABELS = {"count": "count", "mean": "mean", "std": "std", "min": "min",
               "q25": "25%", "median": "50%", "q75": "75%", "max": "max"}


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:.2f}"


@data_group.command("preprocess")
@click.argument("in_path", type=click.Path(path_type=Path))
@click.argument("out_path", type=click.Path(path_type=Path))
@click.option("--max-chars", default=DEFAULT_SEGMENT_CHARS, show_default=True, help="Maximálna dĺžka segmentu.")
@click.option("--html/--no-html", default=None, help="Odstrániť HTML značky (predvolene podľa prípony).")
@click.option("--dedupe-threshold", default=0.9, show_default=True,
              help="Jaccardova podobnosť, od ktorej sa segment považuje za duplikát.")
def preprocess(in_path: Path, out_path: Path, max_chars: int, html: Optional[bool], dedupe_threshold: float):
    """Vyčistí a rozdelí dokument s predpisom na kontexty (JSONL)."""
    seed = resolve_seed()
    echo_seed(seed)
    raw = read_text(in_path)
    if html is None:
        html = in_path.suffix.lower() in (".html", ".htm")
    contexts = preprocess_document(raw, max_chars=max_chars, source=in_path.name, html=html,
                                   dedupe_threshold=dedupe_threshold, id_prefix=in_path.stem or "ctx")
    write_contexts(contexts, out_path, seed)
    if not contexts:
        echo(f"0 segments: {in_path} contains no text, wrote an empty {out_path}")
        return
    chars = sum(len(c.text) for c in contexts)
    echo(f"{len(contexts)} segments, {chars} chars -> {out_path}")


@data_group.command("stats")
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--json-out", type=click.Path(path_type=Path), default=None, help="Uložiť štatistiky aj ako JSON.")
def stats(corpus_path: Path, json_out: Optional[Path]):
    """Štatistiky dĺžok kontextu, otázky a odpovede (v znakoch)."""
    seed = resolve_seed()
    echo_seed(seed)
    corpus_stats = compute_stats(read_corpus(corpus_path))
    table = Table(title=f"{corpus_path.name}: {corpus_stats.context.count} examples")
    table.add_column("")
    for header in ("Context", "Question", "Answer"):
        table.add_column(header, justify="right")
    for column in STAT_COLUMNS:
        table.add_row(STAT_LABELS[column], *(
            _fmt(getattr(field_stats, column))
            for field_stats in (corpus_stats.context, corpus_stats.question, corpus_stats.answer)
        ))
    get_console().print(table)
    if json_out is not None:
        atomic_write_text(json_out, json.dumps({"seed": seed, **corpus_stats.to_dict()}, indent=2))


@data_group.command("gen-data")
@click.argument("contexts_path", type=click.Path(path_type=Path))
@click.option("--template", "template_name", default="plain", show_default=True,
              help=f"Generovacia šablóna: {', '.join(generation_templates())}.")
@click.option("--mock", "mock_path", type=click.Path(path_type=Path), default=None,
              help="Fixture so skriptovanými odpoveďami namiesto živého API.")
@click.option("--k", "k_per_context", default=1, show_default=True, help="Počet promptov na kontext.")
@click.option("--parallelism", default=4, show_default=True)
@click.option("--max-attempts", default=3, show_default=True)
@click.option("--timeout-ms", default=30000, show_default=True)
@click.option("--dedupe-threshold", default=0.9, show_default=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=Path("generated.jsonl"), show_default=True)
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), default=None,
              help="Manifest karantény a chýb (predvolene <out>.manifest.json).")
def gen_data(contexts_path: Path, template_name: str, mock_path: Optional[Path], k_per_context: int,
             parallelism: int, max_attempts: int, timeout_ms: int, dedupe_threshold: float, out_path: Path,
             manifest_path: Optional[Path]):
    """Vygeneruje kandidátne QA páry z kontextov."""
    seed = resolve_seed()
    echo_seed(seed)
    template = get_template(template_name)
    if template.purpose != "generation":
        raise ConfigError(f"template '{template_name}' is a training template, choose one of {generation_templates()}")
    contexts = read_contexts(contexts_path)
    client = ScriptedCompletionClient.from_file(mock_path) if mock_path is not None else GeminiCompletionClient()
    prompts = craft_prompts(contexts, template, k_per_context=k_per_context)
    batch = generate_candidates(client, prompts, RetryPolicy(max_attempts=max_attempts, timeout_ms=timeout_ms),
                                parallelism=parallelism)
    examples = dedupe_examples(batch.examples, dedupe_threshold)
    if len(examples) != len(batch.examples):
        logger.info("removed %d near-duplicate questions", len(batch.examples) - len(examples))

    manifest_path = manifest_path or out_path.with_name(out_path.name + ".manifest.json")
    manifest = {"seed": seed, "template": template.name, "prompts": len(prompts), **batch.manifest(),
                "examples": len(examples)}
    write_corpus(examples, out_path, seed)
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2, ensure_ascii=False))
    echo(f"{len(prompts)} prompts: {len(examples)} examples, {len(batch.quarantine)} quarantined, "
         f"{len(batch.failures)} failed -> {out_path}")


@data_group.command("label")
@click.argument("corpus_path", type=click.Path(path_type=Path))
@click.option("--contexts", "contexts_path", type=click.Path(path_type=Path), default=None,
              help="Kontexty, z ktorých sa vyberá referenčný úsek (podľa context_id).")
@click.option("--labels", "labels_path", type=click.Path(path_type=Path), default=None,
              help="Ľudské značky {id, quality, question?, answer?} (JSONL).")
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Označený korpus (predvolene prepíše vstup).")
@click.option("--assessments", "assessments_path", type=click.Path(path_type=Path), default=None,
              help="Skóre ROUGE-L/BLEU pre každý príklad (JSONL).")
def label(corpus_path: Path, contexts_path: Optional[Path], labels_path: Optional[Path], out_path: Optional[Path],
          assessments_path: Optional[Path]):
    """Predbežné značky kvality; ľudské značky majú prednosť."""
    seed = resolve_seed()
    echo_seed(seed)
    corpus = read_corpus(corpus_path)
    if labels_path is not None:
        corpus = apply_human_labels(corpus, read_labels(labels_path))
    contexts = {c.id: c.text for c in read_contexts(contexts_path)} if contexts_path is not None else None
    labeled, assessments = label_corpus(corpus, contexts)
    report = quality_report(labeled)

    write_corpus(labeled, out_path or corpus_path, seed)
    if assessments_path is not None:
        write_jsonl(assessments_path, ({**a.to_dict(), "seed": seed} for a in assessments))

    table = Table(title=f"Quality of {report.total} examples")
    table.add_column("Level")
    table.add_column("Count", justify="right")
    table.add_column("Percent", justify="right")
    for level in QualityLabel:
        table.add_row(level.value, str(report.counts[level]), f"{report.percentages[level]:.2f}")
    get_console().print(table)

"""
Korpus QA príkladov: JSONL vstup/výstup, štatistiky dĺžok, hodnotenie kvality a ľudské značky.
"""
from __future__ import annotations

import logging
import re
import unicodedata
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from exceptions import ContractError, CorpusFormatError, DataError
from models import (
    Context,
    CorpusStats,
    FieldStats,
    Provenance,
    QaExample,
    QualityAssessment,
    QualityLabel,
    QualityReport,
)
from utils.evalmetrics import bleu, rouge_l
from utils.fileio import iter_jsonl, write_jsonl

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "context", "question", "answer", "provenance")
OPTIONAL_FIELDS = ("quality", "context_id", "alt_answers", "seed")


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def _string_field(record: dict, name: str, line: int) -> str:
    value = record.get(name)
    if not isinstance(value, str):
        reason = "missing required field" if name not in record else "must be a string"
        raise CorpusFormatError(reason, line, name)
    return _nfc(value)


def parse_example(record: dict, line: int) -> QaExample:
    for name in REQUIRED_FIELDS:
        _string_field(record, name, line)
    unknown = sorted(set(record) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS))
    if unknown:
        raise CorpusFormatError(f"unknown fields {unknown}", line, unknown[0])
    try:
        provenance = Provenance(record["provenance"])
    except ValueError:
        raise CorpusFormatError(f"unknown provenance {record['provenance']!r}", line, "provenance") from None
    quality = None
    if record.get("quality") is not None:
        try:
            quality = QualityLabel(record["quality"])
        except ValueError:
            raise CorpusFormatError(f"unknown quality level {record['quality']!r}", line, "quality") from None
    alt = record.get("alt_answers", [])
    if not isinstance(alt, list) or not all(isinstance(a, str) for a in alt):
        raise CorpusFormatError("must be a list of strings", line, "alt_answers")
    seed = record.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise CorpusFormatError("must be an integer", line, "seed")
    context_id = record.get("context_id")
    if context_id is not None and not isinstance(context_id, str):
        raise CorpusFormatError("must be a string", line, "context_id")
    return QaExample(
        id=_string_field(record, "id", line),
        context=_string_field(record, "context", line),
        question=_string_field(record, "question", line),
        answer=_string_field(record, "answer", line),
        quality=quality,
        provenance=provenance,
        context_id=context_id,
        alt_answers=[_nfc(a) for a in alt],
    )


def read_corpus(path: Path) -> list[QaExample]:
    """Načíta korpus; chybný riadok -> CorpusFormatError s číslom riadku a poľom."""
    corpus, seen = [], set()
    for line, record in iter_jsonl(path):
        example = parse_example(record, line)
        if example.id in seen:
            raise CorpusFormatError(f"duplicate id '{example.id}'", line, "id")
        seen.add(example.id)
        corpus.append(example)
    return corpus


def _stamp(record: dict, seed: Optional[int]) -> dict:
    return record if seed is None else {**record, "seed": seed}


def _canonical(example: QaExample) -> dict:
    data = example.to_dict()
    return {k: (_nfc(v) if isinstance(v, str) else v) for k, v in data.items()}


def write_corpus(corpus: Iterable[QaExample], path: Path, seed: Optional[int] = None) -> int:
    """Zapíše korpus; so seedom dostane každý riadok pole seed (pri čítaní sa ignoruje)."""
    corpus = list(corpus)
    ids = [ex.id for ex in corpus]
    if len(set(ids)) != len(ids):
        raise DataError("corpus ids must be unique")
    return write_jsonl(path, (_stamp(_canonical(ex), seed) for ex in corpus))


def read_contexts(path: Path) -> list[Context]:
    contexts = []
    for line, record in iter_jsonl(path):
        for name in ("id", "text"):
            if not isinstance(record.get(name), str):
                raise CorpusFormatError("missing required field", line, name)
        contexts.append(Context(record["id"], _nfc(record["text"]), record.get("source", "")))
    return contexts


def write_contexts(contexts: Iterable[Context], path: Path, seed: Optional[int] = None) -> int:
    return write_jsonl(path, (_stamp(c.to_dict(), seed) for c in contexts))


def read_predictions(path: Path) -> list[tuple[str, str]]:
    predictions = []
    for line, record in iter_jsonl(path):
        for name in ("id", "prediction"):
            if not isinstance(record.get(name), str):
                raise CorpusFormatError("missing required field", line, name)
        predictions.append((record["id"], _nfc(record["prediction"])))
    return predictions


def check_traceability(examples: Iterable[QaExample], contexts: Iterable[Context]) -> None:
    known = {c.id for c in contexts}
    orphans = [ex.id for ex in examples if ex.context_id is not None and ex.context_id not in known]
    if orphans:
        raise DataError(f"examples reference unknown contexts: {orphans}")


# ---------------------------------------------------------------------------
# statistiky
# ---------------------------------------------------------------------------

def field_stats(lengths: Sequence[int]) -> FieldStats:
    values = np.asarray(lengths, dtype=np.float64)
    q25, median, q75 = np.percentile(values, [25, 50, 75])
    return FieldStats(
        count=int(values.size),
        mean=float(values.mean()),
        std=float(values.std(ddof=1)) if values.size > 1 else 0.0,
        min=float(values.min()),
        q25=float(q25),
        median=float(median),
        q75=float(q75),
        max=float(values.max()),
    )


def compute_stats(corpus: Sequence[QaExample]) -> CorpusStats:
    """Dĺžky v znakoch (po NFC); kvartily lineárnou interpoláciou, std výberová (n-1)."""
    if not corpus:
        raise ContractError("cannot compute statistics of an empty corpus")
    return CorpusStats(
        context=field_stats([len(_nfc(ex.context)) for ex in corpus]),
        question=field_stats([len(_nfc(ex.question)) for ex in corpus]),
        answer=field_stats([len(_nfc(ex.answer)) for ex in corpus]),
    )


def quality_report(corpus: Sequence[QaExample]) -> QualityReport:
    unlabeled = [ex.id for ex in corpus if ex.quality is None]
    if unlabeled:
        raise DataError(f"unlabeled examples: {unlabeled}")
    if not corpus:
        raise ContractError("cannot report on an empty corpus")
    counts = {label: 0 for label in QualityLabel}
    for ex in corpus:
        counts[ex.quality] += 1
    total = len(corpus)
    percentages = {label: round(100.0 * count / total, 2) for label, count in counts.items()}
    return QualityReport(total, counts, percentages)


# ---------------------------------------------------------------------------
# kvalita
# ---------------------------------------------------------------------------

def _sentences(text: str) -> list[str]:
    return [s for s in re.split(r"(?<=[.!?;:])\s+", text.strip()) if s]


def best_reference_span(answer: str, context: str) -> str:
    """Súvislý úsek viet kontextu s najvyšším ROUGE-L F1 voči odpovedi."""
    sentences = _sentences(context)
    if not sentences:
        return context
    best, best_score = sentences[0], -1.0
    for i in range(len(sentences)):
        for j in range(i + 1, len(sentences) + 1):
            span = " ".join(sentences[i:j])
            score = rouge_l(answer, span)[2]
            if score > best_score:
                best, best_score = span, score
    return best


def score_quality(ex: QaExample, reference: str) -> tuple[float, float, QualityLabel]:
    """(rouge_l_f1, bleu, predbežná značka) odpovede voči referenčnému úseku kontextu."""
    if not reference.strip():
        raise ContractError(f"example '{ex.id}': quality reference must be non-empty")
    rl = rouge_l(ex.answer, reference)[2]
    return rl, bleu(ex.answer, [reference]), QualityLabel.from_score(rl)


def assess(ex: QaExample, reference: Optional[str] = None) -> QualityAssessment:
    reference = reference if reference is not None else best_reference_span(ex.answer, ex.context)
    rl, bl, provisional = score_quality(ex, reference)
    # ludska znacka ma vzdy prednost
    final = ex.quality if ex.human_labeled else provisional
    return QualityAssessment(ex.id, rl, bl, provisional, final, reference)


def label_corpus(corpus: Sequence[QaExample],
                 contexts: Optional[dict[str, str]] = None) -> tuple[list[QaExample], list[QualityAssessment]]:
    """Predbežné značky pre celý korpus; ľudské značky ostávajú nedotknuté."""
    labeled, assessments = [], []
    for ex in corpus:
        context = (contexts or {}).get(ex.context_id or "", ex.context)
        assessment = assess(ex, best_reference_span(ex.answer, context))
        assessments.append(assessment)
        labeled.append(QaExample(**{**ex.__dict__, "quality": assessment.final}))
    logger.info("labelled %d examples (%d kept human labels)", len(labeled),
                sum(1 for ex in corpus if ex.human_labeled))
    return labeled, assessments


def apply_human_labels(corpus: Sequence[QaExample], labels: Iterable[dict]) -> list[QaExample]:
    """
    Záznamy {id, quality, question?, answer?} od anotátorov. Zmena textu otázky alebo odpovede
    znamená provenance human-corrected, inak human-labeled.
    """
    by_id = {ex.id: ex for ex in corpus}
    updates: dict[str, QaExample] = {}
    for record in labels:
        ex_id = record.get("id")
        if ex_id not in by_id:
            raise DataError(f"label for unknown example id {ex_id!r}")
        try:
            quality = QualityLabel(record.get("quality"))
        except ValueError:
            raise DataError(f"example '{ex_id}': unknown quality level {record.get('quality')!r}") from None
        ex = updates.get(ex_id, by_id[ex_id])
        question = _nfc(record.get("question", ex.question))
        answer = _nfc(record.get("answer", ex.answer))
        corrected = question != ex.question or answer != ex.answer or ex.provenance is Provenance.HUMAN_CORRECTED
        updates[ex_id] = QaExample(**{
            **ex.__dict__,
            "question": question,
            "answer": answer,
            "quality": quality,
            "provenance": Provenance.HUMAN_CORRECTED if corrected else Provenance.HUMAN_LABELED,
        })
    return [updates.get(ex.id, ex) for ex in corpus]


def read_labels(path: Path) -> list[dict]:
    return [record for _, record in iter_jsonl(path)]

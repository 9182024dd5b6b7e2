"""
Metriky QA: exact match (s pravidlom pre negatívne otázky), tokenové F1, BLEU a ROUGE-N / ROUGE-L.
Všetky funkcie sú čisté; porovnávajú sa normalizované tokeny.
"""
from __future__ import annotations

import logging
import math
import unicodedata
from collections import Counter
from typing import Iterable, Sequence, Union

from exceptions import ConfigError, DataError
from models import ExampleScore, MetricReport, QaExample

logger = logging.getLogger(__name__)

BLEU_EPSILON = 1e-9


def normalize(text: str) -> list[str]:
    """NFC, malé písmená, bez interpunkcie (Unicode kategória P*), rozdelené podľa medzier."""
    text = unicodedata.normalize("NFC", text).lower()
    text = "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))
    return text.split()


def exact_match(pred: str, golds: Union[str, Sequence[str]]) -> int:
    if isinstance(golds, str):
        golds = [golds]
    golds = list(golds) or [""]
    pred_tokens = normalize(pred)
    for gold in golds:
        gold_tokens = normalize(gold)
        # negativna otazka: zhoda iba s prazdnou predikciou
        if not gold_tokens:
            if not pred_tokens:
                return 1
            continue
        if " ".join(pred_tokens) == " ".join(gold_tokens):
            return 1
    return 0


def _prf(matched: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    if matched == 0:
        return 0.0, 0.0, 0.0
    precision = matched / n_pred
    recall = matched / n_gold
    return precision, recall, 2 * precision * recall / (precision + recall)


def token_f1(pred: str, gold: str) -> tuple[float, float, float]:
    """(precision, recall, f1) nad multimnožinami tokenov; obe strany prázdne -> (1, 1, 1)."""
    pred_tokens, gold_tokens = normalize(pred), normalize(gold)
    if not pred_tokens and not gold_tokens:
        return 1.0, 1.0, 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0, 0.0, 0.0
    matched = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    return _prf(matched, len(pred_tokens), len(gold_tokens))


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, references: Union[str, Sequence[str]], max_n: int = 4) -> float:
    """
    Geometrický priemer orezaných n-gramových presností × brevity penalty.
    Rády, pre ktoré kandidát nemá žiadne n-gramy, sa vynechajú; nulový počet zhôd sa
    nahradí epsilonom 1e-9.
    """
    if max_n < 1:
        raise ConfigError(f"max_n must be >= 1, got {max_n}")
    if isinstance(references, str):
        references = [references]
    cand = normalize(candidate)
    refs = [normalize(r) for r in references]
    if not cand or not refs:
        return 0.0

    log_sum, orders = 0.0, 0
    for n in range(1, max_n + 1):
        cand_counts = ngrams(cand, n)
        total = sum(cand_counts.values())
        if total == 0:
            break
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, count in ngrams(ref, n).items():
                max_ref[gram] = max(max_ref[gram], count)
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        log_sum += math.log((clipped or BLEU_EPSILON) / total)
        orders += 1

    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / orders)


def rouge_n(candidate: str, reference: str, n: int = 1) -> tuple[float, float, float]:
    if n < 1:
        raise ConfigError(f"rouge n must be >= 1, got {n}")
    cand_counts, ref_counts = ngrams(normalize(candidate), n), ngrams(normalize(reference), n)
    n_cand, n_ref = sum(cand_counts.values()), sum(ref_counts.values())
    if n_cand == 0 or n_ref == 0:
        return 0.0, 0.0, 0.0
    overlap = sum((cand_counts & ref_counts).values())
    return _prf(overlap, n_cand, n_ref)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> tuple[float, float, float]:
    cand, ref = normalize(candidate), normalize(reference)
    if not cand or not ref:
        return 0.0, 0.0, 0.0
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def score_example(example_id: str, prediction: str, golds: Sequence[str]) -> ExampleScore:
    """EM aj F1 ako maximum cez všetky zlaté odpovede."""
    golds = list(golds) or [""]
    best = max((token_f1(prediction, g) for g in golds), key=lambda prf: prf[2])
    return ExampleScore(example_id, exact_match(prediction, golds), *best, prediction=prediction)


def score_corpus(predictions: Iterable[tuple[str, str]], gold: Sequence[QaExample]) -> MetricReport:
    """Súhrn v percentách; chýbajúce predikcie sa hodnotia ako prázdne."""
    if not gold:
        raise DataError("cannot score an empty gold corpus")
    gold_ids = {ex.id for ex in gold}
    by_id: dict[str, str] = {}
    for pred_id, text in predictions:
        if pred_id in by_id:
            raise DataError(f"duplicate prediction id '{pred_id}'")
        if pred_id not in gold_ids:
            raise DataError(f"prediction id '{pred_id}' does not exist in the gold corpus")
        by_id[pred_id] = text
    missing = len(gold_ids) - len(by_id)
    if missing:
        logger.warning("%d gold examples have no prediction and are scored as empty", missing)

    scores = [score_example(ex.id, by_id.get(ex.id, ""), ex.golds()) for ex in gold]
    n = len(scores)
    return MetricReport(
        exact=100.0 * sum(s.em for s in scores) / n,
        f1=100.0 * sum(s.f1 for s in scores) / n,
        per_example=scores,
        n=n,
    )

"""
Predspracovanie predpisov: čistenie textu, delenie na články, prevod vzorcov do KaTeX,
odstránenie duplikátov a kľúčové témy pre prompty.
"""
from __future__ import annotations

import logging
import re
import unicodedata
from collections import Counter
from typing import Iterable, Optional, Protocol, Sequence

from bs4 import BeautifulSoup

from exceptions import ConfigError
from models import Context, QaExample

logger = logging.getLogger(__name__)

MIN_SEGMENT_CHARS = 200
DEFAULT_SEGMENT_CHARS = 1500

HEADING_RE = re.compile(r"^Điều\s+\d+[a-zđ]?\.", re.IGNORECASE)
MATH_SPAN_RE = re.compile(r"\[math\](.*?)\[/math\]", re.DOTALL)

_OPERAND = r"(\([^()]*\)|[\w.]+)"
_FRACTION_RE = re.compile(_OPERAND + r"\s*/\s*" + _OPERAND)
_SUPERSCRIPT_RE = re.compile(r"(\w|\))\^" + _OPERAND)
_SYMBOLS = {"×": r"\times ", "≤": r"\leq ", "≥": r"\geq "}

STOP_WORDS = {
    # vietnamske
    "của", "và", "các", "được", "trong", "cho", "với", "theo", "này", "những", "một", "là", "có",
    "không", "thì", "hoặc", "khi", "đã", "để", "từ", "tại", "về", "do", "nếu", "mà", "như", "đến",
    "điều", "khoản", "phải", "người", "việc", "trên", "sau", "trước", "nhằm", "bao", "gồm",
    # anglicke
    "the", "and", "for", "with", "that", "this", "from", "are", "was", "were", "will", "have",
    "has", "been", "which", "their", "they", "shall", "must", "into",
}


def clean_text(raw: str) -> str:
    """Odstráni riadiace znaky, zlúči medzery do jednej a oreže okraje; výsledok je v NFC."""
    kept = "".join(ch for ch in raw if ch.isspace() or unicodedata.category(ch) not in ("Cc", "Cf"))
    collapsed = re.sub(r"\s+", " ", kept).strip()
    return unicodedata.normalize("NFC", collapsed)


def strip_markup(html: str) -> str:
    """Text z HTML zdroja; odseky zostanú na samostatných riadkoch."""
    soup = BeautifulSoup(html, "html.parser")
    for tag in soup(["script", "style"]):
        tag.decompose()
    return soup.get_text(separator="\n")


def _paragraphs(document: str) -> list[str]:
    return [p for p in (clean_text(line) for line in document.splitlines()) if p]


def _split_long(paragraph: str, max_chars: int) -> list[str]:
    # najprv po vetach, potom po slovach; jedno dlhe slovo ostane cele
    pieces = re.split(r"(?<=[.!?;:])\s+", paragraph)
    if any(len(p) > max_chars for p in pieces):
        pieces = paragraph.split(" ")
    return _pack(pieces, max_chars)


def _pack(pieces: Sequence[str], max_chars: int) -> list[str]:
    chunks: list[str] = []
    current = ""
    for piece in pieces:
        if not current:
            current = piece
        elif len(current) + 1 + len(piece) <= max_chars:
            current = f"{current} {piece}"
        else:
            chunks.append(current)
            current = piece
    if current:
        chunks.append(current)
    return chunks


def segment(document: str, max_chars: int = DEFAULT_SEGMENT_CHARS) -> list[str]:
    """
    Rozdelí dokument na články podľa nadpisov "Điều <n>." na začiatku odseku; príliš
    dlhé články ďalej po odsekoch. " ".join(segmenty) == clean_text(dokument).
    """
    if max_chars < MIN_SEGMENT_CHARS:
        raise ConfigError(f"max_chars must be >= {MIN_SEGMENT_CHARS}, got {max_chars}")
    articles: list[list[str]] = []
    for para in _paragraphs(document):
        if HEADING_RE.match(para) or not articles:
            articles.append([para])
        else:
            articles[-1].append(para)

    segments: list[str] = []
    for paras in articles:
        whole = " ".join(paras)
        if len(whole) <= max_chars:
            segments.append(whole)
            continue
        pieces: list[str] = []
        for para in paras:
            pieces.extend([para] if len(para) <= max_chars else _split_long(para, max_chars))
        segments.extend(_pack(pieces, max_chars))
    return segments


def _strip_parens(operand: str) -> str:
    if operand.startswith("(") and operand.endswith(")"):
        return operand[1:-1].strip()
    return operand


def _convert_math(expr: str) -> str:
    out = expr.strip()
    for symbol, latex in _SYMBOLS.items():
        out = out.replace(symbol, latex)
    out = _FRACTION_RE.sub(lambda m: rf"\frac{{{_strip_parens(m.group(1))}}}{{{_strip_parens(m.group(2))}}}", out)
    out = _SUPERSCRIPT_RE.sub(lambda m: f"{m.group(1)}^{{{_strip_parens(m.group(2))}}}", out)
    return re.sub(r"\s+", " ", out).strip()


def normalize_formula(text: str) -> str:
    """
    Úseky [math]...[/math] prepíše do KaTeX a obalí do $...$:
    a/b -> \\frac{a}{b}, x^n -> x^{n}, × -> \\times, ≤ -> \\leq, ≥ -> \\geq.
    Text mimo úsekov ostáva nezmenený.
    """
    return MATH_SPAN_RE.sub(lambda m: f"${_convert_math(m.group(1))}$", text)


class SpellChecker(Protocol):
    def correct(self, text: str) -> str: ...


class NoOpSpellChecker:
    def correct(self, text: str) -> str:
        return text


def jaccard_similarity(text1: str, text2: str) -> float:
    """Podobnosť dvoch textov podľa zhody množín slov."""
    words1 = set(re.findall(r"\w+", text1.lower()))
    words2 = set(re.findall(r"\w+", text2.lower()))
    if not words1 or not words2:
        return 0.0
    union = words1 | words2
    return len(words1 & words2) / len(union) if union else 0.0


def dedupe_contexts(contexts: Iterable[Context], threshold: float = 0.9) -> list[Context]:
    kept: list[Context] = []
    for ctx in contexts:
        if any(jaccard_similarity(ctx.text, other.text) >= threshold for other in kept):
            logger.debug("dropping near-duplicate context %s", ctx.id)
            continue
        kept.append(ctx)
    return kept


def dedupe_examples(examples: Iterable[QaExample], threshold: float = 0.9) -> list[QaExample]:
    kept: list[QaExample] = []
    for ex in examples:
        if any(jaccard_similarity(ex.question, other.question) >= threshold for other in kept):
            logger.debug("dropping near-duplicate question %s", ex.id)
            continue
        kept.append(ex)
    return kept


def key_themes(text: str, top_k: int = 5) -> list[str]:
    """Najčastejšie obsahové slová (bez stop slov a čísel), pri zhode skôr vyskytujúce sa prvé."""
    words = re.findall(r"\w+", unicodedata.normalize("NFC", text).lower())
    content = [w for w in words if len(w) >= 3 and not w.isdigit() and w not in STOP_WORDS]
    return [word for word, _ in Counter(content).most_common(top_k)]


def preprocess_document(raw: str, max_chars: int = DEFAULT_SEGMENT_CHARS, source: str = "",
                        html: bool = False, spell_checker: Optional[SpellChecker] = None,
                        dedupe_threshold: Optional[float] = 0.9, id_prefix: str = "ctx") -> list[Context]:
    """Celé predspracovanie jedného dokumentu: markup, čistenie, články, pravopis, vzorce, duplikáty."""
    checker = spell_checker or NoOpSpellChecker()
    text = strip_markup(raw) if html else raw
    contexts = []
    for i, seg in enumerate(segment(text, max_chars)):
        seg = normalize_formula(clean_text(checker.correct(seg)))
        contexts.append(Context(id=f"{id_prefix}-{i:04d}", text=seg, source=source))
    if dedupe_threshold is not None:
        before = len(contexts)
        contexts = dedupe_contexts(contexts, dedupe_threshold)
        if before != len(contexts):
            logger.info("removed %d near-duplicate segments", before - len(contexts))
    return contexts

"""
Šablóny inštrukcií: generovacie (prompt pre LLM, ktorý vymyslí otázku a odpoveď)
a tréningové (kontext + otázka -> odpoveď pre náš model).
"""
from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from exceptions import ConfigError
from models import Context, Prompt
from utils.preprocessing import key_themes

logger = logging.getLogger(__name__)

STYLES = ("plain", "chain_of_thought", "self_consistency_cot", "tree_of_thought")
GENERATION_FIELDS = ("context",)
TRAINING_FIELDS = ("context", "question", "answer")
OPTIONAL_FIELDS = ("focus",)

# dohodnuty format odpovede generatora; parsuje ho utils.qa_generator
ANSWER_FORMAT = (
    'Return ONLY a JSON object of the form {{"question": "...", "answer": "..."}} '
    "written in Vietnamese, without markdown formatting."
)


@dataclass(frozen=True)
class InstructionTemplate:
    name: str
    style: str
    body: str
    purpose: str = "generation"

    def __post_init__(self):
        if self.style not in STYLES:
            raise ConfigError(f"template '{self.name}': unknown style '{self.style}'")
        if self.purpose not in ("generation", "training"):
            raise ConfigError(f"template '{self.name}': unknown purpose '{self.purpose}'")

    def fields(self) -> list[str]:
        try:
            return [f for _, f, _, _ in string.Formatter().parse(self.body) if f is not None]
        except ValueError as exc:
            raise ConfigError(f"template '{self.name}': {exc}") from exc

    def require(self, required: Sequence[str]) -> None:
        """Každý povinný placeholder práve raz; neznáme placeholdery sú chyba."""
        found = self.fields()
        allowed = set(required) | set(OPTIONAL_FIELDS)
        for name in required:
            count = found.count(name)
            if count != 1:
                raise ConfigError(f"template '{self.name}' must contain {{{name}}} exactly once, found {count}")
        unknown = sorted(set(found) - allowed)
        if unknown:
            raise ConfigError(f"template '{self.name}' has unknown placeholders {unknown}")

    def render(self, **values: str) -> str:
        return self.body.format(**values)

    def segments(self) -> list[tuple[str, str]]:
        """Telo rozdelené na ('literal', text) a ('field', meno) v poradí výskytu."""
        parts: list[tuple[str, str]] = []
        for literal, field, _, _ in string.Formatter().parse(self.body):
            if literal:
                parts.append(("literal", literal))
            if field is not None:
                parts.append(("field", field))
        return parts


_COMMON_RULES = (
    "Rules:\n"
    "- The question must be answerable from the regulation excerpt alone\n"
    "- The answer must quote or closely paraphrase the excerpt\n"
    "- Do NOT invent articles, numbers or deadlines that are not in the excerpt\n"
)

_GENERATION = {
    "plain": (
        "You write question-answer pairs about a university regulation.\n\n"
        "Regulation excerpt:\n{context}\n\n"
        "Focus: {focus}\n\n"
        + _COMMON_RULES + "\n" + ANSWER_FORMAT
    ),
    "chain_of_thought": (
        "You write question-answer pairs about a university regulation.\n\n"
        "Regulation excerpt:\n{context}\n\n"
        "Focus: {focus}\n\n"
        "Think step by step before writing:\n"
        "1. Identify the rule, the actor and the condition in the excerpt\n"
        "2. Write a question a student would ask about that rule\n"
        "3. Derive the answer from the excerpt, one step at a time\n\n"
        + _COMMON_RULES + "\n" + ANSWER_FORMAT
    ),
    "self_consistency_cot": (
        "You write question-answer pairs about a university regulation.\n\n"
        "Regulation excerpt:\n{context}\n\n"
        "Focus: {focus}\n\n"
        "Reason step by step three times independently, each time writing a candidate answer "
        "to the same question. Keep only the answer that the majority of your reasoning paths agree on.\n\n"
        + _COMMON_RULES + "\n" + ANSWER_FORMAT
    ),
    "tree_of_thought": (
        "You write question-answer pairs about a university regulation.\n\n"
        "Regulation excerpt:\n{context}\n\n"
        "Focus: {focus}\n\n"
        "Imagine three experts reading the excerpt.\n"
        "Branch 1: the first expert proposes a question about who the rule applies to.\n"
        "Branch 2: the second expert proposes a question about what must be done.\n"
        "Branch 3: the third expert proposes a question about conditions or deadlines.\n"
        "Each expert writes one step of reasoning at a time and shares it with the group. "
        "Any expert whose reasoning contradicts the excerpt leaves. "
        "Finally choose the single best question and its answer.\n\n"
        + _COMMON_RULES + "\n" + ANSWER_FORMAT
    ),
}

_TRAINING = {
    "qa_instruction": (
        "plain",
        "Dựa vào ngữ cảnh sau, hãy trả lời câu hỏi.\n"
        "### Ngữ cảnh:\n{context}\n"
        "### Câu hỏi:\n{question}\n"
        "### Trả lời:\n{answer}",
    ),
    "qa_instruction_cot": (
        "chain_of_thought",
        "Dựa vào ngữ cảnh sau, hãy trả lời câu hỏi. Hãy suy nghĩ từng bước.\n"
        "### Ngữ cảnh:\n{context}\n"
        "### Câu hỏi:\n{question}\n"
        "### Trả lời:\n{answer}",
    ),
    "bare": ("plain", "{context}{question}{answer}"),
}


def _build_registry() -> dict[str, InstructionTemplate]:
    registry = {style: InstructionTemplate(style, style, body) for style, body in _GENERATION.items()}
    for name, (style, body) in _TRAINING.items():
        registry[name] = InstructionTemplate(name, style, body, purpose="training")
    return registry


TEMPLATES = _build_registry()


def get_template(name: str) -> InstructionTemplate:
    template = TEMPLATES.get(name)
    if template is None:
        raise ConfigError(f"unknown template '{name}', choose one of {sorted(TEMPLATES)}")
    return template


def generation_templates() -> list[str]:
    return [n for n, t in TEMPLATES.items() if t.purpose == "generation"]


def training_templates() -> list[str]:
    return [n for n, t in TEMPLATES.items() if t.purpose == "training"]


def craft_prompts(contexts: Iterable[Context], template: InstructionTemplate, k_per_context: int = 1,
                  themes_per_context: Optional[dict[str, list[str]]] = None) -> list[Prompt]:
    """
    k promptov pre každý kontext; prompt nesie id zdrojového kontextu.
    Pri k > 1 dostane každý prompt iné zameranie (kľúčovú tému kontextu).
    """
    if k_per_context < 1:
        raise ConfigError(f"k_per_context must be >= 1, got {k_per_context}")
    template.require(GENERATION_FIELDS)
    prompts = []
    for ctx in contexts:
        themes = (themes_per_context or {}).get(ctx.id)
        if themes is None:
            themes = key_themes(ctx.text, top_k=k_per_context)
        for j in range(k_per_context):
            focus = themes[j] if j < len(themes) else None
            focus_text = focus if focus else "the main rule of the excerpt"
            prompts.append(Prompt(
                id=f"{ctx.id}-p{j}",
                context_id=ctx.id,
                template=template.name,
                text=template.render(context=ctx.text, focus=focus_text),
                context=ctx.text,
                focus=focus,
            ))
    logger.info("crafted %d prompts from template '%s'", len(prompts), template.name)
    return prompts


def render_inference_prompt(template: InstructionTemplate, context: str, question: str) -> str:
    """Tréningová šablóna orezaná pred {answer}; model pokračuje odpoveďou."""
    template.require(TRAINING_FIELDS)
    out = []
    for kind, value in template.segments():
        if kind == "field" and value == "answer":
            break
        out.append(value if kind == "literal" else {"context": context, "question": question}[value])
    return "".join(out)

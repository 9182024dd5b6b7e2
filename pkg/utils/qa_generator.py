"""
Generovanie kandidátnych QA párov cez jazykový model.

Klient má jedinú metódu send(prompt, timeout_ms) -> text. GeminiCompletionClient volá živé
API (kľúč GEMINI_API_KEY z .env), ScriptedCompletionClient odpovedá podľa fixture súboru.
"""
from __future__ import annotations

import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

from exceptions import (
    CompletionError,
    CompletionRefusal,
    CompletionTimeout,
    ConfigError,
    DataError,
    MalformedCompletion,
)
from extensions import settings
from models import GenerationFailure, Prompt, Provenance, QaExample, QuarantineRecord

logger = logging.getLogger(__name__)

PREFERRED_MODELS = [
    "gemini-2.5-flash",
    "gemini-2.0-flash",
    "gemini-2.5-pro",
    "gemini-1.5-flash",
]

ERROR_KINDS = {
    "timeout": CompletionTimeout,
    "refusal": CompletionRefusal,
    "malformed": MalformedCompletion,
}


class CompletionClient(Protocol):
    def send(self, prompt: str, timeout_ms: int) -> str: ...


class GeminiCompletionClient:
    """Živý klient; skúša modely v poradí PREFERRED_MODELS, kým sa niektorý nepodarí inicializovať."""

    def __init__(self, api_key: Optional[str] = None, model_names: Sequence[str] = PREFERRED_MODELS):
        self.api_key = api_key or settings.gemini_api_key
        if not self.api_key:
            raise ConfigError("GEMINI_API_KEY is not set; put it into .env or use --mock with a fixture file")
        import google.generativeai as genai

        genai.configure(api_key=self.api_key)
        self.model = None
        for model_name in model_names:
            try:
                self.model = genai.GenerativeModel(model_name)
                logger.info("✓ Successfully initialized %s model", model_name)
                self.model_name = model_name
                break
            except Exception as e:
                logger.warning("X Failed to initialize %s: %s", model_name, e)
        if self.model is None:
            raise ConfigError("could not initialize any Gemini model")

    def send(self, prompt: str, timeout_ms: int) -> str:
        try:
            response = self.model.generate_content(prompt, request_options={"timeout": timeout_ms / 1000.0})
        except Exception as e:
            # google.api_core hlasi vyprsanie ako DeadlineExceeded
            if "deadline" in type(e).__name__.lower() or "timeout" in str(e).lower():
                raise CompletionTimeout(f"{self.model_name}: {e}") from e
            raise CompletionError(f"{self.model_name}: {e}") from e
        feedback = getattr(response, "prompt_feedback", None)
        if feedback is not None and getattr(feedback, "block_reason", None):
            raise CompletionRefusal(f"{self.model_name} blocked the prompt: {feedback.block_reason}")
        try:
            return response.text
        except ValueError as e:
            raise CompletionRefusal(f"{self.model_name} returned no text: {e}") from e


class ScriptedCompletionClient:
    """
    Odpovede podľa pravidiel: prvé pravidlo, ktorého "match" je podreťazcom promptu, vráti
    "response" alebo vyhodí chybu "error" (timeout | refusal | malformed). "times" obmedzí,
    koľkokrát sa chyba vyhodí; potom pravidlo vráti "response".
    """

    def __init__(self, rules: Sequence[dict], default: Optional[str] = None):
        self.rules = [dict(r) for r in rules]
        self.default = default
        self.calls: list[str] = []
        self._fired: dict[int, int] = {}
        self._lock = threading.Lock()
        for rule in self.rules:
            if "match" not in rule or ("response" not in rule and "error" not in rule):
                raise ConfigError(f"scripted rule needs 'match' and 'response' or 'error': {rule}")
            if "error" in rule and rule["error"] not in ERROR_KINDS:
                raise ConfigError(f"unknown scripted error kind {rule['error']!r}")

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedCompletionClient":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"mock fixture not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"mock fixture {path} is not valid JSON: {exc.msg}") from None
        return cls(data.get("rules", []), data.get("default"))

    def send(self, prompt: str, timeout_ms: int) -> str:
        with self._lock:
            self.calls.append(prompt)
            for index, rule in enumerate(self.rules):
                if rule["match"] not in prompt:
                    continue
                if "error" in rule:
                    fired = self._fired.get(index, 0)
                    limit = rule.get("times")
                    if limit is None or fired < limit:
                        self._fired[index] = fired + 1
                        raise ERROR_KINDS[rule["error"]](f"scripted {rule['error']} for '{rule['match']}'")
                if "response" in rule:
                    return rule["response"]
            if self.default is None:
                raise CompletionRefusal("no scripted response matches the prompt")
            return self.default


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    timeout_ms: int = 30000
    backoff_ms: int = 0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.timeout_ms < 1:
            raise ConfigError(f"timeout_ms must be >= 1, got {self.timeout_ms}")


@dataclass
class GenerationBatch:
    examples: list[QaExample] = field(default_factory=list)
    quarantine: list[QuarantineRecord] = field(default_factory=list)
    failures: list[GenerationFailure] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "examples": len(self.examples),
            "quarantine": [q.to_dict() for q in self.quarantine],
            "errors": [f.to_dict() for f in self.failures],
        }


def _strip_fences(text: str) -> str:
    text = text.strip()
    if text.startswith("```json"):
        text = text[7:]
    elif text.startswith("```"):
        text = text[3:]
    if text.endswith("```"):
        text = text[:-3]
    return text.strip()


_PAIR_RE = re.compile(r'"question"\s*:\s*"((?:[^"\\]|\\.)*)"\s*,\s*"answer"\s*:\s*"((?:[^"\\]|\\.)*)"', re.DOTALL)
_LINES_RE = re.compile(r"(?:Câu hỏi|Question)\s*:\s*(.+?)\s*(?:Trả lời|Answer)\s*:\s*(.+?)(?=(?:Câu hỏi|Question)\s*:|$)",
                       re.DOTALL | re.IGNORECASE)


def parse_response(text: str) -> list[tuple[str, str]]:
    """
    Odpoveď podľa dohodnutého formátu: JSON objekt {"question", "answer"} alebo zoznam takých.
    Ak JSON nejde načítať, skúsi sa regex; inak MalformedCompletion.
    """
    body = _strip_fences(text)
    pairs: list[tuple[str, str]] = []
    try:
        data = json.loads(body)
        items = data if isinstance(data, list) else [data]
        for item in items:
            if isinstance(item, dict) and isinstance(item.get("question"), str) and isinstance(item.get("answer"), str):
                pairs.append((item["question"], item["answer"]))
    except json.JSONDecodeError:
        for q, a in _PAIR_RE.findall(body):
            try:
                pairs.append((json.loads(f'"{q}"', strict=False), json.loads(f'"{a}"', strict=False)))
            except json.JSONDecodeError:
                continue
        if not pairs:
            pairs = [(q, a) for q, a in _LINES_RE.findall(body)]
    pairs = [(q.strip(), a.strip()) for q, a in pairs if q.strip() and a.strip()]
    if not pairs:
        raise MalformedCompletion("response does not contain a question/answer pair")
    return pairs


def _send_with_retry(client: CompletionClient, prompt: Prompt, policy: RetryPolicy) -> tuple[str, int]:
    last: Optional[CompletionError] = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return client.send(prompt.text, policy.timeout_ms), attempt
        except (CompletionRefusal, MalformedCompletion):
            raise
        except CompletionError as e:
            last = e
            logger.warning("X prompt %s attempt %d/%d failed: %s", prompt.id, attempt, policy.max_attempts, e)
            if policy.backoff_ms and attempt < policy.max_attempts:
                time.sleep(policy.backoff_ms * attempt / 1000.0)
    last.attempts = policy.max_attempts
    raise last


def _generate_one(client: CompletionClient, prompt: Prompt, policy: RetryPolicy) -> GenerationBatch:
    batch = GenerationBatch()
    try:
        raw, _ = _send_with_retry(client, prompt, policy)
    except CompletionRefusal as e:
        batch.quarantine.append(QuarantineRecord(prompt.id, prompt.context_id, "refusal", str(e)))
        return batch
    except MalformedCompletion as e:
        batch.quarantine.append(QuarantineRecord(prompt.id, prompt.context_id, "malformed", str(e)))
        return batch
    except CompletionError as e:
        batch.failures.append(GenerationFailure(prompt.id, prompt.context_id, e.kind, str(e),
                                                getattr(e, "attempts", policy.max_attempts)))
        return batch
    try:
        pairs = parse_response(raw)
    except MalformedCompletion:
        batch.quarantine.append(QuarantineRecord(prompt.id, prompt.context_id, "malformed", raw))
        return batch
    for j, (question, answer) in enumerate(pairs):
        batch.examples.append(QaExample(
            id=f"{prompt.id}-q{j}",
            context=prompt.context,
            question=question,
            answer=answer,
            provenance=Provenance.GENERATED,
            context_id=prompt.context_id,
        ))
    return batch


def generate_candidates(client: CompletionClient, prompts: Sequence[Prompt], policy: RetryPolicy = RetryPolicy(),
                        parallelism: int = 4) -> GenerationBatch:
    """
    Pošle prompty klientovi (najviac `parallelism` naraz) a výsledky zoradí podľa poradia promptov.
    Nečitateľné odpovede idú do karantény, vyčerpané opakovania do zoznamu chýb.
    """
    if parallelism < 1:
        raise ConfigError(f"parallelism must be >= 1, got {parallelism}")
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        parts = list(pool.map(lambda p: _generate_one(client, p, policy), prompts))
    result = GenerationBatch()
    for prompt, part in zip(prompts, parts):
        result.examples.extend(part.examples)
        result.quarantine.extend(part.quarantine)
        result.failures.extend(part.failures)
        if part.examples:
            logger.info("✓ %s: %d examples", prompt.id, len(part.examples))
        elif part.quarantine:
            logger.info("X %s: quarantined (%s)", prompt.id, part.quarantine[0].reason)
        else:
            logger.info("X %s: failed", prompt.id)
    return result

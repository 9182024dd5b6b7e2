"""Záznamy laboratória: QA príklady, kontexty, štatistiky, metriky a tréningový log."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional


class QualityLabel(str, Enum):
    VERY_GOOD = "VeryGood"
    GOOD = "Good"
    MEDIUM = "Medium"
    BAD = "Bad"
    VERY_BAD = "VeryBad"

    @classmethod
    def from_score(cls, rouge_l_f1: float) -> "QualityLabel":
        """Prahy sú polootvorené intervaly so zahrnutou dolnou hranicou."""
        for threshold, label in QUALITY_THRESHOLDS:
            if rouge_l_f1 >= threshold:
                return label
        return cls.VERY_BAD


QUALITY_THRESHOLDS = (
    (0.9, QualityLabel.VERY_GOOD),
    (0.75, QualityLabel.GOOD),
    (0.5, QualityLabel.MEDIUM),
    (0.25, QualityLabel.BAD),
)


class Provenance(str, Enum):
    GENERATED = "generated"
    HUMAN_LABELED = "human-labeled"
    HUMAN_CORRECTED = "human-corrected"


@dataclass
class QaExample:
    id: str
    context: str
    question: str
    answer: str
    quality: Optional[QualityLabel] = None
    provenance: Provenance = Provenance.GENERATED
    context_id: Optional[str] = None
    alt_answers: list[str] = field(default_factory=list)

    @property
    def human_labeled(self) -> bool:
        return self.provenance is not Provenance.GENERATED and self.quality is not None

    def golds(self) -> list[str]:
        return [self.answer, *self.alt_answers]

    def to_dict(self) -> dict:
        data = {
            "id": self.id,
            "context": self.context,
            "question": self.question,
            "answer": self.answer,
            "provenance": self.provenance.value,
        }
        # volitelne polia sa zapisu iba ak su nastavene
        if self.quality is not None:
            data["quality"] = self.quality.value
        if self.context_id is not None:
            data["context_id"] = self.context_id
        if self.alt_answers:
            data["alt_answers"] = list(self.alt_answers)
        return data


@dataclass
class Context:
    id: str
    text: str
    source: str = ""

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "source": self.source}


@dataclass
class Prompt:
    id: str
    context_id: str
    template: str
    text: str
    context: str = ""
    focus: Optional[str] = None


@dataclass
class FieldStats:
    count: int
    mean: float
    std: float
    min: float
    q25: float
    median: float
    q75: float
    max: float

    def to_dict(self) -> dict:
        return asdict(self)


STAT_COLUMNS = ("count", "mean", "std", "min", "q25", "median", "q75", "max")


@dataclass
class CorpusStats:
    context: FieldStats
    question: FieldStats
    answer: FieldStats

    def to_dict(self) -> dict:
        return {"context": self.context.to_dict(), "question": self.question.to_dict(),
                "answer": self.answer.to_dict()}


@dataclass
class ExampleScore:
    id: str
    em: int
    precision: float
    recall: float
    f1: float
    prediction: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricReport:
    exact: float
    f1: float
    per_example: list[ExampleScore]
    n: int

    def to_dict(self) -> dict:
        return {"exact": self.exact, "f1": self.f1, "n": self.n,
                "per_example": [s.to_dict() for s in self.per_example]}


@dataclass
class LossRecord:
    step: int
    epoch: int
    train_loss: float
    lr: float
    wall_ms: int
    val_loss: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QuarantineRecord:
    prompt_id: str
    context_id: str
    reason: str
    raw: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GenerationFailure:
    prompt_id: str
    context_id: str
    kind: str
    message: str
    attempts: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QualityAssessment:
    id: str
    rouge_l_f1: float
    bleu: float
    provisional: QualityLabel
    final: QualityLabel
    reference: str

    def to_dict(self) -> dict:
        data = asdict(self)
        data["provisional"] = self.provisional.value
        data["final"] = self.final.value
        return data


@dataclass
class QualityReport:
    total: int
    counts: dict[QualityLabel, int]
    percentages: dict[QualityLabel, float]

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "levels": [{"level": label.value, "count": self.counts[label], "percent": self.percentages[label]}
                       for label in QualityLabel],
        }

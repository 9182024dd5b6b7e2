"""Testy korpusu: JSONL formát, štatistiky, hodnotenie kvality a ľudské značky."""
import json
import statistics
import unicodedata

import pytest

from exceptions import ContractError, CorpusFormatError, DataError
from models import Provenance, QaExample, QualityLabel
from utils import corpus as cp


@pytest.fixture
def corpus_path(fixtures_dir):
    return fixtures_dir / "small_corpus.jsonl"


@pytest.fixture
def small_corpus(corpus_path):
    return cp.read_corpus(corpus_path)


def write_lines(path, *records):
    path.write_text("\n".join(r if isinstance(r, str) else json.dumps(r, ensure_ascii=False) for r in records),
                    encoding="utf-8")
    return path


def record(**overrides):
    base = {"id": "x1", "context": "c", "question": "q", "answer": "a", "provenance": "generated"}
    return {**base, **overrides}


def linear_quantile(values, p):
    ordered = sorted(values)
    pos = p * (len(ordered) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(ordered) - 1)
    return ordered[lo] + (ordered[hi] - ordered[lo]) * (pos - lo)


class TestReadWrite:
    def test_fixture_corpus(self, small_corpus):
        assert [ex.id for ex in small_corpus] == ["q1", "q2", "q3", "q4"]
        assert small_corpus[2].quality is QualityLabel.GOOD
        assert small_corpus[2].provenance is Provenance.HUMAN_LABELED
        assert small_corpus[3].answer == ""

    def test_write_then_read(self, small_corpus, tmp_path):
        path = tmp_path / "out.jsonl"
        assert cp.write_corpus(small_corpus, path) == 4
        assert cp.read_corpus(path) == small_corpus

    def test_seed_is_stamped_and_ignored_on_read(self, small_corpus, tmp_path):
        path = tmp_path / "out.jsonl"
        cp.write_corpus(small_corpus, path, seed=11)
        lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert {line["seed"] for line in lines} == {11}
        assert cp.read_corpus(path) == small_corpus

    def test_seed_must_be_an_integer(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", record(seed="7"))
        with pytest.raises(CorpusFormatError) as info:
            cp.read_corpus(path)
        assert info.value.field == "seed"

    def test_text_is_stored_composed(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", record(answer=unicodedata.normalize("NFD", "học phí")))
        assert cp.read_corpus(path)[0].answer == unicodedata.normalize("NFC", "học phí")

    def test_missing_field_reports_line(self, tmp_path):
        bad = record(id="x2")
        del bad["question"]
        path = write_lines(tmp_path / "c.jsonl", record(), "", bad)
        with pytest.raises(CorpusFormatError) as info:
            cp.read_corpus(path)
        assert (info.value.line, info.value.field) == (3, "question")

    def test_invalid_json(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", record(), "{not json")
        with pytest.raises(CorpusFormatError, match="line 2"):
            cp.read_corpus(path)

    @pytest.mark.parametrize("overrides, field", [
        ({"provenance": "machine"}, "provenance"),
        ({"quality": "Excellent"}, "quality"),
        ({"alt_answers": "x"}, "alt_answers"),
        ({"answer": 3}, "answer"),
        ({"score": 1}, "score"),
    ])
    def test_bad_field(self, tmp_path, overrides, field):
        path = write_lines(tmp_path / "c.jsonl", record(**overrides))
        with pytest.raises(CorpusFormatError) as info:
            cp.read_corpus(path)
        assert info.value.field == field

    def test_duplicate_id(self, tmp_path):
        path = write_lines(tmp_path / "c.jsonl", record(), record())
        with pytest.raises(CorpusFormatError, match="duplicate"):
            cp.read_corpus(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            cp.read_corpus(tmp_path / "none.jsonl")

    def test_contexts_and_traceability(self, fixtures_dir, small_corpus):
        contexts = cp.read_contexts(fixtures_dir / "contexts.jsonl")
        assert [c.id for c in contexts] == ["quy_che-0001", "quy_che-0002"]
        cp.check_traceability(small_corpus, contexts)
        with pytest.raises(DataError, match="q1"):
            cp.check_traceability(small_corpus[:1], contexts[:1])

    def test_predictions(self, tmp_path):
        path = write_lines(tmp_path / "p.jsonl", {"id": "q1", "prediction": "30 ngày"})
        assert cp.read_predictions(path) == [("q1", "30 ngày")]
        with pytest.raises(CorpusFormatError):
            cp.read_predictions(write_lines(tmp_path / "bad.jsonl", {"id": "q1"}))


class TestStats:
    def test_matches_brute_force(self, small_corpus):
        stats = cp.compute_stats(small_corpus)
        for name in ("context", "question", "answer"):
            lengths = [len(getattr(ex, name)) for ex in small_corpus]
            got = getattr(stats, name)
            assert got.count == 4
            assert got.mean == pytest.approx(sum(lengths) / 4)
            assert got.std == pytest.approx(statistics.stdev(lengths))
            assert (got.min, got.max) == (min(lengths), max(lengths))
            assert got.q25 == pytest.approx(linear_quantile(lengths, 0.25))
            assert got.median == pytest.approx(statistics.median(lengths))
            assert got.q75 == pytest.approx(linear_quantile(lengths, 0.75))

    def test_counts_characters_not_bytes(self):
        stats = cp.compute_stats([QaExample("a", "học phí", "q", "a")])
        assert stats.context.max == 7
        assert stats.context.std == 0.0

    def test_empty_corpus(self):
        with pytest.raises(ContractError):
            cp.compute_stats([])


class TestQuality:
    @pytest.mark.parametrize("score, label", [
        (1.0, QualityLabel.VERY_GOOD), (0.9, QualityLabel.VERY_GOOD), (0.8999, QualityLabel.GOOD),
        (0.75, QualityLabel.GOOD), (0.5, QualityLabel.MEDIUM), (0.25, QualityLabel.BAD),
        (0.2499, QualityLabel.VERY_BAD), (0.0, QualityLabel.VERY_BAD),
    ])
    def test_thresholds(self, score, label):
        assert QualityLabel.from_score(score) is label

    def test_report_percentages(self):
        corpus = [QaExample(f"e{i}", "c", "q", "a", quality=QualityLabel.VERY_GOOD if i < 631 else QualityLabel.GOOD)
                  for i in range(1149)]
        report = cp.quality_report(corpus)
        assert report.total == 1149
        assert report.counts[QualityLabel.VERY_GOOD] == 631
        assert report.percentages[QualityLabel.VERY_GOOD] == 54.92
        assert report.percentages[QualityLabel.MEDIUM] == 0.0

    def test_report_needs_labels(self, small_corpus):
        with pytest.raises(DataError, match="q1"):
            cp.quality_report(small_corpus)

    def test_best_span_is_the_answering_sentence(self, small_corpus):
        span = cp.best_reference_span(small_corpus[1].answer, small_corpus[1].context)
        assert span.startswith("Sinh viên không nộp học phí")

    def test_score_quality_needs_reference(self, small_corpus):
        with pytest.raises(ContractError):
            cp.score_quality(small_corpus[0], "  ")

    def test_label_corpus_keeps_human_labels(self, small_corpus):
        labeled, assessments = cp.label_corpus(small_corpus)
        assert all(ex.quality is not None for ex in labeled)
        assert labeled[2].quality is QualityLabel.GOOD
        # 12 tokenov odpovede v 21-tokenovej vete
        assert assessments[1].rouge_l_f1 == pytest.approx(24 / 33)
        assert assessments[1].provisional is QualityLabel.MEDIUM
        assert labeled[3].quality is QualityLabel.VERY_BAD
        assert small_corpus[0].quality is None

    def test_contexts_override_embedded_text(self, small_corpus):
        _, assessments = cp.label_corpus(small_corpus[:1], {"quy_che-0002": "Sinh viên nghỉ hè vào tháng bảy."})
        assert assessments[0].reference == "Sinh viên nghỉ hè vào tháng bảy."


class TestHumanLabels:
    def test_quality_only_is_human_labeled(self, small_corpus):
        out = cp.apply_human_labels(small_corpus, [{"id": "q1", "quality": "Medium"}])
        assert out[0].quality is QualityLabel.MEDIUM
        assert out[0].provenance is Provenance.HUMAN_LABELED
        assert out[1] is small_corpus[1]

    def test_changed_answer_is_human_corrected(self, small_corpus):
        out = cp.apply_human_labels(small_corpus, [{"id": "q4", "quality": "VeryGood", "answer": "Không"}])
        assert out[3].answer == "Không"
        assert out[3].provenance is Provenance.HUMAN_CORRECTED

    def test_unknown_id(self, small_corpus):
        with pytest.raises(DataError):
            cp.apply_human_labels(small_corpus, [{"id": "q9", "quality": "Good"}])

    def test_unknown_level(self, small_corpus):
        with pytest.raises(DataError):
            cp.apply_human_labels(small_corpus, [{"id": "q1", "quality": "Great"}])

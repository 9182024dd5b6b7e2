"""Testy načítania konfigurácie tréningového behu."""
import json

import pytest

from exceptions import ConfigError
from runconfig import load_run_config, parse_run_config


@pytest.fixture
def raw(fixtures_dir):
    return json.loads((fixtures_dir / "copy_task.json").read_text(encoding="utf-8"))


class TestLoad:
    def test_fixture(self, fixtures_dir):
        cfg = load_run_config(fixtures_dir / "copy_task.json", mode="lora")
        assert cfg.seed == 7 and cfg.mode == "lora" and cfg.precision == "float64"
        assert cfg.model.d_model == 16 and cfg.model.window == 16
        assert (cfg.optimizer.batch_size, cfg.optimizer.learning_rate) == (4, 0.001)
        assert cfg.lora.rank == 2 and cfg.lora.dropout == 0.0
        assert cfg.paths.checkpoint_dir == fixtures_dir / "ckpt"
        assert cfg.paths.run_log == fixtures_dir / "ckpt" / "run_log.jsonl"

    def test_to_dict_is_json(self, fixtures_dir):
        cfg = load_run_config(fixtures_dir / "copy_task.json")
        data = json.loads(json.dumps(cfg.to_dict()))
        assert data["model"]["d_model"] == 16
        assert data["optimizer"]["num_epochs"] == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "none.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"seed": 1,\n"model": }', encoding="utf-8")
        with pytest.raises(ConfigError, match="line 2"):
            load_run_config(path)


class TestParse:
    def test_mode_defaults(self):
        cfg = parse_run_config({}, "lora")
        assert (cfg.optimizer.batch_size, cfg.optimizer.learning_rate) == (4, 2e-4)
        assert cfg.lora.rank == 128
        assert parse_run_config({}, "full").lora is None

    def test_targets_become_tuple(self, raw):
        raw["lora"]["targets"] = ["layers.*.attn.q", "head"]
        assert parse_run_config(raw, "lora").lora.targets == ("layers.*.attn.q", "head")

    @pytest.mark.parametrize("section, key, value", [
        ("optimizer", "batch_size", "4"),
        ("optimizer", "batch_size", True),
        ("model", "dropout", 0.1),
        ("data", "kind", 3),
        ("lora", "rank", 2.5),
    ])
    def test_schema_errors(self, raw, section, key, value):
        raw[section][key] = value
        with pytest.raises(ConfigError, match=key):
            parse_run_config(raw, "lora")

    def test_unknown_top_level_key(self, raw):
        raw["scheduler"] = "cosine"
        with pytest.raises(ConfigError, match="scheduler"):
            parse_run_config(raw, "full")

    def test_unknown_mode(self, raw):
        with pytest.raises(ConfigError):
            parse_run_config(raw, "prefix")

    def test_unknown_data_kind(self, raw):
        raw["data"]["kind"] = "web"
        with pytest.raises(ConfigError):
            parse_run_config(raw, "full")

    def test_corpus_needs_existing_path(self, raw, tmp_path):
        raw["data"]["kind"] = "corpus"
        with pytest.raises(ConfigError, match="paths.corpus"):
            parse_run_config(raw, "full", tmp_path)
        raw["paths"]["corpus"] = "missing.jsonl"
        with pytest.raises(ConfigError, match="does not exist"):
            parse_run_config(raw, "full", tmp_path)

    def test_corpus_path_is_relative_to_config(self, raw, fixtures_dir):
        raw["data"]["kind"] = "corpus"
        raw["paths"]["corpus"] = "small_corpus.jsonl"
        assert parse_run_config(raw, "full", fixtures_dir).paths.corpus == fixtures_dir / "small_corpus.jsonl"

    def test_bad_precision(self, raw):
        raw["precision"] = "float16"
        with pytest.raises(ConfigError):
            parse_run_config(raw, "full")

    def test_invalid_model_values(self, raw):
        raw["model"]["n_heads"] = 3
        with pytest.raises(ConfigError):
            parse_run_config(raw, "full")

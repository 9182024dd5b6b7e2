from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from engine import numerics as nx
from engine.model import ModelConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def float64():
    """Testy gradientov a ekvivalencií bežia v dvojitej presnosti."""
    with nx.precision("float64"):
        yield


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def sliding_config() -> ModelConfig:
    return ModelConfig(d_model=16, n_layers=2, n_heads=2, vocab_size=32, max_seq_len=64, window=3)


@pytest.fixture
def alibi_config() -> ModelConfig:
    return ModelConfig(d_model=16, n_layers=2, n_heads=4, vocab_size=32, max_seq_len=64, attention="alibi")


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()

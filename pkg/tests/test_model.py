"""Testy dekodérového modelu: masky, kauzalita, ALiBi, počty parametrov."""
import numpy as np
import pytest

from engine import numerics as nx
from engine.model import (
    DecoderModel,
    ModelConfig,
    alibi_bias,
    alibi_slopes,
    apply_sliding_window_mask,
    expected_param_count,
    param_count,
    window_mask,
)
from engine.numerics import Tensor
from exceptions import ConfigError, ContractError, LengthError, TokenIndexError


class TestMasks:
    def test_window_mask_keeps_last_w_positions(self):
        allowed = window_mask(range(6), range(6), 3)
        assert allowed.sum(axis=1).tolist() == [1, 2, 3, 3, 3, 3]
        assert allowed[5].tolist() == [False, False, False, True, True, True]

    def test_window_mask_is_causal(self):
        allowed = window_mask(range(4), range(4), None)
        assert not np.triu(allowed, k=1).any()
        assert allowed[np.tril_indices(4)].all()

    def test_window_of_one_sees_only_itself(self):
        np.testing.assert_array_equal(window_mask(range(3), range(3), 1), np.eye(3, dtype=bool))

    def test_sliding_window_mask_rejects_small_window(self):
        with pytest.raises(ConfigError):
            apply_sliding_window_mask(Tensor(np.zeros((2, 2))), [0, 1], [0, 1], 0)

    def test_sliding_window_mask_fills_minus_infinity(self):
        masked = apply_sliding_window_mask(Tensor(np.zeros((3, 3))), [0, 1, 2], [0, 1, 2], 2)
        assert np.isneginf(masked.data[2, 0])
        assert masked.data[2, 1] == 0.0


class TestAlibi:
    def test_slopes_are_geometric(self):
        slopes = alibi_slopes(8)
        np.testing.assert_allclose(slopes, [2.0 ** -(i + 1) for i in range(8)])

    def test_zero_bias_at_distance_zero(self):
        bias = alibi_bias(4, range(5), range(5)).data
        for h in range(4):
            np.testing.assert_array_equal(np.diag(bias[h]), 0.0)

    def test_bias_decreases_with_distance(self, float64):
        bias = alibi_bias(4, [10], range(11)).data
        for h in range(4):
            # kluce zoradene od najvzdialenejsieho po najblizsi
            assert (np.diff(bias[h, 0]) > 0).all()

    def test_negative_positions(self):
        with pytest.raises(ContractError):
            alibi_bias(2, [-1], [0])

    def test_post_embedding_layernorm(self, float64):
        config = ModelConfig(d_model=16, n_layers=1, n_heads=4, vocab_size=32, attention="alibi", norm_eps=1e-12)
        model = DecoderModel(config, seed=3)
        out = model.embed([1, 5, 9, 30]).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)

    def test_alibi_requires_embedding_layernorm(self):
        with pytest.raises(ConfigError):
            ModelConfig(attention="alibi", embedding_layernorm=False)


class TestConfig:
    def test_round_trip_through_dict(self, sliding_config):
        assert ModelConfig.from_dict(sliding_config.to_dict()) == sliding_config

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="dropout"):
            ModelConfig.from_dict({"d_model": 32, "dropout": 0.1})

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(d_model=30, n_heads=4)

    def test_window_must_be_positive(self):
        with pytest.raises(ConfigError):
            ModelConfig(window=0)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            ModelConfig(attention="global")

    def test_cache_window(self):
        assert ModelConfig(window=5).cache_window == 5
        assert ModelConfig(attention="alibi", max_seq_len=40).cache_window == 40


class TestParameters:
    def test_reference_sliding_count(self):
        config = ModelConfig(d_model=32, n_layers=2, n_heads=2, vocab_size=64)
        assert expected_param_count(config) == 28992
        assert param_count(DecoderModel(config)) == 28992

    @pytest.mark.parametrize("attention", ["sliding_window", "alibi"])
    @pytest.mark.parametrize("n_layers", [0, 1, 3])
    def test_count_matches_formula(self, attention, n_layers):
        config = ModelConfig(d_model=16, n_layers=n_layers, n_heads=2, vocab_size=40, attention=attention)
        assert param_count(DecoderModel(config)) == expected_param_count(config)

    def test_same_seed_same_weights(self, sliding_config):
        a, b = DecoderModel(sliding_config, seed=5), DecoderModel(sliding_config, seed=5)
        assert a.checksum() == b.checksum()
        assert a.checksum() != DecoderModel(sliding_config, seed=6).checksum()

    def test_load_state_missing_tensor(self, sliding_config):
        model = DecoderModel(sliding_config)
        state = {name: t.data for name, t in model.params.items() if name != "head.weight"}
        with pytest.raises(ContractError, match="head.weight"):
            model.load_state(state)

    def test_load_state_copies_values(self, sliding_config):
        source, target = DecoderModel(sliding_config, seed=1), DecoderModel(sliding_config, seed=2)
        target.load_state({name: t.data for name, t in source.params.items()})
        assert target.checksum() == source.checksum()


class TestForward:
    def test_logits_shape(self, sliding_config):
        logits = DecoderModel(sliding_config).forward([1, 2, 3, 4])
        assert logits.shape == (4, sliding_config.vocab_size)

    def test_zero_layer_model(self):
        config = ModelConfig(d_model=8, n_layers=0, n_heads=2, vocab_size=16)
        assert DecoderModel(config).forward([1, 2]).shape == (2, 16)

    def test_empty_input(self, sliding_config):
        with pytest.raises(ContractError):
            DecoderModel(sliding_config).forward([])

    def test_token_out_of_range(self, sliding_config):
        with pytest.raises(TokenIndexError):
            DecoderModel(sliding_config).forward([0, sliding_config.vocab_size])

    def test_too_long_without_cache(self):
        config = ModelConfig(d_model=8, n_layers=1, n_heads=2, vocab_size=16, max_seq_len=4)
        with pytest.raises(LengthError):
            DecoderModel(config).forward([1] * 5)

    @pytest.mark.parametrize("attention", ["sliding_window", "alibi"])
    def test_causality(self, float64, attention):
        config = ModelConfig(d_model=16, n_layers=2, n_heads=2, vocab_size=32, window=4, attention=attention)
        model = DecoderModel(config, seed=11)
        tokens = [3, 7, 1, 9, 4, 4, 2, 8]
        changed = list(tokens)
        changed[5] = 20
        a, b = model.forward(tokens).data, model.forward(changed).data
        np.testing.assert_allclose(a[:5], b[:5], rtol=0, atol=1e-12)
        assert not np.allclose(a[5:], b[5:])

    def test_window_limits_what_a_position_sees(self, float64):
        # jedna vrstva: pozicia q vidi iba tokeny q-W+1..q
        config = ModelConfig(d_model=16, n_layers=1, n_heads=2, vocab_size=32, window=3)
        model = DecoderModel(config, seed=4)
        tokens = [5, 6, 7, 8, 9, 10, 11]
        changed = [25] + tokens[1:]
        a, b = model.forward(tokens).data, model.forward(changed).data
        assert not np.allclose(a[:3], b[:3])
        np.testing.assert_allclose(a[3:], b[3:], rtol=0, atol=1e-12)

    def test_forward_is_deterministic(self, sliding_config):
        model = DecoderModel(sliding_config, seed=9)
        np.testing.assert_array_equal(model.forward([1, 2, 3]).data, model.forward([1, 2, 3]).data)

    def test_no_grad_forward_keeps_tape_empty(self, sliding_config):
        model = DecoderModel(sliding_config)
        with nx.ComputeTape() as tape:
            with nx.no_grad():
                model.forward([1, 2])
        assert len(tape) == 0


def reachable_positions(source: int, length: int, window: int, n_layers: int) -> set[int]:
    """Vrstvený graf: pozícia i vo vrstve l+1 číta pozície i-W+1..i z vrstvy l."""
    reach = {source}
    for _ in range(n_layers):
        reach = {i for i in range(length) if any(0 <= i - k < window for k in reach)}
    return reach


class TestCrossLayerReach:
    WINDOW = 2
    TOKENS = [5, 6, 7, 8, 9, 10, 11, 12]

    @pytest.mark.parametrize("n_layers", [1, 2, 3])
    @pytest.mark.parametrize("source", [0, 2])
    def test_perturbation_spreads_like_the_layered_graph(self, float64, n_layers, source):
        config = ModelConfig(d_model=16, n_layers=n_layers, n_heads=2, vocab_size=32, window=self.WINDOW)
        model = DecoderModel(config, seed=21)
        changed = list(self.TOKENS)
        changed[source] = 30
        diff = np.abs(model.forward(self.TOKENS).data - model.forward(changed).data).max(axis=-1)
        sensitive = {i for i, d in enumerate(diff) if d > 1e-12}
        assert sensitive == reachable_positions(source, len(self.TOKENS), self.WINDOW, n_layers)
        assert all(i - source < self.WINDOW * n_layers for i in sensitive)

    def test_three_layers_with_window_two_reach_position_three(self, float64):
        config = ModelConfig(d_model=16, n_layers=3, n_heads=2, vocab_size=32, window=2)
        model = DecoderModel(config, seed=21)
        changed = [30] + self.TOKENS[1:]
        diff = np.abs(model.forward(self.TOKENS).data - model.forward(changed).data).max(axis=-1)
        assert diff[3] > 1e-12
        np.testing.assert_allclose(diff[4:], 0.0, atol=1e-12)


class TestTapeLifetime:
    def test_forward_without_tape_leaves_no_global_state(self, sliding_config):
        model = DecoderModel(sliding_config)
        outputs = [model.forward([1, 2, 3, 4]) for _ in range(5)]
        assert nx.current_tape() is None
        sizes = {len(out._tape) for out in outputs}
        assert len(sizes) == 1
        assert len({id(out._tape) for out in outputs}) == 5

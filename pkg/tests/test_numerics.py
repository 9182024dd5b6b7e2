"""Testy tenzorovej knižnice: hodnoty operácií, spätná derivácia a kontrola gradientov."""
import math

import numpy as np
import pytest

from engine import numerics as nx
from engine.numerics import ComputeTape, Tensor
from exceptions import ConfigError, ContractError, DimensionError, NumericError, TokenIndexError

GRAD_TOLERANCE = 1e-4


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return nx.tensor_sum(nx.mul(out, Tensor(weights, dtype=out.data.dtype)))


class TestValues:
    def test_matmul_small_example(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(nx.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(DimensionError):
            nx.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_softmax_rows_sum_to_one(self, rng):
        probs = nx.softmax_rows(Tensor(rng.normal(size=(4, 7))))
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, rtol=1e-5)

    def test_softmax_is_shift_invariant(self, float64):
        x = np.array([[1.0, 2.0, 3.0]])
        np.testing.assert_allclose(nx.softmax_rows(Tensor(x)).data, nx.softmax_rows(Tensor(x + 1000.0)).data)

    def test_softmax_fully_masked_row(self):
        scores = nx.masked_fill(Tensor(np.zeros((2, 3))), np.array([[True, False, False], [False, False, False]]))
        with pytest.raises(NumericError):
            nx.softmax_rows(scores)

    def test_masked_positions_get_zero_probability(self):
        scores = nx.masked_fill(Tensor(np.zeros((1, 4))), np.array([[True, True, False, False]]))
        np.testing.assert_allclose(nx.softmax_rows(scores).data, [[0.5, 0.5, 0.0, 0.0]])

    def test_nan_is_rejected(self):
        with pytest.raises(NumericError):
            Tensor([1.0, float("nan")])

    def test_positive_infinity_is_rejected(self):
        with pytest.raises(NumericError):
            Tensor([float("inf")])

    def test_layer_norm_zero_mean_unit_variance(self, float64, rng):
        x = Tensor(rng.normal(3.0, 5.0, size=(5, 8)))
        out = nx.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-5)
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-5)

    def test_layer_norm_bad_eps(self):
        with pytest.raises(ConfigError):
            nx.layer_norm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_activations_at_zero(self):
        zero = Tensor(np.zeros(3))
        np.testing.assert_array_equal(nx.gelu(zero).data, 0.0)
        np.testing.assert_array_equal(nx.silu(zero).data, 0.0)

    def test_cross_entropy_uniform_logits(self, float64):
        loss = nx.cross_entropy(Tensor(np.zeros((3, 10))), [1, 2, 3])
        assert loss.item() == pytest.approx(math.log(10))

    def test_cross_entropy_target_out_of_range(self):
        with pytest.raises(TokenIndexError):
            nx.cross_entropy(Tensor(np.zeros((2, 4))), [1, 4])

    def test_embedding_out_of_range(self):
        with pytest.raises(TokenIndexError):
            nx.embedding(Tensor(np.zeros((4, 2))), [0, 4])

    def test_rotary_keeps_norm(self, float64, rng):
        x = Tensor(rng.normal(size=(5, 8)))
        out = nx.rotary(x, np.arange(5) + 17)
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), np.linalg.norm(x.data, axis=-1))

    def test_rotary_position_zero_is_identity(self, float64, rng):
        x = Tensor(rng.normal(size=(1, 6)))
        np.testing.assert_allclose(nx.rotary(x, [0]).data, x.data)

    def test_dropout_is_identity_outside_training(self, rng):
        x = Tensor(np.ones((3, 3)))
        assert nx.dropout(x, 0.5, rng, training=False) is x

    def test_dropout_bad_probability(self, rng):
        with pytest.raises(ConfigError):
            nx.dropout(Tensor(np.ones(3)), 1.0, rng, training=True)

    def test_precision_switches_default_dtype(self):
        with nx.precision("float64"):
            assert Tensor([1.0]).data.dtype == np.float64
        assert Tensor([1.0]).data.dtype == np.float32

    def test_unknown_precision(self):
        with pytest.raises(ConfigError):
            with nx.precision("float16"):
                pass


class TestBackward:
    def test_reused_tensor_accumulates(self, float64):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        loss = nx.tensor_sum(nx.mul(x, x))
        nx.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])

    def test_matmul_gradient(self, float64):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0], [4.0]], requires_grad=True)
        nx.backward(nx.tensor_sum(nx.matmul(a, b)))
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]])
        np.testing.assert_allclose(b.grad, [[1.0], [2.0]])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            nx.backward(nx.scale(x, 2.0))

    def test_loss_without_tape(self):
        with pytest.raises(ContractError):
            nx.backward(nx.tensor_sum(Tensor([1.0, 2.0])))

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with ComputeTape() as tape:
            with nx.no_grad():
                y = nx.scale(x, 3.0)
        assert len(tape) == 0
        assert not y.requires_grad

    def test_tape_is_consumed(self, float64):
        x = Tensor([2.0], requires_grad=True)
        with ComputeTape() as tape:
            loss = nx.tensor_sum(nx.mul(x, x))
            assert len(tape) == 2
            tape.backward(loss)
        assert len(tape) == 0

    def test_all_targets_ignored_gives_zero_gradient(self, float64, rng):
        logits = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        loss = nx.cross_entropy(logits, [nx.IGNORE_INDEX] * 3)
        nx.backward(loss)
        assert loss.item() == 0.0
        np.testing.assert_array_equal(logits.grad, 0.0)


class TestGradcheck:
    """Centrálne diferencie v dvojitej presnosti pre každú diferencovateľnú operáciu."""

    def check(self, fn, *inputs):
        assert nx.gradcheck(fn, list(inputs)) < GRAD_TOLERANCE

    def test_add_with_broadcast(self, float64, rng):
        w = rng.normal(size=(3, 4))
        self.check(lambda a, b: weighted_sum(nx.add(a, b), w), Tensor(rng.normal(size=(3, 4))),
                   Tensor(rng.normal(size=(4,))))

    def test_neg(self, float64, rng):
        w = rng.normal(size=4)
        self.check(lambda a: weighted_sum(nx.neg(a), w), Tensor(rng.normal(size=4)))

    def test_mul(self, float64, rng):
        w = rng.normal(size=(2, 3))
        self.check(lambda a, b: weighted_sum(nx.mul(a, b), w), Tensor(rng.normal(size=(2, 3))),
                   Tensor(rng.normal(size=(2, 3))))

    def test_scale(self, float64, rng):
        w = rng.normal(size=3)
        self.check(lambda a: weighted_sum(nx.scale(a, -0.7), w), Tensor(rng.normal(size=3)))

    def test_matmul(self, float64, rng):
        w = rng.normal(size=(3, 2))
        self.check(lambda a, b: weighted_sum(nx.matmul(a, b), w), Tensor(rng.normal(size=(3, 4))),
                   Tensor(rng.normal(size=(4, 2))))

    def test_batched_matmul(self, float64, rng):
        w = rng.normal(size=(2, 3, 3))
        self.check(lambda a, b: weighted_sum(nx.matmul(a, b), w), Tensor(rng.normal(size=(2, 3, 4))),
                   Tensor(rng.normal(size=(2, 4, 3))))

    def test_transpose(self, float64, rng):
        w = rng.normal(size=(4, 2, 3))
        self.check(lambda a: weighted_sum(nx.transpose(a, (2, 0, 1)), w), Tensor(rng.normal(size=(2, 3, 4))))

    def test_reshape(self, float64, rng):
        w = rng.normal(size=(3, 4))
        self.check(lambda a: weighted_sum(nx.reshape(a, (3, 4)), w), Tensor(rng.normal(size=(2, 6))))

    def test_concat(self, float64, rng):
        w = rng.normal(size=(2, 5))
        self.check(lambda a, b: weighted_sum(nx.concat([a, b], axis=1), w), Tensor(rng.normal(size=(2, 2))),
                   Tensor(rng.normal(size=(2, 3))))

    def test_mean(self, float64, rng):
        self.check(lambda a: nx.mean(nx.mul(a, a)), Tensor(rng.normal(size=(3, 3))))

    def test_masked_fill_then_softmax(self, float64, rng):
        allowed = np.tril(np.ones((4, 4), dtype=bool))
        w = rng.normal(size=(4, 4))
        self.check(lambda a: weighted_sum(nx.softmax_rows(nx.masked_fill(a, allowed)), w),
                   Tensor(rng.normal(size=(4, 4))))

    def test_softmax_rows(self, float64, rng):
        w = rng.normal(size=(3, 5))
        self.check(lambda a: weighted_sum(nx.softmax_rows(a), w), Tensor(rng.normal(size=(3, 5))))

    def test_layer_norm(self, float64, rng):
        w = rng.normal(size=(3, 6))
        self.check(lambda x, g, b: weighted_sum(nx.layer_norm(x, g, b), w), Tensor(rng.normal(size=(3, 6))),
                   Tensor(rng.normal(1.0, 0.1, size=6)), Tensor(rng.normal(size=6)))

    def test_gelu(self, float64, rng):
        w = rng.normal(size=6)
        self.check(lambda a: weighted_sum(nx.gelu(a), w), Tensor(rng.normal(size=6)))

    def test_silu(self, float64, rng):
        w = rng.normal(size=6)
        self.check(lambda a: weighted_sum(nx.silu(a), w), Tensor(rng.normal(size=6)))

    def test_embedding(self, float64, rng):
        w = rng.normal(size=(4, 3))
        self.check(lambda e: weighted_sum(nx.embedding(e, [0, 2, 2, 5]), w), Tensor(rng.normal(size=(6, 3))))

    def test_rotary(self, float64, rng):
        w = rng.normal(size=(2, 3, 4))
        self.check(lambda a: weighted_sum(nx.rotary(a, [3, 4, 5]), w), Tensor(rng.normal(size=(2, 3, 4))))

    def test_dropout(self, float64, rng):
        w = rng.normal(size=(3, 4))
        self.check(lambda a: weighted_sum(nx.dropout(a, 0.3, np.random.default_rng(7), True), w),
                   Tensor(rng.normal(size=(3, 4))))

    def test_cross_entropy(self, float64, rng):
        targets = [1, nx.IGNORE_INDEX, 4, 0]
        self.check(lambda logits: nx.cross_entropy(logits, targets), Tensor(rng.normal(size=(4, 5))))

    def test_cross_entropy_sum(self, float64, rng):
        self.check(lambda logits: nx.cross_entropy(logits, [2, 3], reduction="sum"),
                   Tensor(rng.normal(size=(2, 5))))


class TestProperties:
    def test_matmul_is_associative(self, float64, rng):
        a, b, c = (Tensor(rng.normal(size=shape)) for shape in [(3, 4), (4, 5), (5, 2)])
        left = nx.matmul(nx.matmul(a, b), c).data
        right = nx.matmul(a, nx.matmul(b, c)).data
        np.testing.assert_allclose(left, right, rtol=1e-10, atol=1e-12)

    def test_backward_is_deterministic(self, float64, rng):
        x_data, gain_data, w_data = rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=(6, 3))

        def gradients():
            x = Tensor(x_data, requires_grad=True)
            gain = Tensor(gain_data, requires_grad=True)
            w = Tensor(w_data, requires_grad=True)
            h = nx.gelu(nx.layer_norm(x, gain, Tensor(np.zeros(6))))
            nx.backward(nx.cross_entropy(nx.matmul(h, w), [0, 2, 1, nx.IGNORE_INDEX]))
            return x.grad, gain.grad, w.grad

        for first, second in zip(gradients(), gradients()):
            np.testing.assert_array_equal(first, second)


class TestImplicitTape:
    def test_each_graph_gets_its_own_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        a = nx.scale(x, 2.0)
        b = nx.scale(x, 3.0)
        assert nx.current_tape() is None
        assert a._tape is not b._tape
        assert len(a._tape) == len(b._tape) == 1

    def test_joined_graphs_share_one_tape(self, float64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        a, b = nx.scale(x, 2.0), nx.scale(x, 3.0)
        loss = nx.tensor_sum(nx.mul(a, b))
        assert a._tape is b._tape is loss._tape
        assert len(loss._tape) == 4
        nx.backward(loss)
        np.testing.assert_allclose(x.grad, [12.0, 24.0])
        assert len(loss._tape) == 0

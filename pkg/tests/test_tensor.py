import math

import numpy as np
import pytest

from inti_lab import functional as F
from inti_lab.errors import ContractError, ShapeError
from inti_lab.gradcheck import grad_check, relative_error
from inti_lab.serialize import load_tensor, save_tensor, tensor_from_bytes, tensor_to_bytes
from inti_lab.tensor import (Tape, Tensor, backward, concat, count_macs, getitem, linear, matmul,
                             stack)

import oracles


def param(data):
    return Tensor(np.array(data, dtype=float), requires_grad=True)


class TestTensorBasics:
    def test_float64_storage(self):
        t = Tensor([1, 2, 3])
        assert t.data.dtype == np.float64
        assert t.shape == (3,) and t.size == 3

    def test_grad_has_data_shape(self):
        w = param(np.ones((2, 3)))
        with Tape() as tape:
            tape.backward((w * w).sum())
        assert w.grad.shape == w.shape

    def test_no_tape_records_nothing(self):
        w = param([1.0, 2.0])
        out = (w * 2).sum()
        assert out.node_id is None
        assert backward(out) == []

    def test_tape_is_not_reentrant(self):
        with Tape():
            with pytest.raises(ContractError):
                with Tape():
                    pass

    def test_graph_without_parameters_gives_no_gradients(self):
        x = Tensor([1.0, 2.0])
        with Tape() as tape:
            assert tape.backward((x * x).sum()) == []
        assert x.grad is None


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[3, 4], [5, 6]]))
        np.testing.assert_array_equal(out.data, [[3, 4], [5, 6]])

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])

    def test_gradient_of_sum(self, rng):
        a, b = Tensor(rng.standard_normal((4, 5))), Tensor(rng.standard_normal((5, 3)))
        assert grad_check(lambda a, b: matmul(a, b).sum(), [a, b]) < 1e-6

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_batched_broadcast(self, rng):
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b, rtol=0, atol=1e-13)


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        out = F.layer_norm(Tensor([5.0, 5, 5, 5]), np.ones(4), np.zeros(4))
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_symmetric_pair(self):
        out = F.layer_norm(Tensor([1.0, 3.0]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-10)

    def test_row_statistics(self, rng):
        out = F.layer_norm(Tensor(rng.standard_normal((2, 8)) * 3 + 1), np.ones(8), np.zeros(8)).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-12
        var = out.var(axis=-1)
        np.testing.assert_allclose(var, 1.0, atol=1e-4)

    def test_empty_last_axis(self):
        with pytest.raises(ShapeError):
            F.layer_norm(Tensor(np.zeros((3, 0))), np.ones(0), np.zeros(0))

    def test_matches_scalar_oracle(self, rng):
        x, g, b = rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)
        np.testing.assert_allclose(F.layer_norm(Tensor(x), g, b).data, oracles.layer_norm(x, g, b),
                                   rtol=0, atol=1e-12)


class TestGelu:
    def test_zero(self):
        assert F.gelu(Tensor(0.0)).item() == 0.0

    def test_asymptotes(self):
        out = F.gelu(Tensor([40.0, -40.0])).data
        assert out[0] == pytest.approx(40.0)
        assert abs(out[1]) < 1e-12

    def test_value_at_one(self):
        expected = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert F.gelu(Tensor(1.0)).item() == pytest.approx(expected, abs=1e-15)
        assert round(F.gelu(Tensor(1.0)).item(), 6) == 0.841345


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_array_equal(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_hand_arithmetic(self):
        np.testing.assert_allclose(F.softmax(Tensor([math.log(1), math.log(3)])).data, [0.25, 0.75], atol=1e-15)

    def test_shift_invariance_and_normalization(self, rng):
        x = rng.standard_normal((3, 7))
        a = F.softmax(Tensor(x), axis=-1).data
        b = F.softmax(Tensor(x + 123.4), axis=-1).data
        assert np.abs(a - b).max() < 1e-12
        assert np.abs(a.sum(axis=-1) - 1).max() < 1e-12

    def test_large_logits_stay_finite(self):
        assert np.isfinite(F.softmax(Tensor([1000.0, -1000.0])).data).all()


class TestDepthwiseConv3d:
    def test_centre_tap_is_identity(self, rng):
        x = rng.standard_normal((3, 4, 4, 2))
        k = np.zeros((3, 3, 3, 2))
        k[1, 1, 1] = 1.0
        np.testing.assert_array_equal(F.depthwise_conv3d(Tensor(x), k).data, x)

    def test_all_ones_interior(self):
        out = F.depthwise_conv3d(Tensor(np.ones((3, 3, 3, 1))), np.ones((3, 3, 3, 1))).data
        assert out[1, 1, 1, 0] == 27.0

    def test_matches_loop_oracle_exactly(self, rng):
        x, k = rng.standard_normal((4, 5, 5, 2)), rng.standard_normal((3, 3, 3, 2))
        diff = np.abs(F.depthwise_conv3d(Tensor(x), k).data - oracles.depthwise_conv3d(x, k)).max()
        assert diff == 0.0

    def test_bad_kernel(self):
        with pytest.raises(ShapeError):
            F.depthwise_conv3d(Tensor(np.zeros((2, 3, 3, 2))), np.zeros((3, 3, 2)))


class TestTemporalOps:
    def test_conv1d_matches_oracle(self, rng):
        x, k, b = rng.standard_normal((6, 3)), rng.standard_normal((3, 3)), rng.standard_normal(3)
        np.testing.assert_allclose(F.depthwise_conv1d(Tensor(x), k, b).data, oracles.depthwise_conv1d(x, k, b),
                                   rtol=0, atol=1e-14)

    def test_max_pool_halves_time(self, rng):
        x = rng.standard_normal((8, 4))
        np.testing.assert_array_equal(F.max_pool1d(Tensor(x)).data, oracles.max_pool1d(x))


class TestBackward:
    def test_sum_gives_ones(self):
        w = param([1.0, -2.0, 3.0])
        with Tape() as tape:
            tape.backward(w.sum())
        np.testing.assert_array_equal(w.grad, np.ones(3))

    def test_square_sum(self):
        w = param([1.0, 2.0])
        with Tape() as tape:
            tape.backward((w * w).sum())
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_non_scalar_loss(self):
        w = param([1.0, 2.0])
        with Tape() as tape:
            with pytest.raises(ContractError):
                tape.backward(w * 2)

    def test_gradients_accumulate_over_reuse(self):
        w = param([3.0])
        with Tape() as tape:
            tape.backward((w * w * w).sum())
        np.testing.assert_allclose(w.grad, [27.0])

    def test_advanced_index_scatter(self):
        w = param([1.0, 2.0, 3.0])
        with Tape() as tape:
            tape.backward(getitem(w, np.array([0, 0, 2])).sum())
        np.testing.assert_array_equal(w.grad, [2.0, 0.0, 1.0])


class TestGradCheck:
    def test_identity_sum_is_exact(self, rng):
        x = Tensor(rng.standard_normal(5))
        assert grad_check(lambda x: x.sum(), [x]) < 1e-9

    def test_cross_entropy(self, rng):
        logits = Tensor(rng.standard_normal((4, 5)))
        labels = np.array([0, 3, 1, 4])
        assert grad_check(lambda z: F.cross_entropy(z, labels), [logits]) < 1e-6

    def test_relative_error_floor(self):
        assert relative_error(np.array([1e-12]), np.array([0.0]))[0] == pytest.approx(1e-6)

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda x: x.sum(), [Tensor([1.0])], step=0.0)


class TestMacCounter:
    def test_counts_matmul_and_linear(self, rng):
        with count_macs() as c:
            matmul(Tensor(rng.standard_normal((2, 3, 4))), Tensor(rng.standard_normal((4, 5))))
            linear(Tensor(rng.standard_normal((7, 4))), Tensor(rng.standard_normal((4, 6))))
        assert c.total == 2 * 3 * 4 * 5 + 7 * 4 * 6


class TestSerialization:
    def test_round_trip_bytes(self, rng):
        x = rng.standard_normal((2, 3, 4))
        back = tensor_from_bytes(tensor_to_bytes(Tensor(x)))
        np.testing.assert_array_equal(back.data, x)

    def test_header_layout(self):
        buf = tensor_to_bytes(Tensor(np.arange(6.0).reshape(2, 3)))
        assert buf[:4] == b"INTI"
        assert np.frombuffer(buf[4:16], dtype="<u4").tolist() == [1, 2, 2]
        assert np.frombuffer(buf[16:20], dtype="<u4").tolist() == [3]
        np.testing.assert_array_equal(np.frombuffer(buf[20:], dtype="<f8"), np.arange(6.0))

    def test_file_round_trip(self, tmp_path, rng):
        x = rng.standard_normal(5)
        save_tensor(tmp_path / "x.bin", x)
        np.testing.assert_array_equal(load_tensor(tmp_path / "x.bin").data, x)

    def test_scalar(self, tmp_path):
        save_tensor(tmp_path / "s.bin", np.array(2.5))
        assert load_tensor(tmp_path / "s.bin").data.shape == ()

    def test_rejects_bad_magic(self):
        with pytest.raises(Exception):
            tensor_from_bytes(b"NOPE" + bytes(12))


class TestShapeOps:
    def test_concat_and_stack_gradients(self, rng):
        a, b = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)))
        w = rng.standard_normal((2, 6))
        assert grad_check(lambda a, b: (concat([a, b], axis=-1) * w).sum(), [a, b]) < 1e-8
        v = rng.standard_normal((2, 2, 3))
        assert grad_check(lambda a, b: (stack([a, b]) * v).sum(), [a, b]) < 1e-8

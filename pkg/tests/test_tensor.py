import math

import numpy as np
import pytest

from conmamba import tensor as tz
from conmamba.tensor import (
    DomainError,
    ShapeError,
    Tensor,
    conv1d_depthwise,
    conv2d,
    dropout,
    expand_cols,
    gelu,
    grad_check,
    layer_norm,
    log,
    log_softmax,
    logsumexp,
    matmul,
    reshape,
    reverse_time,
    sigmoid,
    silu,
    slice_last,
    softplus,
    tmean,
    transpose,
    tsum,
)


def t64(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(matmul(a, b).data, [[1, 2], [3, 4]])

    def test_hand_expanded_2x2_by_2x1(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0], [6.0]])
        assert np.allclose(matmul(a, b).data, [[17.0], [39.0]])

    def test_grad_of_sum_against_ones(self):
        # d sum(A @ B) / dA with B = ones is a matrix of B's row sums = n
        a = t64(np.arange(6, dtype=np.float64).reshape(2, 3))
        b = t64(np.ones((3, 4)), grad=False)
        tsum(matmul(a, b)).backward()
        assert np.allclose(a.grad, np.full((2, 3), 4.0))
        err = grad_check(lambda x: tsum(matmul(x, b)), [a])
        assert err < 1e-8

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_dtype_mismatch(self):
        with pytest.raises(ShapeError, match="dtype"):
            matmul(Tensor(np.zeros((2, 2)), dtype=np.float32),
                   Tensor(np.zeros((2, 2)), dtype=np.float64))


class TestElementwise:
    def test_analytic_points(self):
        assert math.isclose(float(softplus(Tensor([0.0])).data[0]), math.log(2), rel_tol=1e-6)
        assert float(sigmoid(Tensor([0.0])).data[0]) == pytest.approx(0.5)
        assert float(silu(Tensor([0.0])).data[0]) == pytest.approx(0.0)
        assert float(tz.exp(Tensor([0.0])).data[0]) == pytest.approx(1.0)

    def test_gelu_derivative_matches_central_difference(self):
        x = np.float64(0.7)
        eps = 1e-6
        xt = t64([x])
        gelu(xt).backward()
        analytic = xt.grad[0]
        fp = float(gelu(t64([x + eps])).data[0])
        fm = float(gelu(t64([x - eps])).data[0])
        assert abs(analytic - (fp - fm) / (2 * eps)) < 1e-6

    def test_log_domain_error_reports_index(self):
        with pytest.raises(DomainError, match=r"index \(1,\)"):
            log(Tensor([1.0, -2.0]))

    def test_sigmoid_extreme_inputs_stable(self):
        out = sigmoid(Tensor([-1000.0, 1000.0], dtype=np.float64)).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(0.0, abs=1e-12)
        assert out[1] == pytest.approx(1.0)

    @pytest.mark.parametrize("op", [softplus, silu, gelu, sigmoid, tz.exp])
    def test_grad_check(self, op):
        rng = np.random.default_rng(7)
        x = t64(rng.normal(size=(3, 4)))
        assert grad_check(lambda v: tsum(op(v)), [x]) < 1e-7

    def test_log_grad_check(self):
        rng = np.random.default_rng(8)
        x = t64(rng.uniform(0.5, 2.0, size=(5,)))
        assert grad_check(lambda v: tsum(log(v)), [x]) < 1e-7


class TestLayerNorm:
    def test_constant_rows_go_to_zero(self):
        x = Tensor(np.full((3, 8), 2.5))
        g = Tensor(np.ones(8))
        b = Tensor(np.zeros(8))
        assert np.allclose(layer_norm(x, g, b).data, 0.0)

    def test_output_moments(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(2.0, 3.0, size=(20, 64)), dtype=np.float64)
        out = layer_norm(x, Tensor(np.ones(64), dtype=np.float64),
                         Tensor(np.zeros(64), dtype=np.float64)).data
        assert np.all(np.abs(out.mean(axis=-1)) < 1e-6)
        assert np.all(np.abs(out.var(axis=-1) - 1.0) < 1e-3)

    def test_grad_check(self):
        rng = np.random.default_rng(1)
        x = t64(rng.normal(size=(4, 6)))
        g = t64(rng.normal(1.0, 0.2, size=6))
        b = t64(rng.normal(size=6))
        err = grad_check(lambda *a: tsum(mul3(layer_norm(*a))), [x, g, b])
        assert err < 1e-4


def mul3(t):
    # mix the output so the check is not blind to per-row constants
    w = Tensor(np.linspace(0.5, 1.5, t.data.size).reshape(t.shape), dtype=np.float64)
    return tz.mul(t, w)


class TestConv1dDepthwise:
    def test_delta_kernel_is_identity(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(9, 3)))
        kernel = Tensor(np.array([[1.0], [0.0], [0.0], [0.0]]).repeat(3, axis=1))
        assert np.allclose(conv1d_depthwise(x, kernel, causal=True).data, x.data)

    def test_impulse_response(self):
        x = np.zeros((7, 2), dtype=np.float32)
        x[0] = 1.0
        kernel = Tensor(np.array([[1.0, 5.0], [2.0, 6.0], [3.0, 7.0], [4.0, 8.0]], dtype=np.float32))
        out = conv1d_depthwise(Tensor(x), kernel, causal=True).data
        assert np.allclose(out[:4, 0], [1, 2, 3, 4])
        assert np.allclose(out[:4, 1], [5, 6, 7, 8])
        assert np.allclose(out[4:], 0.0)

    def test_causality_perturbation_sweep(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(12, 4)).astype(np.float32)
        kernel = Tensor(rng.normal(size=(4, 4)).astype(np.float32))
        base = conv1d_depthwise(Tensor(x), kernel, causal=True).data
        for t in range(12):
            xp = x.copy()
            xp[t] += 1.0
            out = conv1d_depthwise(Tensor(xp), kernel, causal=True).data
            assert np.array_equal(out[:t], base[:t])

    def test_kernel_longer_than_sequence(self):
        x = Tensor(np.ones((2, 1)))
        kernel = Tensor(np.ones((5, 1)))
        out = conv1d_depthwise(x, kernel, causal=True).data
        assert out.shape == (2, 1)

    def test_negative_kernel_rejected(self):
        with pytest.raises(ShapeError):
            conv1d_depthwise(Tensor(np.ones((3, 1))), Tensor(np.ones((0, 1))))

    @pytest.mark.parametrize("causal", [True, False])
    def test_grad_check(self, causal):
        rng = np.random.default_rng(4)
        x = t64(rng.normal(size=(6, 2)))
        k = t64(rng.normal(size=(3, 2)))
        b = t64(rng.normal(size=2))
        err = grad_check(
            lambda xx, kk, bb: tsum(mul3(conv1d_depthwise(xx, kk, bb, causal=causal))),
            [x, k, b],
        )
        assert err < 1e-7


class TestConv2d:
    def test_same_padding_output_shape(self):
        x = Tensor(np.random.default_rng(5).normal(size=(2, 9, 10)))
        w = Tensor(np.random.default_rng(6).normal(size=(3, 2, 3, 3)))
        out = conv2d(x, w, stride=2)
        assert out.shape == (3, 5, 5)

    def test_grad_check(self):
        rng = np.random.default_rng(7)
        x = t64(rng.normal(size=(2, 5, 4)))
        w = t64(rng.normal(size=(3, 2, 3, 3)))
        b = t64(rng.normal(size=3))
        err = grad_check(lambda *a: tsum(mul3(conv2d(*a, stride=2))), [x, w, b])
        assert err < 1e-7


class TestLogsumexp:
    def test_two_zeros(self):
        assert float(logsumexp(Tensor([0.0, 0.0]), axis=0).data) == pytest.approx(math.log(2))

    def test_neg_inf_is_absorbing(self):
        out = logsumexp(Tensor([-np.inf, 3.5], dtype=np.float64), axis=0)
        assert float(out.data) == pytest.approx(3.5)

    def test_all_neg_inf(self):
        out = logsumexp(Tensor([-np.inf, -np.inf], dtype=np.float64), axis=0)
        assert float(out.data) == -np.inf

    def test_large_values_do_not_overflow(self):
        out = logsumexp(Tensor([1000.0, 1000.0], dtype=np.float64), axis=0)
        assert float(out.data) == pytest.approx(1000.0 + math.log(2))

    def test_bounds_property(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = rng.integers(1, 9)
            x = rng.normal(0, 10, size=int(n))
            v = float(logsumexp(Tensor(x, dtype=np.float64), axis=0).data)
            assert v >= x.max() - 1e-12
            assert v <= x.max() + math.log(len(x)) + 1e-12

    def test_grad_check(self):
        rng = np.random.default_rng(9)
        x = t64(rng.normal(size=(4, 5)))
        assert grad_check(lambda v: tsum(mul3(logsumexp(v, axis=1))), [x]) < 1e-7


class TestLogSoftmax:
    def test_rows_normalize(self):
        rng = np.random.default_rng(10)
        out = log_softmax(Tensor(rng.normal(size=(6, 11)), dtype=np.float64)).data
        assert np.allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)

    def test_grad_check(self):
        rng = np.random.default_rng(11)
        x = t64(rng.normal(size=(3, 5)))
        assert grad_check(lambda v: tsum(mul3(log_softmax(v))), [x]) < 1e-7


class TestShapeOps:
    def test_grad_checks(self):
        rng = np.random.default_rng(12)
        x = t64(rng.normal(size=(4, 6)))
        assert grad_check(lambda v: tsum(mul3(reshape(v, (2, 12)))), [x]) < 1e-9
        assert grad_check(lambda v: tsum(mul3(transpose(v, (1, 0)))), [x]) < 1e-9
        assert grad_check(lambda v: tsum(mul3(slice_last(v, 1, 4))), [x]) < 1e-9
        assert grad_check(lambda v: tsum(mul3(reverse_time(v))), [x]) < 1e-9
        col = t64(rng.normal(size=(4, 1)))
        assert grad_check(lambda v: tsum(mul3(expand_cols(v, 6))), [col]) < 1e-9

    def test_suffix_broadcast_add(self):
        x = Tensor(np.ones((3, 4)))
        b = Tensor(np.arange(4, dtype=np.float64))
        out = (x + b).data
        assert np.allclose(out, 1.0 + np.arange(4))

    def test_non_suffix_broadcast_rejected(self):
        with pytest.raises(ShapeError):
            tz.add(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 1))))

    def test_broadcast_grad_check(self):
        rng = np.random.default_rng(13)
        x = t64(rng.normal(size=(3, 4)))
        b = t64(rng.normal(size=4))
        assert grad_check(lambda xx, bb: tsum(mul3(tz.add(xx, bb))), [x, b]) < 1e-9
        assert grad_check(lambda xx, bb: tsum(mul3(tz.mul(xx, bb))), [x, b]) < 1e-8


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(np.ones((5, 5)))
        out = dropout(x, 0.5, np.random.default_rng(0), train=False)
        assert out is x

    def test_inverted_scaling_preserves_mean(self):
        rng = np.random.default_rng(14)
        x = Tensor(np.ones((400, 50)))
        out = dropout(x, 0.3, rng, train=True).data
        assert out.mean() == pytest.approx(1.0, abs=0.02)

    def test_grad_check_with_fixed_mask(self):
        x = t64(np.random.default_rng(15).normal(size=(4, 4)))
        f = lambda v: tsum(mul3(dropout(v, 0.4, np.random.default_rng(99), train=True)))
        assert grad_check(f, [x]) < 1e-9


class TestBackwardContract:
    def test_non_scalar_backward_rejected(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x + x).backward()

    def test_fanout_accumulates_double_gradient(self):
        def single(v):
            return tsum(silu(v))

        def doubled(v):
            return tz.add(tsum(silu(v)), tsum(silu(v)))

        x1 = t64([1.0, -2.0, 3.0])
        single(x1).backward()
        x2 = t64([1.0, -2.0, 3.0])
        doubled(x2).backward()
        assert np.allclose(x2.grad, 2.0 * x1.grad)

    def test_diamond_graph(self):
        x = t64([2.0])
        a = silu(x)
        b = tz.exp(x)
        tsum(tz.mul(a, b)).backward()
        eps = 1e-6
        num = (
            (silu(t64([2 + eps])).data * tz.exp(t64([2 + eps])).data).item()
            - (silu(t64([2 - eps])).data * tz.exp(t64([2 - eps])).data).item()
        ) / (2 * eps)
        assert x.grad[0] == pytest.approx(num, rel=1e-6)

    def test_determinism(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.normal(size=(8, 8)))
        g = Tensor(np.ones(8))
        b = Tensor(np.zeros(8))
        first = layer_norm(gelu(x), g, b).data
        second = layer_norm(gelu(x), g, b).data
        assert np.array_equal(first, second)

    def test_linear_map_grad_check_is_tight(self):
        rng = np.random.default_rng(17)
        x = t64(rng.normal(size=(3, 3)))
        w = t64(rng.normal(size=(3, 2)), grad=False)
        assert grad_check(lambda v: tsum(matmul(v, w)), [x]) <= 1e-10


class TestFiniteGuard:
    def test_debug_flag_catches_overflow(self):
        tz.CHECK_FINITE = True
        try:
            with pytest.raises(FloatingPointError):
                with np.errstate(over="ignore"):
                    tz.mul(Tensor([1e300], dtype=np.float64), Tensor([1e300], dtype=np.float64))
        finally:
            tz.CHECK_FINITE = False

    def test_finite_ops_stay_finite_under_guard(self):
        tz.CHECK_FINITE = True
        try:
            rng = np.random.default_rng(18)
            x = Tensor(rng.normal(size=(16, 8)))
            out = gelu(matmul(x, Tensor(rng.normal(size=(8, 8)))))
            assert np.all(np.isfinite(out.data))
        finally:
            tz.CHECK_FINITE = False

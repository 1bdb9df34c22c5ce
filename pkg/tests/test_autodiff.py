"""Tensor/tape engine: forward semantics, shape contracts, gradient checks."""

import numpy as np
import pytest

from nvae import autodiff as ad
from nvae.errors import DomainError, NonFiniteError, ShapeError


def fd_grad(f, arr, h=1e-5):
    """Central finite differences of a scalar function of one array."""
    g = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def check_op_grad(build, params, rel_tol=1e-4):
    """Compare autodiff gradients of build() against finite differences."""
    root = build()
    ad.backward(root)
    for node in params:
        auto = node.grad.copy()
        num = fd_grad(lambda: float(build().value.array), node.value.array)
        denom = np.maximum(np.abs(num), 1e-6)
        assert np.max(np.abs(auto - num) / denom) < rel_tol


class TestForward:
    def test_logsumexp_overflow_safe(self):
        out = ad.logsumexp(ad.constant([1000.0, 1000.0]))
        assert float(out.value.array) == pytest.approx(1000.0 + np.log(2.0), rel=1e-12)

    def test_concat_shapes(self):
        a = ad.constant(np.zeros((2, 3)))
        b = ad.constant(np.zeros((2, 2)))
        assert ad.concat([a, b], axis=1).shape == (2, 5)

    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(3, 3))
        out = ad.matmul(ad.constant(np.eye(3)), ad.constant(m))
        np.testing.assert_array_equal(out.value.array, np.eye(3) @ m)

    def test_log_softmax_normalized(self):
        rng = np.random.default_rng(1)
        out = ad.log_softmax(ad.constant(rng.normal(size=(4, 6))))
        np.testing.assert_allclose(np.exp(out.value.array).sum(axis=1), 1.0, atol=1e-12)

    def test_forward_determinism_bitwise(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 8))

        def run():
            n = ad.constant(x)
            return ad.tsum(ad.tanh(n @ n) * ad.sigmoid(n)).value.array.copy()

        assert np.array_equal(run(), run())

    def test_reshape_and_slice(self):
        a = ad.constant(np.arange(12.0).reshape(3, 4))
        r = ad.reshape(a, (4, 3))
        assert r.shape == (4, 3)
        s = ad.slice_axis(a, 1, 1, 3)
        np.testing.assert_array_equal(s.value.array, np.arange(12.0).reshape(3, 4)[:, 1:3])

    def test_apply_mask_exact_zeros(self):
        a = ad.constant(np.array([[-1.5, 2.0], [3.0, -4.0]]))
        out = ad.apply_mask(a, np.array([[0, 1], [1, 0]]))
        assert out.value.array[0, 0] == 0.0
        assert np.signbit(out.value.array[0, 0]) == False  # noqa: E712  (+0.0, not -0.0)


class TestShapeErrors:
    def test_matmul_mismatch_names_shapes(self):
        a = ad.constant(np.zeros((2, 3)))
        b = ad.constant(np.zeros((4, 2)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            ad.matmul(a, b)

    def test_elementwise_mismatch(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\) and \(3, 2\)"):
            ad.add(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((3, 2))))

    def test_column_broadcast_requires_matching_rows(self):
        with pytest.raises(ShapeError):
            ad.mul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((4, 1))))

    def test_backward_needs_scalar_root(self):
        with pytest.raises(ShapeError, match="scalar"):
            ad.backward(ad.constant(np.zeros(3)))

    def test_gauss_noise_and_concat_rank(self):
        with pytest.raises(ShapeError):
            ad.concat([ad.constant(np.zeros((2, 2))), ad.constant(np.zeros(2))], axis=0)


class TestNanDetection:
    def test_log_domain_violation_raises(self):
        with pytest.raises(NonFiniteError, match="log"):
            ad.log(ad.constant([-1.0]))

    def test_exp_overflow_raises(self):
        with pytest.raises(NonFiniteError, match="exp"):
            ad.exp(ad.constant([1e4]))

    def test_checks_can_be_disabled(self):
        with ad.nan_checks(False):
            out = ad.log(ad.constant([-1.0]))
            assert np.isnan(out.value.array).all()
        assert ad.nan_checks_enabled()

    def test_lgamma_domain_error(self):
        with pytest.raises(DomainError):
            ad.lgamma(ad.constant([0.0]))


class TestGradients:
    def test_square_scalar(self):
        x = ad.constant(3.0)
        ad.backward(x * x)
        assert float(x.grad) == pytest.approx(6.0, rel=1e-12)

    def test_matmul_sum(self):
        rng = np.random.default_rng(3)
        a = ad.constant(rng.normal(size=(3, 4)))
        b = ad.constant(rng.normal(size=(4, 2)))
        check_op_grad(lambda: ad.tsum(a @ b), [a, b], rel_tol=1e-5)

    @pytest.mark.parametrize("op", [ad.exp, ad.tanh, ad.sigmoid, ad.softplus, ad.relu])
    def test_elementwise_ops(self, op):
        rng = np.random.default_rng(4)
        a = ad.constant(rng.normal(size=(2, 5)) + 0.1)
        check_op_grad(lambda: ad.tsum(op(a)), [a])

    def test_log_and_div(self):
        rng = np.random.default_rng(5)
        a = ad.constant(rng.uniform(0.5, 2.0, (3, 3)))
        b = ad.constant(rng.uniform(0.5, 2.0, (3, 3)))
        check_op_grad(lambda: ad.tsum(ad.log(a) / b), [a, b])

    def test_lgamma_digamma(self):
        a = ad.constant(np.array([0.3, 1.7, 8.0, 42.0]))
        check_op_grad(lambda: ad.tsum(ad.lgamma(a)), [a])
        check_op_grad(lambda: ad.tsum(ad.digamma(a)), [a])

    def test_broadcast_row_and_column(self):
        rng = np.random.default_rng(6)
        m = ad.constant(rng.normal(size=(4, 3)))
        row = ad.constant(rng.normal(size=3))
        col = ad.constant(rng.normal(size=(4, 1)))
        check_op_grad(lambda: ad.tsum(ad.tanh(m + row) * col), [m, row, col])

    def test_reductions_and_shapes(self):
        rng = np.random.default_rng(7)
        a = ad.constant(rng.normal(size=(3, 4)))
        check_op_grad(lambda: ad.tsum(ad.tmean(a, axis=0)), [a])
        check_op_grad(lambda: ad.tsum(ad.exp(ad.tsum(a, axis=1, keepdims=True)) * a), [a])
        check_op_grad(
            lambda: ad.tsum(ad.reshape(ad.slice_axis(a, 1, 1, 3), (6,)) * 2.0), [a]
        )

    def test_concat_and_mask(self):
        rng = np.random.default_rng(8)
        a = ad.constant(rng.normal(size=(2, 2)))
        b = ad.constant(rng.normal(size=(2, 3)))
        mask = (rng.random((2, 5)) > 0.4).astype(float)
        check_op_grad(
            lambda: ad.tsum(ad.tanh(ad.apply_mask(ad.concat([a, b], axis=1), mask))),
            [a, b],
        )

    def test_logsumexp_log_softmax(self):
        rng = np.random.default_rng(9)
        a = ad.constant(rng.normal(size=(3, 5)))
        weights = ad.constant(rng.normal(size=(3, 5)))
        check_op_grad(lambda: ad.tsum(ad.logsumexp(a)), [a])
        check_op_grad(lambda: ad.tsum(ad.log_softmax(a) * weights), [a])

    def test_mlp_composition(self):
        rng = np.random.default_rng(10)
        x = ad.constant(rng.uniform(0, 1, (4, 6)))
        w1 = ad.constant(rng.normal(0, 0.4, (6, 5)))
        b1 = ad.constant(np.zeros(5))
        w2 = ad.constant(rng.normal(0, 0.4, (5, 3)))
        b2 = ad.constant(np.zeros(3))
        y = rng.integers(0, 3, 4)
        hot = np.zeros((4, 3))
        hot[np.arange(4), y] = 1.0

        def loss():
            h = ad.tanh(x @ w1 + b1)
            lp = ad.log_softmax(h @ w2 + b2)
            return -ad.tmean(ad.tsum(lp * ad.constant(hot), axis=1))

        check_op_grad(loss, [w1, b1, w2, b2])


class TestBackwardSemantics:
    def test_linearity_of_accumulation(self):
        rng = np.random.default_rng(11)
        x = ad.constant(rng.normal(size=(3, 3)))

        def f():
            return ad.tsum(ad.tanh(x))

        def g():
            return ad.tsum(ad.sigmoid(x) * x)

        ad.backward(f())
        gf = x.grad.copy()
        ad.backward(g())
        gg = x.grad.copy()
        ad.backward(f() + g())
        np.testing.assert_allclose(x.grad, gf + gg, rtol=1e-12, atol=1e-15)

    def test_grads_zeroed_between_passes(self):
        x = ad.constant(2.0)
        ad.backward(x * x)
        first = float(x.grad)
        ad.backward(x * x)
        assert float(x.grad) == first

    def test_diamond_graph_visited_once(self):
        x = ad.constant(3.0)
        y = x * x  # used twice below
        ad.backward(y + y)
        assert float(x.grad) == pytest.approx(12.0, rel=1e-12)


class TestParamStore:
    def test_names_unique_and_ordered(self):
        store = ad.ParamStore()
        store.add("a", np.zeros(2))
        store.add("b", np.zeros((2, 2)))
        with pytest.raises(ValueError, match="already exists"):
            store.add("a", np.zeros(1))
        assert store.names() == ["a", "b"]
        assert store.n_parameters() == 6

    def test_shapes_immutable(self):
        store = ad.ParamStore()
        store.add("w", np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            store.assign("w", np.zeros((3, 2)))
        store.assign("w", np.ones((2, 3)))
        np.testing.assert_array_equal(store["w"].value.array, np.ones((2, 3)))

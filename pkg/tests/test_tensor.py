"""Tests for the autodiff core: forward values and finite-difference gradients."""

import numpy as np
import pytest

from nextevent import tensor as T
from nextevent.errors import HierarchyError, NumericsError


def finite_diff_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, entry by entry."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2.0 * step)
    return g


def assert_grad_matches(build, arrays, tol=1e-4, step=1e-5):
    """Check analytic gradients of sum(build(nodes)) against central differences."""
    nodes = [T.parameter(a) for a in arrays]
    out = T.sum_all(build(*nodes))
    out.backward()
    for k, node in enumerate(nodes):
        def f(x, k=k):
            probe = [T.constant(a) for a in arrays]
            probe[k] = T.constant(x)
            return T.sum_all(build(*probe)).value.item()

        numeric = finite_diff_grad(f, arrays[k].copy(), step)
        denom = np.maximum(np.maximum(np.abs(node.grad), np.abs(numeric)), 1e-6)
        rel = np.abs(node.grad - numeric) / denom
        assert rel.max() < tol, f"operand {k}: max rel err {rel.max():.2e}"


class TestForwardValues:
    def test_matmul_identity(self):
        out = T.matmul(T.constant([[1.0, 0.0], [0.0, 1.0]]), T.constant([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.value, [[3.0], [4.0]])

    def test_matmul_hand_computed(self):
        out = T.matmul(T.constant([[1.0, 2.0]]), T.constant([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.value, [[11.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(T.constant(np.zeros((2, 3))), T.constant(np.zeros((2, 2))))

    def test_softmax_symmetry(self):
        out = T.softmax(T.constant([[0.0, 0.0, 0.0]]), axis=1)
        np.testing.assert_allclose(out.value, [[1 / 3] * 3], atol=1e-15)

    def test_softmax_no_overflow(self):
        out = T.softmax(T.constant([[1000.0, 0.0]]), axis=1)
        assert np.isfinite(out.value).all()
        np.testing.assert_allclose(out.value, [[1.0, 0.0]], atol=1e-12)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(0)
        out = T.softmax(T.constant(rng.uniform(-50, 50, size=(7, 5))), axis=1)
        np.testing.assert_allclose(out.value.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_bad_axis(self):
        with pytest.raises(ValueError, match="axis"):
            T.softmax(T.constant([[1.0, 2.0]]), axis=2)

    def test_softplus_values(self):
        out = T.softplus(T.constant([0.0, 100.0, -100.0]))
        np.testing.assert_allclose(out.value[0], np.log(2.0), rtol=1e-12)
        np.testing.assert_allclose(out.value[1], 100.0, rtol=1e-12)
        assert 0.0 < out.value[2] < 1e-40

    def test_mean_pool_mean_of_two(self):
        out = T.mean_pool(T.constant([[2.0, 2.0], [4.0, 4.0]]), [[0, 1]])
        np.testing.assert_array_equal(out.value, [[3.0, 3.0]])

    def test_mean_pool_singleton_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        out = T.mean_pool(T.constant(x), [[1]])
        np.testing.assert_array_equal(out.value, x[1:2])

    def test_mean_pool_empty_group_raises(self):
        with pytest.raises(HierarchyError, match="empty group"):
            T.mean_pool(T.constant(np.zeros((2, 2))), [[0], []])

    def test_concat_rows_shape(self):
        out = T.concat_rows(T.constant(np.zeros((2, 3))), T.constant(np.ones((1, 3))))
        assert out.shape == (3, 3)

    def test_gather_rows_identity_permutation(self):
        x = np.arange(12.0).reshape(4, 3)
        out = T.gather_rows(T.constant(x), [0, 1, 2, 3])
        np.testing.assert_array_equal(out.value, x)

    def test_log_rejects_nonpositive(self):
        with pytest.raises(NumericsError):
            T.log(T.constant([1.0, 0.0]))

    def test_scatter_rows_values(self):
        base = np.zeros((4, 2))
        out = T.scatter_rows(T.constant(base), [1, 3], T.constant(np.ones((2, 2))))
        np.testing.assert_array_equal(out.value[[1, 3]], 1.0)
        np.testing.assert_array_equal(out.value[[0, 2]], 0.0)

    def test_scatter_rows_rejects_repeats(self):
        with pytest.raises(ValueError, match="distinct"):
            T.scatter_rows(T.constant(np.zeros((3, 1))), [1, 1], T.constant(np.zeros((2, 1))))


class TestBackwardRules:
    """Per-op gradients vs central finite differences on random inputs in [-2, 2]."""

    def rand(self, *shape, seed=0):
        return np.random.default_rng(seed).uniform(-2, 2, size=shape)

    def test_matmul_grad(self):
        assert_grad_matches(T.matmul, [self.rand(3, 4, seed=1), self.rand(4, 2, seed=2)])

    def test_softmax_jacobian(self):
        x = self.rand(1, 5, seed=3)
        # Check the full Jacobian row by row through weighted sums.
        for r in range(5):
            w = np.zeros((1, 5))
            w[0, r] = 1.0
            assert_grad_matches(lambda a: T.mul(T.softmax(a, axis=1), T.constant(w)), [x])

    def test_softplus_grad(self):
        assert_grad_matches(T.softplus, [self.rand(4, 3, seed=4)])

    def test_mean_pool_grad_distributes(self):
        x = self.rand(6, 3, seed=5)
        groups = [[0, 1, 2], [3], [4, 5]]
        assert_grad_matches(lambda a: T.mean_pool(a, groups), [x])
        node = T.parameter(x)
        T.sum_all(T.mean_pool(node, groups)).backward()
        np.testing.assert_allclose(node.grad[0], 1 / 3)
        np.testing.assert_allclose(node.grad[3], 1.0)

    def test_gather_repeated_index_sums(self):
        x = self.rand(4, 2, seed=6)
        node = T.parameter(x)
        T.sum_all(T.gather_rows(node, [1, 1, 2])).backward()
        np.testing.assert_allclose(node.grad[1], 2.0)
        np.testing.assert_allclose(node.grad[2], 1.0)
        np.testing.assert_allclose(node.grad[0], 0.0)
        assert_grad_matches(lambda a: T.gather_rows(a, [1, 1, 2]), [x])

    def test_gather_cols_grad(self):
        assert_grad_matches(lambda a: T.gather_cols(a, [0, 2, 2]), [self.rand(3, 4, seed=7)])

    def test_concat_grads(self):
        assert_grad_matches(T.concat_rows, [self.rand(2, 3, seed=8), self.rand(3, 3, seed=9)])
        assert_grad_matches(T.concat_cols, [self.rand(2, 3, seed=10), self.rand(2, 2, seed=11)])

    def test_elementwise_grads(self):
        a, b = self.rand(3, 3, seed=12), self.rand(3, 3, seed=13)
        assert_grad_matches(T.add, [a, b])
        assert_grad_matches(T.mul, [a, b])
        assert_grad_matches(T.sub, [a, b])
        assert_grad_matches(lambda x: T.scale(x, -1.7), [a])
        assert_grad_matches(T.exp, [a])
        assert_grad_matches(T.cos, [a])
        assert_grad_matches(T.sin, [a])
        assert_grad_matches(lambda x: T.log(T.softplus(x)), [a])
        assert_grad_matches(lambda x: T.pow_const(T.softplus(x), 1.7), [a])

    def test_column_broadcast_grads(self):
        col, mat = self.rand(3, 1, seed=14), self.rand(3, 4, seed=15)
        assert_grad_matches(T.mul, [col, mat])
        assert_grad_matches(T.add, [mat, col])

    def test_logsumexp_grad(self):
        assert_grad_matches(lambda x: T.logsumexp(x, axis=1), [self.rand(2, 6, seed=16)])

    def test_scatter_rows_grad(self):
        base, rows = self.rand(5, 3, seed=17), self.rand(2, 3, seed=18)
        assert_grad_matches(lambda a, b: T.scatter_rows(a, [0, 4], b), [base, rows])

    def test_transpose_reshape_grads(self):
        a = self.rand(3, 4, seed=19)
        assert_grad_matches(T.transpose, [a])
        assert_grad_matches(lambda x: T.reshape(x, (2, 6)), [a])

    def test_fanout_accumulates_both_contributions(self):
        # One node feeding two consumers must receive the sum of both gradients.
        x = T.parameter([[1.5]])
        out = T.add(T.scale(x, 2.0), T.mul(x, x))
        out.backward()
        np.testing.assert_allclose(x.grad, [[2.0 + 2.0 * 1.5]])


class TestCheckGradients:
    def test_quadratic_analytic(self):
        w = T.parameter([1.0, 2.0])

        def f(params):
            v = params["w"]
            return T.sum_all(T.mul(v, v))

        report = T.check_gradients(f, {"w": w})
        assert report.max_rel_error < 1e-6
        f(None if False else {"w": w})
        w.zero_grad()
        T.sum_all(T.mul(w, w)).backward()
        np.testing.assert_allclose(w.grad, [2.0, 4.0], rtol=1e-12)

    def test_softmax_cross_entropy_composite(self):
        rng = np.random.default_rng(42)
        logits = T.parameter(rng.normal(size=(1, 6)))
        target = 2

        def f(params):
            lse = T.logsumexp(params["logits"], axis=1)
            picked = T.gather_cols(params["logits"], [target])
            return T.sum_all(T.sub(lse, picked))

        report = T.check_gradients(f, {"logits": logits})
        assert report.max_rel_error < 1e-4

    def test_non_finite_loss_raises(self):
        w = T.parameter([1.0])

        def f(params):
            return T.sum_all(T.scale(params["w"], np.inf))

        with pytest.raises(NumericsError):
            T.check_gradients(f, {"w": w})

    def test_large_tensor_sampling(self):
        rng = np.random.default_rng(1)
        w = T.parameter(rng.normal(size=(30, 30)))

        def f(params):
            return T.sum_all(T.mul(params["w"], params["w"]))

        report = T.check_gradients(f, {"w": w}, max_entries=100)
        assert report.num_checked == 100
        assert report.max_rel_error < 1e-6

    def test_backward_requires_scalar_root(self):
        with pytest.raises(ValueError, match="scalar"):
            T.constant(np.zeros((2, 2))).backward()

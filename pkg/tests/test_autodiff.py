import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsynth import autodiff as ad
from seqsynth.errors import ContractError, DomainError, EvaluationError, PoisonedGradientError


def _fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at ndarray x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def _check_unary(op, np_ref, shape=(3, 4), lo=-3.0, hi=3.0, seed=0, rtol=1e-6):
    rng = np.random.default_rng(seed)
    x = rng.uniform(lo, hi, size=shape)
    t = ad.parameter(x.copy(), "x")
    out = ad.sum_(op(t))
    ad.backward(out)
    fd = _fd_grad(lambda v: float(np_ref(v).sum()), x.copy())
    np.testing.assert_allclose(t.grad, fd, rtol=rtol, atol=1e-7)


class TestPrimitiveGradients:
    def test_exp(self):
        _check_unary(ad.exp, np.exp)

    def test_log(self):
        _check_unary(ad.log, np.log, lo=0.1, hi=3.0)

    def test_sqrt(self):
        _check_unary(ad.sqrt, np.sqrt, lo=0.1, hi=3.0)

    def test_tanh(self):
        _check_unary(ad.tanh, np.tanh)

    def test_sigmoid(self):
        from scipy.special import expit

        _check_unary(ad.sigmoid, expit)

    def test_gelu(self):
        from scipy.special import erf

        _check_unary(ad.gelu, lambda v: v * 0.5 * (1 + erf(v / np.sqrt(2))))

    def test_softmax_grad(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-3, 3, size=(4, 5))
        w = rng.uniform(-1, 1, size=(4, 5))  # weights make the gradient nontrivial
        t = ad.parameter(x.copy(), "x")
        out = ad.sum_(ad.mul(ad.softmax(t, axis=-1), w))
        ad.backward(out)

        def f(v):
            e = np.exp(v - v.max(axis=-1, keepdims=True))
            s = e / e.sum(axis=-1, keepdims=True)
            return float((s * w).sum())

        np.testing.assert_allclose(t.grad, _fd_grad(f, x.copy()), rtol=1e-5, atol=1e-8)

    def test_log_softmax_grad(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-3, 3, size=(3, 6))
        w = rng.uniform(-1, 1, size=(3, 6))
        t = ad.parameter(x.copy(), "x")
        out = ad.sum_(ad.mul(ad.log_softmax(t, axis=-1), w))
        ad.backward(out)

        def f(v):
            sh = v - v.max(axis=-1, keepdims=True)
            ls = sh - np.log(np.exp(sh).sum(axis=-1, keepdims=True))
            return float((ls * w).sum())

        np.testing.assert_allclose(t.grad, _fd_grad(f, x.copy()), rtol=1e-5, atol=1e-8)

    def test_matmul_grad(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(-2, 2, size=(3, 4))
        b = rng.uniform(-2, 2, size=(4, 5))
        ta, tb = ad.parameter(a.copy(), "a"), ad.parameter(b.copy(), "b")
        out = ad.sum_(ta @ tb)
        ad.backward(out)
        np.testing.assert_allclose(ta.grad, _fd_grad(lambda v: float((v @ b).sum()), a.copy()), rtol=1e-6)
        np.testing.assert_allclose(tb.grad, _fd_grad(lambda v: float((a @ v).sum()), b.copy()), rtol=1e-6)

    def test_batched_matmul_grad(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(-1, 1, size=(2, 3, 4))
        b = rng.uniform(-1, 1, size=(2, 4, 2))
        ta, tb = ad.parameter(a.copy(), "a"), ad.parameter(b.copy(), "b")
        ad.backward(ad.sum_(ta @ tb))
        np.testing.assert_allclose(ta.grad, _fd_grad(lambda v: float((v @ b).sum()), a.copy()), rtol=1e-6)
        np.testing.assert_allclose(tb.grad, _fd_grad(lambda v: float((a @ v).sum()), b.copy()), rtol=1e-6)

    def test_broadcast_add_mul(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-2, 2, size=(3, 4))
        b = rng.uniform(-2, 2, size=(4,))
        ta, tb = ad.parameter(a.copy(), "a"), ad.parameter(b.copy(), "b")
        ad.backward(ad.sum_(ad.mul(ad.add(ta, tb), tb)))
        f_a = lambda v: float(((v + b) * b).sum())
        f_b = lambda v: float(((a + v) * v).sum())
        np.testing.assert_allclose(ta.grad, _fd_grad(f_a, a.copy()), rtol=1e-6)
        np.testing.assert_allclose(tb.grad, _fd_grad(f_b, b.copy()), rtol=1e-6)

    def test_take_scatter_grad(self):
        w = ad.parameter(np.arange(12, dtype=float).reshape(4, 3), "w")
        idx = np.array([0, 2, 2, 1])
        out = ad.sum_(w[idx])
        ad.backward(out)
        expected = np.zeros((4, 3))
        for i in idx:
            expected[i] += 1.0
        np.testing.assert_array_equal(w.grad, expected)

    def test_softplus_grad_both_args(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-3, 3, size=(5,))
        b = rng.uniform(0.3, 3.0, size=(5,))
        tx, tb = ad.parameter(x.copy(), "x"), ad.parameter(b.copy(), "b")
        ad.backward(ad.sum_(ad.softplus(tx, tb)))
        ref = lambda v, w: float((w * np.logaddexp(0, v / w)).sum())
        np.testing.assert_allclose(tx.grad, _fd_grad(lambda v: ref(v, b), x.copy()), rtol=1e-6)
        np.testing.assert_allclose(tb.grad, _fd_grad(lambda v: ref(x, v), b.copy()), rtol=1e-6)

    def test_clamp_grad(self):
        x = np.array([-2.0, 0.5, 3.0])
        t = ad.parameter(x.copy(), "x")
        ad.backward(ad.sum_(ad.clamp(t, -1.0, 1.0)))
        np.testing.assert_array_equal(t.grad, [0.0, 1.0, 0.0])

    def test_concat_transpose_reshape(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 2))
        ta, tb = ad.parameter(a.copy(), "a"), ad.parameter(b.copy(), "b")
        out = ad.concat([ta, tb], axis=1)
        out = ad.transpose(out, (1, 0))
        out = ad.reshape(out, (10,))
        ad.backward(ad.sum_(ad.mul(out, out)))
        f_a = lambda v: float((np.concatenate([v, b], axis=1).T.reshape(10) ** 2).sum())
        np.testing.assert_allclose(ta.grad, _fd_grad(f_a, a.copy()), rtol=1e-6)


class TestSoftplusContract:
    def test_closed_forms(self):
        assert ad.scalar_softplus(0.0, 1.0) == pytest.approx(np.log(2), abs=1e-12)
        assert ad.scalar_softplus(0.0, 2.0) == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_asymptote(self):
        assert ad.scalar_softplus(100.0, 1.0) == pytest.approx(100.0, abs=1e-12)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(DomainError):
            ad.scalar_softplus(1.0, 0.0)
        with pytest.raises(DomainError):
            ad.softplus(ad.Tensor([1.0]), ad.Tensor([-1.0]))

    @given(st.floats(-500, 500), st.floats(0.01, 100))
    @settings(max_examples=200, deadline=None)
    def test_strictly_positive(self, x, beta):
        assert ad.scalar_softplus(x, beta) > 0.0


class TestSoftmaxContract:
    def test_uniform(self):
        out = ad.softmax(ad.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_saturation(self):
        out = ad.softmax(ad.Tensor([5.0, 105.0]))
        assert out.data[0] == pytest.approx(0.0, abs=1e-12)
        assert out.data[1] == pytest.approx(1.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            ad.softmax(ad.Tensor(np.zeros(0)))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance_and_normalization(self, vals):
        v = np.array(vals)
        a = ad.softmax(ad.Tensor(v)).data
        b = ad.softmax(ad.Tensor(v + 5.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)
        assert abs(a.sum() - 1.0) < 1e-12
        assert (a > 0).all()


class TestBackwardContract:
    def test_softplus_derivative_at_zero(self):
        x = ad.parameter(0.0, "x")
        ad.backward(ad.softplus(x, ad.Tensor(1.0)))
        assert float(x.grad) == pytest.approx(0.5, abs=1e-12)

    def test_grad_of_softmax_sum_is_zero(self):
        v = ad.parameter(np.array([0.3, -1.2, 2.0]), "v")
        ad.backward(ad.sum_(ad.softmax(v)))
        np.testing.assert_allclose(v.grad, np.zeros(3), atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        v = ad.parameter(np.ones(3), "v")
        with pytest.raises(ContractError):
            ad.backward(ad.mul(v, 2.0))

    def test_unreachable_param_reads_zero(self):
        a = ad.parameter(np.ones(2), "a")
        b = ad.parameter(np.ones(2), "b")
        ad.backward(ad.sum_(a * 2.0))
        np.testing.assert_array_equal(ad.grad_of(b), np.zeros(2))
        np.testing.assert_array_equal(ad.grad_of(a), 2 * np.ones(2))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_poisoning_names_node(self):
        x = ad.parameter(np.array(0.0), "x")
        # sqrt(0) is finite but its derivative is inf; inf * 0 = NaN downstream
        loss = ad.mul(ad.sqrt(x), 0.0)
        with pytest.raises(PoisonedGradientError):
            ad.backward(loss)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss_poisons(self):
        x = ad.parameter(np.array(-1.0), "x")
        with pytest.raises(PoisonedGradientError):
            ad.backward(ad.log(x))

    def test_backward_deterministic(self):
        def run():
            rng = np.random.default_rng(42)
            a = ad.parameter(rng.normal(size=(4, 4)), "a")
            b = ad.parameter(rng.normal(size=(4, 4)), "b")
            out = ad.sum_(ad.softmax(a @ b) * ad.tanh(a))
            ad.backward(out)
            return a.grad.copy(), b.grad.copy()

        ga1, gb1 = run()
        ga2, gb2 = run()
        assert (ga1 == ga2).all() and (gb1 == gb2).all()

    def test_grad_accumulation_over_reuse(self):
        x = ad.parameter(np.array(3.0), "x")
        y = ad.mul(x, x)  # x reused: d/dx = 2x
        ad.backward(y)
        assert float(x.grad) == pytest.approx(6.0)


class TestFiniteDiffCheck:
    def test_polynomial_exactness(self):
        x = ad.parameter(np.array(3.0), "x")
        report = ad.finite_diff_check(lambda: ad.mul(x, x), {"x": x}, h=1e-5)
        assert report.max_rel_err < 1e-9

    def test_frozen_noise_is_deterministic(self):
        noise = np.random.default_rng(0).normal(size=(4,))
        x = ad.parameter(np.ones(4), "x")
        fn = lambda: ad.sum_(ad.mul(x, noise))
        with ad.no_grad():
            assert fn().item() == fn().item()
        report = ad.finite_diff_check(fn, {"x": x})
        assert report.max_rel_err < 1e-9

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_objective_rejected(self):
        x = ad.parameter(np.array(-1.0), "x")
        with pytest.raises(EvaluationError):
            ad.finite_diff_check(lambda: ad.log(x), {"x": x})

    def test_composite_function(self):
        rng = np.random.default_rng(9)
        w = ad.parameter(rng.normal(size=(4, 3)), "w")
        b = ad.parameter(rng.normal(size=(3,)), "b")
        x = rng.normal(size=(5, 4))

        def fn():
            h = ad.add(ad.Tensor(x) @ w, b)
            return ad.sum_(ad.mul(ad.softmax(h, axis=-1), ad.gelu(h)))

        report = ad.finite_diff_check(fn, {"w": w, "b": b}, h=1e-5)
        assert report.max_rel_err < 1e-6

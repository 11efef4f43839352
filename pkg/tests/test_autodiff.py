import math

import numpy as np
import pytest

from opdf import autodiff as ad
from opdf import mpo
from opdf.errors import ExtentMismatch, LabelOutOfRange, NonPositiveTemperature, NonScalarLoss


def rand(rng, *shape):
    return rng.standard_normal(shape)


class TestBasics:
    def test_scale(self):
        x = ad.param(np.array(2.0))
        ad.backward(ad.scalar_mul(x, 3.0))
        assert x.grad == 3.0

    def test_fan_out(self):
        x = ad.param(np.array(1.5))
        ad.backward(ad.add(x, x))
        assert x.grad == 2.0

    def test_add_passes_grad(self):
        a, b = ad.param(np.ones((2, 2))), ad.param(np.ones((2, 2)))
        ad.backward(ad.sum_all(ad.add(a, b)))
        assert np.array_equal(a.grad, np.ones((2, 2))) and np.array_equal(b.grad, np.ones((2, 2)))

    def test_non_scalar_loss(self):
        with pytest.raises(NonScalarLoss):
            ad.backward(ad.param(np.ones(3)))

    def test_accumulates_across_calls(self):
        x = ad.param(np.array(1.0))
        y = ad.scalar_mul(x, 4.0)
        ad.backward(y)
        ad.backward(y)
        assert x.grad == 8.0
        x.zero_grad()
        ad.backward(y)
        assert x.grad == 4.0

    def test_constants_get_no_grad(self):
        c, x = ad.constant(np.ones(2)), ad.param(np.ones(2))
        ad.backward(ad.sum_all(ad.mul(c, x)))
        assert c.grad is None and np.array_equal(x.grad, np.ones(2))

    def test_shape_mismatch_at_build(self):
        with pytest.raises(ExtentMismatch):
            ad.add(ad.param(np.ones(2)), ad.param(np.ones(3)))
        with pytest.raises(ExtentMismatch):
            ad.matmul(ad.param(np.ones((2, 3))), ad.param(np.ones((2, 3))))

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 5, 4), rand(rng, 4, 3)
        grads = []
        for _ in range(2):
            na, nb = ad.param(a), ad.param(b)
            ad.backward(ad.mean_all(ad.tanh(ad.matmul(na, nb))))
            grads.append((na.grad.tobytes(), nb.grad.tobytes()))
        assert grads[0] == grads[1]


class TestPrimitiveGradients:
    """Analytic adjoints against central finite differences."""

    def test_matmul_3x4_4x2(self):
        rng = np.random.default_rng(1)
        w = rand(rng, 3, 2)  # random linear functional of the product
        f = lambda p: ad.sum_all(ad.mul(ad.matmul(p[0], p[1]), ad.constant(w)))
        assert ad.grad_check(f, [rand(rng, 3, 4), rand(rng, 4, 2)], h=1e-6) <= 1e-6

    def test_matmul_closed_form(self):
        rng = np.random.default_rng(2)
        a, b, g = rand(rng, 3, 4), rand(rng, 4, 2), rand(rng, 3, 2)
        na, nb = ad.param(a), ad.param(b)
        ad.backward(ad.sum_all(ad.mul(ad.matmul(na, nb), ad.constant(g))))
        np.testing.assert_allclose(na.grad, g @ b.T, rtol=1e-14)
        np.testing.assert_allclose(nb.grad, a.T @ g, rtol=1e-14)

    @pytest.mark.parametrize("op", ["add", "sub", "mul", "relu", "tanh", "log_softmax", "add_rowwise", "gather_rows"])
    def test_randomized_100_seeds(self, op):
        worst = 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            m, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            w = rand(rng, m, n)
            probe = lambda node: ad.sum_all(ad.mul(node, ad.constant(w)))
            if op in ("add", "sub", "mul"):
                fn = getattr(ad, op)
                f = lambda p: probe(fn(p[0], p[1]))
                params = [rand(rng, m, n), rand(rng, m, n)]
            elif op == "relu":
                x = rand(rng, m, n)
                x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
                f, params = (lambda p: probe(ad.relu(p[0]))), [x]
            elif op == "add_rowwise":
                f = lambda p: probe(ad.add_rowwise(p[0], p[1]))
                params = [rand(rng, m, n), rand(rng, n)]
            elif op == "gather_rows":
                idx = rng.integers(0, 3, size=m)
                f = lambda p: probe(ad.gather_rows(p[0], idx))
                params = [rand(rng, 3, n)]
            else:
                fn = getattr(ad, op)
                f, params = (lambda p: probe(fn(p[0]))), [rand(rng, m, n)]
            worst = max(worst, ad.grad_check(f, params, h=1e-6))
        assert worst <= 1e-5

    def test_contract_chain_three_cores(self):
        rng = np.random.default_rng(3)
        p = mpo.plan(12, 8, (2, 3, 2), (2, 2, 2))
        cores = [rand(rng, *s) for s in p.core_shapes()]
        w = rand(rng, 12, 8)
        f = lambda c: ad.sum_all(ad.mul(ad.contract_chain(c), ad.constant(w)))
        assert ad.grad_check(f, cores, h=1e-6) <= 1e-5

    def test_contract_chain_forward_matches_mpo(self):
        rng = np.random.default_rng(4)
        p = mpo.plan(12, 8, (2, 3, 2), (2, 2, 2))
        cores = [rand(rng, *s) for s in p.core_shapes()]
        out = ad.contract_chain([ad.constant(c) for c in cores]).value
        assert out.tobytes() == mpo.contract_cores(cores).tobytes()

    def test_contract_chain_grad_is_environment_contraction(self):
        # d<G, W(cores)>/d core_k, computed by an einsum over the other cores
        rng = np.random.default_rng(5)
        p = mpo.plan(4, 6, (2, 2), (3, 2))
        c0, c1 = [rand(rng, *s) for s in p.core_shapes()]
        g = rand(rng, 4, 6)
        n0, n1 = ad.param(c0), ad.param(c1)
        ad.backward(ad.sum_all(ad.mul(ad.contract_chain([n0, n1]), ad.constant(g))))
        g4 = g.reshape(2, 2, 3, 2)  # (i1, i2, j1, j2)
        want0 = np.einsum("abcd,kbd->ack", g4, c1[..., 0])[None]
        want1 = np.einsum("abcd,ack->kbd", g4, c0[0])[..., None]
        np.testing.assert_allclose(n0.grad, want0, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(n1.grad, want1, rtol=1e-12, atol=1e-12)


class TestMse:
    def test_zero(self):
        x = np.random.default_rng(6).standard_normal((3, 3))
        assert ad.mse_loss(ad.constant(x), ad.constant(x)).value == 0.0

    def test_example(self):
        assert ad.mse_loss(ad.constant(np.array([1.0, 2.0])), ad.constant(np.array([3.0, 2.0]))).value == 2.0

    def test_symmetric_and_grad(self):
        rng = np.random.default_rng(7)
        a, b = rand(rng, 3, 4), rand(rng, 3, 4)
        assert ad.mse_loss(ad.constant(a), ad.constant(b)).value == ad.mse_loss(ad.constant(b), ad.constant(a)).value
        assert ad.grad_check(lambda p: ad.mse_loss(p[0], p[1]), [a, b], h=1e-6) <= 1e-6
        na = ad.param(a)
        ad.backward(ad.mse_loss(na, ad.constant(b)))
        np.testing.assert_allclose(na.grad, 2 * (a - b) / a.size, rtol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ExtentMismatch):
            ad.mse_loss(ad.constant(np.ones(2)), ad.constant(np.ones(3)))


class TestSoftmaxCe:
    def test_uniform(self):
        for c in (2, 3, 7):
            val = ad.softmax_ce_loss(ad.constant(np.zeros((4, c))), np.zeros(4, dtype=int)).value
            assert val == pytest.approx(math.log(c), abs=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(8)
        z, y = rand(rng, 5, 3), rng.integers(0, 3, size=5)
        a = ad.softmax_ce_loss(ad.constant(z), y).value
        b = ad.softmax_ce_loss(ad.constant(z + 100.0), y).value
        assert abs(a - b) <= 1e-10

    def test_reference_formula_and_grad(self):
        rng = np.random.default_rng(9)
        z, y = rand(rng, 6, 4), rng.integers(0, 4, size=6)
        want = np.mean([math.log(sum(math.exp(v) for v in row)) - row[k] for row, k in zip(z, y)])
        assert ad.softmax_ce_loss(ad.constant(z), y).value == pytest.approx(want, abs=1e-13)
        assert ad.grad_check(lambda p: ad.softmax_ce_loss(p[0], y), [z], h=1e-6) <= 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            ad.softmax_ce_loss(ad.constant(np.zeros((2, 3))), np.array([0, 3]))
        with pytest.raises(LabelOutOfRange):
            ad.softmax_ce_loss(ad.constant(np.zeros((2, 3))), np.array([0, -1]))


class TestKlDistill:
    def test_identical(self):
        z = np.random.default_rng(10).standard_normal((4, 3))
        assert ad.kl_distill_loss(ad.constant(z), z, 2.0).value == pytest.approx(0.0, abs=1e-15)

    def test_closed_form(self):
        # teacher probs (1/4, 3/4), student probs (1/2, 1/2)
        want = 0.25 * math.log(0.25 / 0.5) + 0.75 * math.log(0.75 / 0.5)
        got = ad.kl_distill_loss(ad.constant(np.zeros((1, 2))), np.array([[0.0, math.log(3.0)]]), 1.0).value
        assert got == pytest.approx(want, abs=1e-15)
        assert want == pytest.approx(0.1308120, abs=1e-7)

    def test_temperature_scaling(self):
        rng = np.random.default_rng(11)
        s, t = rand(rng, 3, 4), rand(rng, 3, 4)
        temp = 3.0
        ps = np.exp(s / temp) / np.exp(s / temp).sum(1, keepdims=True)
        pt = np.exp(t / temp) / np.exp(t / temp).sum(1, keepdims=True)
        want = temp**2 * np.mean(np.sum(pt * np.log(pt / ps), axis=1))
        assert ad.kl_distill_loss(ad.constant(s), t, temp).value == pytest.approx(want, rel=1e-12)

    def test_nonnegative_and_grad(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            s, t = rand(rng, 3, 4), rand(rng, 3, 4)
            assert ad.kl_distill_loss(ad.constant(s), t, 2.0).value >= 0.0
        assert ad.grad_check(lambda p: ad.kl_distill_loss(p[0], t, 2.0), [s], h=1e-6) <= 1e-6

    @pytest.mark.parametrize("temp", [0.0, -1.0])
    def test_nonpositive_temperature(self, temp):
        with pytest.raises(NonPositiveTemperature):
            ad.kl_distill_loss(ad.constant(np.zeros((1, 2))), np.zeros((1, 2)), temp)


class TestGradCheck:
    def test_linear_is_exact(self):
        # differences are exact for linear maps at any step; a wide step limits cancellation
        rng = np.random.default_rng(13)
        w = rand(rng, 4)
        assert ad.grad_check(lambda p: ad.sum_all(ad.mul(p[0], ad.constant(w))), [rand(rng, 4)], h=1e-3) <= 1e-9

    def test_tanh_mlp(self):
        rng = np.random.default_rng(14)
        x, y = rand(rng, 5, 3), rng.integers(0, 2, size=5)

        def f(p):
            h = ad.tanh(ad.add_rowwise(ad.matmul(ad.constant(x), p[0]), p[1]))
            return ad.softmax_ce_loss(ad.add_rowwise(ad.matmul(h, p[2]), p[3]), y)

        params = [rand(rng, 3, 4), rand(rng, 4), rand(rng, 4, 2), rand(rng, 2)]
        assert ad.grad_check(f, params, h=1e-5) <= 1e-5

    def test_full_distillation_loss_two_core_layer(self):
        rng = np.random.default_rng(15)
        x, y = rand(rng, 6, 4), rng.integers(0, 3, size=6)
        teacher_logits = rand(rng, 6, 3)
        p = mpo.plan(4, 3, (2, 2), (3, 1))
        teacher_core = rand(rng, *p.core_shapes()[1])

        def f(c):
            w = ad.contract_chain([c[0], c[1]])
            logits = ad.matmul(ad.constant(x), w)
            task = ad.softmax_ce_loss(logits, y)
            kd = ad.kl_distill_loss(logits, teacher_logits, 2.0)
            aux = ad.mse_loss(c[1], ad.constant(teacher_core))
            return ad.add_n([ad.scalar_mul(task, 0.5), ad.scalar_mul(kd, 0.5), aux])

        cores = [rand(rng, *s) for s in p.core_shapes()]
        assert ad.grad_check(f, cores, h=1e-5) <= 1e-4

    def test_two_layer_composite(self):
        rng = np.random.default_rng(16)
        x = rand(rng, 4, 3)
        t = rand(rng, 4, 2)

        def f(p):
            h = ad.relu(ad.matmul(ad.constant(x), p[0]))
            return ad.mse_loss(ad.matmul(h, p[1]), ad.constant(t))

        assert ad.grad_check(f, [rand(rng, 3, 5), rand(rng, 5, 2)], h=1e-6) <= 1e-5

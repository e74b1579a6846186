import numpy as np
import pytest

from sodinv import autodiff as ad
from sodinv import nn
from sodinv.autodiff import Tape, Variable


def brute_force_conv1d(x, w, b, stride, padding):
    B, c_in, L = x.shape
    c_out, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    l_out = (L + 2 * padding - K) // stride + 1
    y = np.zeros((B, c_out, l_out))
    for bi in range(B):
        for o in range(c_out):
            for j in range(l_out):
                y[bi, o, j] = b[o] + np.sum(w[o] * xp[bi, :, j * stride : j * stride + K])
    return y


class TestConv1d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 1, 7))
        t = Tape()
        y = ad.conv1d(t.constant(x), t.constant(np.ones((1, 1, 1))),
                      t.constant(np.zeros(1)), 1, 0)
        assert np.array_equal(y.data, x)

    def test_zero_input_gives_bias(self):
        t = Tape()
        b = np.array([1.5, -0.5])
        y = ad.conv1d(t.constant(np.zeros((1, 3, 8))),
                      t.constant(np.zeros((2, 3, 3))), t.constant(b), 1, 1)
        assert np.allclose(y.data, b[:, None])

    def test_strided_window_sums(self):
        # brute-force sliding windows over padded [1..5]: [0+1+2], [2+3+4], [4+5+0]
        t = Tape()
        x = np.array([[[1.0, 2, 3, 4, 5]]])
        w = np.array([[[1.0, 1, 1]]])
        y = ad.conv1d(t.constant(x), t.constant(w), t.constant(np.zeros(1)), 2, 1)
        expected = brute_force_conv1d(x, w, np.zeros(1), 2, 1)
        assert np.array_equal(y.data, expected)
        assert y.data.ravel().tolist() == [3.0, 9.0, 9.0]

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(1)
        for stride, padding in [(1, 0), (1, 2), (2, 1), (2, 2)]:
            x = rng.normal(size=(2, 3, 11))
            w = rng.normal(size=(4, 3, 5))
            b = rng.normal(size=4)
            t = Tape()
            y = ad.conv1d(t.constant(x), t.constant(w), t.constant(b), stride, padding)
            assert np.allclose(y.data, brute_force_conv1d(x, w, b, stride, padding),
                               atol=1e-12)

    def test_shape_errors(self):
        t = Tape()
        with pytest.raises(ValueError, match="axis 1"):
            ad.conv1d(t.constant(np.zeros((1, 2, 8))),
                      t.constant(np.zeros((3, 4, 3))), t.constant(np.zeros(3)), 1, 0)


class TestConvTranspose:
    def test_adjoint_identity(self):
        rng = np.random.default_rng(2)
        for B, c_in, L, c_out, K, s, p in [(2, 3, 17, 5, 5, 2, 2), (1, 4, 10, 2, 3, 1, 0),
                                           (3, 2, 9, 4, 5, 2, 0)]:
            x = rng.normal(size=(B, c_in, L))
            w = rng.normal(size=(c_out, c_in, K))
            l_out = (L + 2 * p - K) // s + 1
            y = rng.normal(size=(B, c_out, l_out))
            t = Tape()
            cx = ad.conv1d(t.constant(x), t.constant(w), t.constant(np.zeros(c_out)), s, p)
            t2 = Tape()
            ty = ad.conv1d_transpose(t2.constant(y), t2.constant(w),
                                     t2.constant(np.zeros(c_in)), s, p, L)
            lhs = float(np.sum(cx.data * y))
            rhs = float(np.sum(x * ty.data))
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_upsample_shape_contract(self):
        t = Tape()
        x = t.constant(np.zeros((1, 4, 500)))
        w = t.constant(np.zeros((4, 2, 5)))
        y = ad.conv1d_transpose(x, w, t.constant(np.zeros(2)), 2, 0, 1000)
        assert y.data.shape == (1, 2, 1000)

    def test_zero_input_bias_only(self):
        t = Tape()
        b = np.array([0.25, -1.0])
        y = ad.conv1d_transpose(t.constant(np.zeros((1, 3, 6))),
                                t.constant(np.zeros((3, 2, 5))), t.constant(b), 2, 0, 12)
        assert np.allclose(y.data, b[:, None])

    def test_crop_too_large_rejected(self):
        t = Tape()
        with pytest.raises(ValueError, match="crop"):
            ad.conv1d_transpose(t.constant(np.zeros((1, 2, 4))),
                                t.constant(np.zeros((2, 2, 3))),
                                t.constant(np.zeros(2)), 1, 0, 100)


class TestDense:
    def test_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5))
        t = Tape()
        y = ad.dense(t.constant(x), t.constant(np.eye(5)), t.constant(np.zeros(5)))
        assert np.array_equal(y.data, x)

    def test_row_of_ones(self):
        t = Tape()
        y = ad.dense(t.constant(np.array([[1.0, 2.0, 3.0]])),
                     t.constant(np.ones((2, 3))), t.constant(np.array([0.5, -0.5])))
        assert np.allclose(y.data, [[6.5, 5.5]])

    def test_inner_dim_mismatch(self):
        t = Tape()
        with pytest.raises(ValueError, match="inner dimensions"):
            ad.dense(t.constant(np.zeros((1, 3))), t.constant(np.zeros((2, 4))),
                     t.constant(np.zeros(2)))


class TestActivations:
    def test_relu(self):
        t = Tape()
        y = ad.relu(t.constant(np.array([-1.0, 2.0, 0.0])))
        assert y.data.tolist() == [0.0, 2.0, 0.0]

    def test_gelu_at_zero(self):
        t = Tape()
        assert ad.gelu(t.constant(np.array([0.0]))).data[0] == 0.0

    def test_identity_bit_exact(self):
        t = Tape()
        x = t.constant(np.array([1.0, -2.5, np.pi]))
        assert ad.identity(x) is x

    def test_unknown_kind(self):
        t = Tape()
        with pytest.raises(ValueError, match="activation"):
            nn.activation(t.constant(np.zeros(2)), "swish")


class TestMse:
    def test_examples(self):
        t = Tape()
        a = t.constant(np.array([1.0, 2.0]))
        assert float(ad.mse_loss(a, np.array([1.0, 2.0])).data) == 0.0
        t = Tape()
        a = t.constant(np.zeros(4))
        assert float(ad.mse_loss(a, np.full(4, 3.0)).data) == pytest.approx(9.0)
        t = Tape()
        a = t.constant(np.array([0.0, 0.0]))
        assert float(ad.mse_loss(a, np.array([1.0, 3.0])).data) == pytest.approx(5.0)

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(ValueError, match="shape"):
            ad.mse_loss(t.constant(np.zeros(3)), np.zeros(4))


class TestBackward:
    def test_square(self):
        t = Tape()
        x = t.input(np.array(3.0))
        y = ad.mul(x, x)
        t.backward(y)
        assert float(x.grad) == pytest.approx(6.0)

    def test_sum_gives_ones(self):
        t = Tape()
        x = t.input(np.arange(5.0))
        t.backward(ad.vsum(x))
        assert np.array_equal(x.grad, np.ones(5))

    def test_non_scalar_loss_rejected(self):
        t = Tape()
        x = t.input(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            t.backward(ad.mul(x, x))

    def test_tape_reuse_rejected(self):
        t = Tape()
        x = t.input(np.array(2.0))
        y = ad.mul(x, x)
        t.backward(y)
        with pytest.raises(RuntimeError, match="consumed"):
            t.backward(y)

    def test_unused_parameters_keep_zero_grad(self):
        params = nn.ParameterSet()
        used = params.add("used", np.ones(3))
        unused = params.add("unused", np.ones(3))
        params.zero_grad()
        t = Tape()
        x = t.leaf(used)
        t.backward(ad.vsum(x))
        assert np.array_equal(used.grad, np.ones(3))
        assert np.array_equal(unused.grad, np.zeros(3))

    def test_composite_gradcheck(self):
        params = nn.ParameterSet()
        rng = np.random.default_rng(5)
        conv = nn.Conv1d("c", 2, 3, 3, 2, 1, params, rng)
        densel = nn.Dense("d", 3 * 8, 4, params, rng)
        xin = rng.normal(size=(2, 2, 16))
        target = rng.normal(size=(2, 4))

        def loss_fn():
            t = Tape()
            h = ad.relu(conv(t, t.constant(xin)))
            h = ad.reshape(h, (2, 3 * 8))
            return ad.mse_loss(densel(t, h), target)

        report = nn.gradcheck(loss_fn, params, np.random.default_rng(6), n_per_param=4)
        assert report.passed and report.worst_rel_err <= 1e-5

    def test_gather_and_crop_grads(self):
        t = Tape()
        x = t.input(np.arange(6.0))
        g = ad.gather(x, np.array([1, 1, 4]))
        t.backward(ad.vsum(g))
        assert x.grad.tolist() == [0.0, 2.0, 0.0, 0.0, 1.0, 0.0]
        t = Tape()
        x = t.input(np.arange(5.0))
        c = ad.crop_last(x, 3)
        t.backward(ad.vsum(c))
        assert x.grad.tolist() == [1.0, 1.0, 1.0, 0.0, 0.0]


class TestAdam:
    def test_first_step_magnitude(self):
        params = nn.ParameterSet()
        p = params.add("w", np.zeros(3))
        p.grad[...] = np.array([10.0, -5.0, 0.3])
        nn.Adam(params, lr=1e-3).step()
        assert np.max(np.abs(np.abs(p.data) - 1e-3)) < 1e-6
        assert np.all(np.sign(p.data) == [-1.0, 1.0, -1.0])

    def test_zero_grad_no_update_moments_decay(self):
        params = nn.ParameterSet()
        p = params.add("w", np.full(2, 0.5))
        opt = nn.Adam(params)
        p.grad[...] = 1.0
        opt.step()
        val_after_one = p.data.copy()
        m_before = opt.m["w"].copy()
        p.grad[...] = 0.0
        opt.step()
        # moments decay toward zero; parameter moves only through stale momentum
        assert np.all(np.abs(opt.m["w"]) < np.abs(m_before))
        assert opt.t == 2
        assert not np.array_equal(p.data, val_after_one) or np.all(opt.m["w"] == 0)

    def test_equal_grads_update_identically(self):
        params = nn.ParameterSet()
        a = params.add("a", np.ones(4))
        b = params.add("b", np.ones(4))
        a.grad[...] = 0.7
        b.grad[...] = 0.7
        nn.Adam(params, lr=1e-2).step()
        assert np.array_equal(a.data, b.data)


class TestGradcheckNegativeControl:
    def test_corrupted_backward_fails(self):
        params = nn.ParameterSet()
        p = params.add("w", np.array([1.3]))

        def loss_fn():
            t = Tape()
            x = t.leaf(p)
            # forward 2x with a deliberately wrong vjp (3 instead of 2)
            bad = t._record(Variable(2.0 * x.data, t, (x,), lambda g: (3.0 * g,)))
            return ad.vsum(bad)

        report = nn.gradcheck(loss_fn, params, np.random.default_rng(0))
        assert not report.passed


class TestDeterminism:
    def test_training_steps_bit_identical(self):
        def run():
            params = nn.ParameterSet()
            rng = np.random.default_rng(42)
            layer = nn.Dense("d", 6, 2, params, rng)
            opt = nn.Adam(params)
            data_rng = np.random.default_rng(7)
            x = data_rng.normal(size=(8, 6))
            y = data_rng.normal(size=(8, 2))
            for _ in range(5):
                t = Tape()
                loss = ad.mse_loss(layer(t, t.constant(x)), y)
                params.zero_grad()
                t.backward(loss)
                opt.step()
            return params.copy_values()

        a, b = run(), run()
        for name in a:
            assert np.array_equal(a[name], b[name])


class TestParameterSet:
    def test_duplicate_names_rejected(self):
        params = nn.ParameterSet()
        params.add("w", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            params.add("w", np.zeros(2))

    def test_stable_order(self):
        params = nn.ParameterSet()
        for name in ("c", "a", "b"):
            params.add(name, np.zeros(1))
        assert params.names() == ["c", "a", "b"]

import math

import numpy as np
import pytest

from satgrade.degradation import upscale
from satgrade.errors import ContractViolation, Divergence, InvalidArgument
from satgrade.srnet import (
    AdamConfig,
    GradientSharpnessScorer,
    LossConfig,
    SrModel,
    backward,
    conv2d,
    conv2d_backward,
    forward,
    init_model,
    leaky_relu,
    leaky_relu_backward,
    param_shapes,
    pseudo_huber,
    pseudo_huber_grad,
    receptive_field,
    super_resolve,
    total_loss,
    total_loss_and_grad,
    train,
)


def random_model(blocks, filters, seed, dtype=np.float64, scale=0.3):
    rng = np.random.default_rng(seed)
    shapes = param_shapes(blocks, filters, 3)
    params = {n: (rng.standard_normal(s) * scale).astype(dtype) for n, s in shapes.items()}
    return SrModel(blocks, filters, 3, params)


def zero_model(blocks=2, filters=4):
    m = init_model(blocks, filters, seed=0, dtype=np.float64)
    for p in m.params.values():
        p[...] = 0
    return m


# --- direct-loop reference -------------------------------------------------


def conv_loops(x, w, b):
    h, wd, c = x.shape
    f, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((h, wd, f))
    for o in range(f):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for ci in range(c):
                    for u in range(k):
                        for v in range(k):
                            y, xx = i + u - p, j + v - p
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += w[o, ci, u, v] * x[y, xx, ci]
                out[i, j, o] = acc
    return out


def lrelu_loops(x):
    out = x.copy()
    for idx in np.ndindex(x.shape):
        if x[idx] <= 0:
            out[idx] = 0.2 * x[idx]
    return out


def forward_loops(model, x):
    P = model.params
    a = lrelu_loops(conv_loops(x, P["head.w"], P["head.b"]))
    for i in range(model.num_blocks):
        t = lrelu_loops(conv_loops(a, P[f"block{i}.conv1.w"], P[f"block{i}.conv1.b"]))
        a = a + conv_loops(t, P[f"block{i}.conv2.w"], P[f"block{i}.conv2.b"])
    return x + conv_loops(a, P["tail.w"], P["tail.b"])


# --- finite differences ----------------------------------------------------


def numeric_grad(f, x, eps=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, n):
    return np.abs(a - n).max() / max(np.abs(n).max(), 1e-8)


class TestForward:
    def test_zero_weights_identity(self):
        x = np.random.default_rng(0).random((12, 10, 3))
        assert np.array_equal(forward(zero_model(), x), x)

    def test_pure(self):
        m = init_model(2, 8, seed=1)
        x = np.random.default_rng(1).random((16, 16, 3)).astype(np.float32)
        assert forward(m, x).tobytes() == forward(m, x).tobytes()

    @pytest.mark.parametrize("seed", range(3))
    def test_loop_oracle(self, seed):
        m = random_model(1, 2, seed)
        x = np.random.default_rng(seed + 10).random((8, 8, 3))
        np.testing.assert_allclose(forward(m, x), forward_loops(m, x), rtol=0, atol=1e-10)

    def test_batch_matches_single(self):
        m = random_model(1, 4, 3)
        xs = np.random.default_rng(3).random((3, 9, 7, 3))
        out = forward(m, xs)
        for i in range(3):
            np.testing.assert_allclose(out[i], forward(m, xs[i]), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(InvalidArgument):
            forward(zero_model(), np.zeros((8, 8, 1)))

    def test_leaky_slope_exact(self):
        a = -np.random.default_rng(2).random(1000) * 10
        assert np.array_equal(leaky_relu(a), 0.2 * a)
        pos = -a
        assert np.array_equal(leaky_relu(pos), pos)

    def test_translation_covariance(self):
        m = random_model(2, 4, 4)
        x = np.random.default_rng(4).random((30, 30, 3))
        shifted = np.roll(x, 1, axis=1)
        r = receptive_field(m).full // 2
        a = forward(m, x)
        b = forward(m, shifted)
        lo, hi = r + 1, 30 - r - 1
        assert np.array_equal(b[lo:hi, lo + 1 : hi], a[lo:hi, lo : hi - 1])


class TestReceptiveField:
    def test_ten_blocks(self):
        assert receptive_field(10, 3).blocks == 41
        assert receptive_field(init_model(10, 4)).blocks == 41

    def test_no_blocks(self):
        assert receptive_field(0, 3).blocks == 1

    def test_two_blocks(self):
        assert tuple(receptive_field(2, 3)) == (9, 13)

    def test_full_matches_dependency_cone(self):
        # perturb the centre input pixel and measure which outputs change
        m = random_model(2, 3, 5)
        x = np.random.default_rng(5).random((31, 31, 3))
        y = x.copy()
        y[15, 15, :] += 1.0
        diff = np.abs(forward(m, y) - forward(m, x)).sum(axis=2) > 0
        rows = np.flatnonzero(diff.any(axis=1))
        assert rows.max() - rows.min() + 1 == receptive_field(m).full


class TestPseudoHuber:
    def test_zero(self):
        x = np.random.default_rng(0).random((4, 4, 3))
        assert pseudo_huber(x, x) == 0.0

    def test_closed_form(self):
        assert pseudo_huber(np.array([3.0]), np.array([0.0]), 1.0) == pytest.approx(math.sqrt(10) - 1, abs=1e-12)

    def test_quadratic_regime(self):
        d = 0.03
        e = 0.1 * d
        assert pseudo_huber(np.full(10, e), np.zeros(10), d) == pytest.approx(e * e / 2, rel=0.01)

    def test_linear_regime(self):
        d = 0.03
        e = 10 * d
        assert pseudo_huber(np.full(10, -e), np.zeros(10), d) == pytest.approx(d * e, rel=0.1)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        p, t = rng.random((6, 6, 3)), rng.random((6, 6, 3))
        num = numeric_grad(lambda: pseudo_huber(p, t, 0.1) * p.size, p)
        assert rel_err(pseudo_huber_grad(p, t, 0.1), num) < 1e-4

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            pseudo_huber(np.zeros(3), np.zeros(4))
        with pytest.raises(InvalidArgument):
            pseudo_huber(np.zeros(3), np.zeros(3), 0.0)


class ConstScorer:
    def __init__(self, s):
        self.s = s

    def score(self, image):
        return self.s

    def score_grad(self, image):
        return np.zeros_like(image)


class TestTotalLoss:
    rng = np.random.default_rng(7)
    pred = rng.random((8, 8, 3))
    target = rng.random((8, 8, 3))

    def test_zero(self):
        assert total_loss(self.target, self.target, LossConfig()) == 0.0

    def test_gamma_weighting(self):
        f = pseudo_huber(self.pred, self.target)
        cfg = LossConfig(gamma=0.001, scorer=ConstScorer(7.5))
        assert total_loss(self.pred, self.target, cfg) == pytest.approx(f + 0.0025, abs=1e-15)

    def test_perfect_score(self):
        f = pseudo_huber(self.pred, self.target)
        assert total_loss(self.pred, self.target, LossConfig(gamma=5.0, scorer=ConstScorer(10.0))) == f

    def test_no_scorer_ignores_gamma(self):
        f = pseudo_huber(self.pred, self.target)
        assert total_loss(self.pred, self.target, LossConfig(gamma=1.0)) == f

    @pytest.mark.parametrize("s", [-0.1, 10.5, float("nan")])
    def test_contract(self, s):
        with pytest.raises(ContractViolation):
            total_loss(self.pred, self.target, LossConfig(gamma=0.1, scorer=ConstScorer(s)))

    def test_monotone_in_gamma(self):
        scorer = GradientSharpnessScorer()
        vals = [total_loss(self.pred, self.target, LossConfig(gamma=g, scorer=scorer)) for g in (0, 1e-3, 1e-2, 0.1, 1)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_config_invariants(self):
        with pytest.raises(InvalidArgument):
            LossConfig(delta=0)
        with pytest.raises(InvalidArgument):
            LossConfig(gamma=-1)

    def test_proxy_score_range_and_gradient(self):
        scorer = GradientSharpnessScorer()
        x = np.random.default_rng(3).random((6, 6, 3))
        assert 0 <= scorer.score(x) <= 10
        assert scorer.score(np.full((6, 6, 3), 0.5)) == pytest.approx(0.0, abs=1e-3)
        assert rel_err(scorer.score_grad(x), numeric_grad(lambda: scorer.score(x), x)) < 1e-4

    def test_total_gradient_with_scorer(self):
        cfg = LossConfig(gamma=0.01, scorer=GradientSharpnessScorer())
        rng = np.random.default_rng(4)
        p, t = rng.random((2, 6, 6, 3)), rng.random((2, 6, 6, 3))
        _, g = total_loss_and_grad(p, t, cfg)
        assert rel_err(g, numeric_grad(lambda: total_loss(p, t, cfg), p)) < 1e-4


class TestBackward:
    def test_zero_grad_output(self):
        m = random_model(1, 2, 0)
        x = np.random.default_rng(0).random((6, 6, 3))
        _, cache = forward(m, x, return_cache=True)
        grads, dx = backward(m, cache, np.zeros_like(x))
        assert all(not g.any() for g in grads.values())
        assert not dx.any()

    def test_skip_only_input_gradient(self):
        m = zero_model(1, 2)
        x = np.random.default_rng(1).random((6, 6, 3))
        g = np.random.default_rng(2).random((6, 6, 3))
        _, cache = forward(m, x, return_cache=True)
        assert np.array_equal(backward(m, cache, g)[1], g)

    def test_shape_mismatch(self):
        m = zero_model(1, 2)
        _, cache = forward(m, np.zeros((6, 6, 3)), return_cache=True)
        with pytest.raises(InvalidArgument):
            backward(m, cache, np.zeros((5, 6, 3)))

    @pytest.mark.parametrize("seed", range(3))
    def test_conv_layer(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 6, 6, 3))
        w = rng.standard_normal((2, 3, 3, 3))
        b = rng.standard_normal(2)
        G = rng.standard_normal((1, 6, 6, 2))
        y, cols = conv2d(x, w, b)
        dx, dw, db = conv2d_backward(G, cols, w, x.shape)
        f = lambda: float(np.sum(conv2d(x, w, b)[0] * G))  # noqa: E731
        assert rel_err(dx, numeric_grad(f, x)) < 1e-4
        assert rel_err(dw, numeric_grad(f, w)) < 1e-4
        assert rel_err(db, numeric_grad(f, b)) < 1e-4

    def test_leaky_layer(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 6, 3))
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
        G = rng.standard_normal(x.shape)
        num = numeric_grad(lambda: float(np.sum(leaky_relu(x) * G)), x)
        assert rel_err(leaky_relu_backward(x, G), num) < 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_whole_network(self, seed):
        m = random_model(1, 2, seed)
        rng = np.random.default_rng(seed + 100)
        x = rng.random((6, 6, 3))
        t = rng.random((6, 6, 3))
        cfg = LossConfig(delta=0.1)

        def loss():
            return total_loss(forward(m, x), t, cfg)

        out, cache = forward(m, x, return_cache=True)
        _, g = total_loss_and_grad(out, t, cfg)
        grads, dx = backward(m, cache, g)
        for name, p in m.params.items():
            assert rel_err(grads[name], numeric_grad(loss, p)) < 1e-4, name
        assert rel_err(dx, numeric_grad(loss, x)) < 1e-4


def tiny_pairs(n=4, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        hr = rng.random((16, 16, 3))
        from scipy import ndimage

        hr = ndimage.gaussian_filter(hr, (1, 1, 0))
        out.append((hr[::2, ::2], hr, 2.0))
    return out


class TestTrain:
    def test_zero_lr_noop(self):
        m = init_model(1, 4, seed=0)
        res = train(m, tiny_pairs(), AdamConfig(lr=0.0, batch_size=2), epochs=3)
        for n in m.params:
            assert np.array_equal(res.model.params[n], m.params[n])
        assert len(res.epoch_losses) == 3

    def test_does_not_mutate_input(self):
        m = init_model(1, 4, seed=0)
        before = {n: p.copy() for n, p in m.params.items()}
        train(m, tiny_pairs(), AdamConfig(lr=1e-2), epochs=1)
        assert all(np.array_equal(before[n], m.params[n]) for n in before)

    def test_overfit_single_pair(self):
        pair = tiny_pairs(1, 3)
        res = train(init_model(1, 8, seed=1), pair * 8, AdamConfig(lr=1e-3), max_steps=200, epochs=1000)
        assert len(res.step_losses) == 200
        assert res.step_losses[-1] < res.step_losses[0]

    def test_deterministic_trace(self):
        a = train(init_model(1, 4, seed=2), tiny_pairs(6), AdamConfig(lr=1e-3, batch_size=4), epochs=3, seed=9)
        b = train(init_model(1, 4, seed=2), tiny_pairs(6), AdamConfig(lr=1e-3, batch_size=4), epochs=3, seed=9)
        assert a.step_losses == b.step_losses
        assert a.epoch_losses == b.epoch_losses

    def test_divergence_reports_step(self):
        lr, hr, s = tiny_pairs(1)[0]
        hr = hr.copy()
        hr[0, 0, 0] = np.nan
        with pytest.raises(Divergence) as info:
            train(init_model(1, 2), [(lr, hr, s)], epochs=1)
        assert info.value.step == 0

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            train(init_model(1, 2), [], epochs=1)

    def test_on_step_callback(self):
        seen = []
        res = train(init_model(1, 2), tiny_pairs(), AdamConfig(batch_size=2), max_steps=5, epochs=10,
                    on_step=lambda step, model: seen.append(step))
        assert seen == [1, 2, 3, 4, 5]
        assert len(res.step_losses) == 5

    def test_with_proxy_scorer(self):
        res = train(init_model(1, 4, seed=0), tiny_pairs(), AdamConfig(lr=1e-3, batch_size=2),
                    LossConfig(gamma=1e-3, scorer=GradientSharpnessScorer()), epochs=2)
        assert np.all(np.isfinite(res.step_losses))


class TestSuperResolve:
    def test_dims(self):
        out = super_resolve(init_model(1, 4), np.random.default_rng(0).random((10, 13, 3)), 2.0)
        assert out.shape == (20, 26, 3)
        assert out.min() >= 0 and out.max() <= 1

    def test_zero_model_is_bicubic(self):
        lr = np.random.default_rng(1).random((12, 12, 3))
        up = upscale(lr, 2.5)
        assert np.array_equal(super_resolve(zero_model(), lr, 2.5), np.clip(up, 0, 1))

    def test_scale_must_exceed_one(self):
        with pytest.raises(InvalidArgument):
            super_resolve(zero_model(), np.zeros((8, 8, 3)), 1.0)

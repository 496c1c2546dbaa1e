"""Residual super-resolution CNN with hand-written backpropagation.

Architecture (all convolutions k x k, stride 1, zero padded to same size)::

    y' --> conv(3->F) -> LeakyReLU(0.2)
        --> num_blocks x [ x + conv(F->F)(LeakyReLU(conv(F->F)(x))) ]
        --> conv(F->3) --(+ y')--> output

The network predicts a residual over the bicubic upscale ``y'``.  Arrays are
NHWC internally; single images may be passed as HWC.  Weights are stored as
``(out_channels, in_channels, k, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .degradation import upscale
from .errors import ContractViolation, Divergence, InvalidArgument

SLOPE = 0.2


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------


def param_names(num_blocks: int) -> list[str]:
    names = ["head.w", "head.b"]
    for i in range(num_blocks):
        names += [f"block{i}.conv1.w", f"block{i}.conv1.b", f"block{i}.conv2.w", f"block{i}.conv2.b"]
    return names + ["tail.w", "tail.b"]


def param_shapes(num_blocks, num_filters, kernel_size, channels=3):
    k, F = kernel_size, num_filters
    shapes = {"head.w": (F, channels, k, k), "head.b": (F,)}
    for i in range(num_blocks):
        shapes[f"block{i}.conv1.w"] = (F, F, k, k)
        shapes[f"block{i}.conv1.b"] = (F,)
        shapes[f"block{i}.conv2.w"] = (F, F, k, k)
        shapes[f"block{i}.conv2.b"] = (F,)
    shapes["tail.w"] = (channels, F, k, k)
    shapes["tail.b"] = (channels,)
    return shapes


@dataclass
class SrModel:
    num_blocks: int = 10
    num_filters: int = 64
    kernel_size: int = 3
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise InvalidArgument(f"kernel_size must be odd, got {self.kernel_size}")
        if self.num_blocks < 0 or self.num_filters < 1:
            raise InvalidArgument("num_blocks must be >= 0 and num_filters >= 1")
        expected = param_shapes(self.num_blocks, self.num_filters, self.kernel_size)
        if not self.params:
            self.params = {n: np.zeros(s, dtype=np.float32) for n, s in expected.items()}
        if set(self.params) != set(expected):
            raise InvalidArgument("parameter names do not match the architecture")
        for name, shape in expected.items():
            p = np.asarray(self.params[name])
            if p.shape != shape:
                raise InvalidArgument(f"{name} has shape {p.shape}, expected {shape}")
            if not np.all(np.isfinite(p)):
                raise InvalidArgument(f"{name} has non-finite entries")
            self.params[name] = p

    @property
    def names(self) -> list[str]:
        return param_names(self.num_blocks)

    @property
    def dtype(self):
        return self.params["head.w"].dtype

    def copy(self) -> "SrModel":
        return SrModel(self.num_blocks, self.num_filters, self.kernel_size,
                       {n: p.copy() for n, p in self.params.items()})

    def astype(self, dtype) -> "SrModel":
        return SrModel(self.num_blocks, self.num_filters, self.kernel_size,
                       {n: p.astype(dtype) for n, p in self.params.items()})


def init_model(num_blocks=10, num_filters=64, kernel_size=3, seed=0, dtype=np.float32) -> SrModel:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(num_blocks, num_filters, kernel_size).items():
        if name.endswith(".w"):
            fan_in = shape[1] * shape[2] * shape[3]
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return SrModel(num_blocks, num_filters, kernel_size, params)


class ReceptiveField(NamedTuple):
    blocks: int
    full: int


def receptive_field(model_or_blocks, kernel_size=None) -> ReceptiveField:
    """Input footprint of one output pixel.

    ``blocks`` counts only the residual blocks' convolutions; ``full`` adds
    the head and tail convolutions.
    """
    if isinstance(model_or_blocks, SrModel):
        nb, k = model_or_blocks.num_blocks, model_or_blocks.kernel_size
    else:
        nb, k = int(model_or_blocks), 3 if kernel_size is None else int(kernel_size)
    return ReceptiveField(1 + 2 * nb * (k - 1), 1 + (2 * nb + 2) * (k - 1))


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _im2col(x, k):
    # column layout (row offset, column offset, channel), channel fastest
    p = k // 2
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.empty((n, h, w, k * k * c), dtype=x.dtype)
    for u in range(k):
        for v in range(k):
            j = (u * k + v) * c
            cols[..., j : j + c] = xp[:, u : u + h, v : v + w, :]
    return cols.reshape(n * h * w, k * k * c)


def _wmat(w):
    f = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(f, -1)


def conv2d(x, w, b):
    """Same-size zero-padded convolution (cross-correlation form), NHWC.

    Returns the output and the column matrix needed by :func:`conv2d_backward`.
    """
    n, h, wd, c = x.shape
    f, cin, k, _ = w.shape
    if cin != c:
        raise InvalidArgument(f"convolution expects {cin} input channels, got {c}")
    cols = _im2col(x, k)
    y = cols @ _wmat(w).T
    y += b
    return y.reshape(n, h, wd, f), cols


def conv2d_backward(dy, cols, w, x_shape):
    """Gradients of :func:`conv2d` w.r.t. input, weights and bias."""
    n, h, wd, c = x_shape
    f, _, k, _ = w.shape
    g = dy.reshape(-1, f)
    dw = (g.T @ cols).reshape(f, k, k, c).transpose(0, 3, 1, 2)
    db = g.sum(axis=0)
    dcols = (g @ _wmat(w)).reshape(n, h, wd, k * k * c)
    p = k // 2
    dxp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=dy.dtype)
    for u in range(k):
        for v in range(k):
            j = (u * k + v) * c
            dxp[:, u : u + h, v : v + wd, :] += dcols[..., j : j + c]
    return dxp[:, p : p + h, p : p + wd, :], np.ascontiguousarray(dw), db


def leaky_relu(x):
    return np.where(x > 0, x, SLOPE * x)


def leaky_relu_backward(x, dy):
    return np.where(x > 0, dy, SLOPE * dy)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def _as_batch(x):
    x = np.asarray(x)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise InvalidArgument(f"expected HWC or NHWC input, got shape {x.shape}")
    if x.shape[-1] != 3:
        raise InvalidArgument(f"network input must have 3 channels, got {x.shape[-1]}")
    return x, single


def forward(model: SrModel, y_upscaled, return_cache=False):
    """Run the network on bicubic-upscaled input(s) at target resolution."""
    x, single = _as_batch(y_upscaled)
    x = x.astype(model.dtype, copy=False)
    P = model.params
    cache = {"x_shape": x.shape}

    h0, cols = conv2d(x, P["head.w"], P["head.b"])
    cache["head"] = (cols, x.shape, h0)
    a = leaky_relu(h0)
    for i in range(model.num_blocks):
        t1, cols1 = conv2d(a, P[f"block{i}.conv1.w"], P[f"block{i}.conv1.b"])
        t2 = leaky_relu(t1)
        t3, cols2 = conv2d(t2, P[f"block{i}.conv2.w"], P[f"block{i}.conv2.b"])
        cache[f"block{i}"] = (cols1, a.shape, t1, cols2, t2.shape)
        a = a + t3
    r, cols = conv2d(a, P["tail.w"], P["tail.b"])
    cache["tail"] = (cols, a.shape)
    out = x + r
    if single:
        out = out[0]
    return (out, cache) if return_cache else out


def backward(model: SrModel, cache, grad_output):
    """Exact gradients of :func:`forward` given the upstream gradient.

    Returns ``(grads, grad_input)`` where ``grads`` maps parameter names to
    arrays shaped like the parameters.
    """
    g, single = _as_batch(grad_output)
    if g.shape != cache["x_shape"]:
        raise InvalidArgument(f"grad_output shape {g.shape} does not match input {cache['x_shape']}")
    g = g.astype(model.dtype, copy=False)
    P = model.params
    grads = {}

    cols, a_shape = cache["tail"]
    da, grads["tail.w"], grads["tail.b"] = conv2d_backward(g, cols, P["tail.w"], a_shape)
    for i in reversed(range(model.num_blocks)):
        cols1, a_in_shape, t1, cols2, t2_shape = cache[f"block{i}"]
        dt2, grads[f"block{i}.conv2.w"], grads[f"block{i}.conv2.b"] = conv2d_backward(
            da, cols2, P[f"block{i}.conv2.w"], t2_shape
        )
        dt1 = leaky_relu_backward(t1, dt2)
        da_branch, grads[f"block{i}.conv1.w"], grads[f"block{i}.conv1.b"] = conv2d_backward(
            dt1, cols1, P[f"block{i}.conv1.w"], a_in_shape
        )
        da = da + da_branch
    cols, x_shape, h0 = cache["head"]
    dh0 = leaky_relu_backward(h0, da)
    dx, grads["head.w"], grads["head.b"] = conv2d_backward(dh0, cols, P["head.w"], x_shape)
    dx = dx + g
    if single:
        dx = dx[0]
    return grads, dx


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _check_pair(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise InvalidArgument(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def pseudo_huber(pred, target, delta=0.03):
    """Mean of ``delta^2 * (sqrt(1 + (e / delta)^2) - 1)`` with ``e = pred - target``."""
    pred, target = _check_pair(pred, target)
    if not delta > 0:
        raise InvalidArgument(f"delta must be positive, got {delta}")
    e = pred - target
    return float(np.mean(delta * delta * (np.sqrt(1.0 + (e / delta) ** 2) - 1.0)))


def pseudo_huber_grad(pred, target, delta=0.03):
    """Elementwise derivative ``e / sqrt(1 + (e / delta)^2)``, not divided by the count."""
    pred, target = _check_pair(pred, target)
    e = pred - target
    return e / np.sqrt(1.0 + (e / delta) ** 2)


class QualityScorer(Protocol):
    def score(self, image) -> float:
        """Quality in [0, 10], higher is better."""

    def score_grad(self, image) -> np.ndarray:
        """Gradient of :meth:`score` w.r.t. ``image``."""


class GradientSharpnessScorer:
    """Differentiable stand-in for a learned no-reference quality model.

    ``s = 10 * m / (m + m0)`` with ``m`` the mean finite-difference gradient
    magnitude of the image.  This is not a trained perceptual model; it only
    rewards local contrast so the perceptual term can be exercised.
    """

    def __init__(self, m0=0.05, eps=1e-6):
        self.m0 = m0
        self.eps = eps

    def _mean_grad(self, image):
        x = np.asarray(image, dtype=np.float64)
        gx = x[..., :-1, 1:, :] - x[..., :-1, :-1, :]
        gy = x[..., 1:, :-1, :] - x[..., :-1, :-1, :]
        mag = np.sqrt(gx * gx + gy * gy + self.eps * self.eps)
        return mag.mean(), gx, gy, mag

    def score(self, image) -> float:
        m = self._mean_grad(image)[0]
        return float(10.0 * m / (m + self.m0))

    def score_grad(self, image) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64)
        m, gx, gy, mag = self._mean_grad(x)
        ds_dm = 10.0 * self.m0 / (m + self.m0) ** 2
        dgx = ds_dm * gx / mag / mag.size
        dgy = ds_dm * gy / mag / mag.size
        d = np.zeros_like(x)
        d[..., :-1, 1:, :] += dgx
        d[..., 1:, :-1, :] += dgy
        d[..., :-1, :-1, :] -= dgx + dgy
        return d


@dataclass
class LossConfig:
    delta: float = 0.03
    gamma: float = 0.0
    scorer: QualityScorer | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidArgument(f"delta must be positive, got {self.delta}")
        if not self.gamma >= 0:
            raise InvalidArgument(f"gamma must be >= 0, got {self.gamma}")


def _checked_score(scorer, image):
    s = float(scorer.score(image))
    if not 0.0 <= s <= 10.0:
        raise ContractViolation(f"quality scorer returned {s}, outside [0, 10]")
    return s


def total_loss(pred, target, cfg: LossConfig) -> float:
    """Fidelity plus ``gamma * (10 - score)``; a batch averages the perceptual term."""
    value, _ = total_loss_and_grad(pred, target, cfg, need_grad=False)
    return value


def total_loss_and_grad(pred, target, cfg: LossConfig, need_grad=True):
    pred, target = _check_pair(pred, target)
    value = pseudo_huber(pred, target, cfg.delta)
    grad = pseudo_huber_grad(pred, target, cfg.delta) / pred.size if need_grad else None
    if cfg.scorer is None or cfg.gamma == 0:
        return value, grad
    batch = pred if pred.ndim == 4 else pred[None]
    q = np.mean([10.0 - _checked_score(cfg.scorer, im) for im in batch])
    value += cfg.gamma * q
    if need_grad:
        dq = -np.stack([cfg.scorer.score_grad(im) for im in batch]) / len(batch)
        grad = grad + cfg.gamma * dq.reshape(pred.shape)
    return float(value), grad


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------


@dataclass
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8


@dataclass
class TrainResult:
    model: SrModel
    epoch_losses: list
    step_losses: list


def prepare_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``(lr, hr, scale)`` triples into upscaled inputs and targets."""
    xs, ys = [], []
    for lr, hr, scale in pairs:
        hr = np.asarray(hr)
        xs.append(upscale(lr, scale, out_shape=hr.shape[:2]))
        ys.append(hr)
    return np.stack(xs), np.stack(ys)


def train(model: SrModel, pairs: Sequence, opt: AdamConfig = None, loss_cfg: LossConfig = None,
          epochs: int = 1, seed: int = 0, max_steps: int | None = None, log=None,
          on_step=None) -> TrainResult:
    """Minibatch Adam on :func:`total_loss`.

    ``pairs`` is a sequence of ``(lr, hr, scale)``; each LR image is bicubic
    upscaled to its HR size once, up front.  Batches are drawn from a
    seeded permutation per epoch, so runs with the same seed produce the
    same loss trace.  Training stops after ``epochs`` or ``max_steps``,
    whichever comes first.  ``on_step(step, model)``, if given, is called
    after every update (e.g. for checkpoints); it must not modify the model.
    """
    if len(pairs) == 0:
        raise InvalidArgument("training set is empty")
    opt = opt or AdamConfig()
    loss_cfg = loss_cfg or LossConfig()
    model = model.copy()
    dtype = model.dtype
    X, Y = prepare_pairs(pairs)
    X = X.astype(dtype)
    Y = Y.astype(dtype)

    rng = np.random.default_rng(seed)
    m = {n: np.zeros_like(p) for n, p in model.params.items()}
    v = {n: np.zeros_like(p) for n, p in model.params.items()}
    step = 0
    epoch_losses, step_losses = [], []
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(order), opt.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            idx = order[start : start + opt.batch_size]
            out, cache = forward(model, X[idx], return_cache=True)
            loss, grad = total_loss_and_grad(out, Y[idx], loss_cfg)
            if not np.isfinite(loss):
                raise Divergence(step, loss)
            grads, _ = backward(model, cache, grad.astype(dtype))
            step += 1
            b1t = 1.0 - opt.beta1**step
            b2t = 1.0 - opt.beta2**step
            for name, p in model.params.items():
                gn = grads[name]
                m[name] = opt.beta1 * m[name] + (1 - opt.beta1) * gn
                v[name] = opt.beta2 * v[name] + (1 - opt.beta2) * gn * gn
                update = opt.lr * (m[name] / b1t) / (np.sqrt(v[name] / b2t) + opt.eps)
                p -= update.astype(dtype)
            losses.append(loss)
            step_losses.append(loss)
            if on_step is not None:
                on_step(step, model)
        if losses:
            epoch_losses.append(float(np.mean(losses)))
            if log is not None:
                log(f"epoch {epoch + 1}: loss {epoch_losses[-1]:.6g} ({step} steps)")
        if max_steps is not None and step >= max_steps:
            break
    return TrainResult(model, epoch_losses, step_losses)


def super_resolve(model: SrModel, lr_image, scale: float, out_shape=None) -> np.ndarray:
    """Bicubic-upscale by ``scale``, apply the network, clip to [0, 1]."""
    if not scale > 1:
        raise InvalidArgument(f"scale must exceed 1, got {scale}")
    y = upscale(lr_image, scale, out_shape=out_shape)
    return np.clip(forward(model, y), 0.0, 1.0).astype(np.float64)

"""Convolution, pooling, linear, batchnorm, loss, and SGD.

Convolutions use cross-correlation semantics (no kernel flip) and are
lowered to matrix products over an im2col layout; the naive-loop oracle in
the test suite pins the semantics.  All layers are float64 and differentiable
through the tensor tape.

Parameter initialization: weights uniform in +/- sqrt(1/fan_in), biases zero,
batchnorm scale 1 / shift 0, drawn from a caller-supplied SplitMix64 stream
so two builds from one seed are bitwise identical.

Layers are read-only during forward/backward; optimizer steps and batchnorm
running-stat updates mutate state and need exclusive access.
"""

from __future__ import annotations

import numpy as np

from .rng import SplitMix64
from .tensor import Tensor, apply_op, as_tensor


class LayerError(ValueError):
    """Raised on invalid layer configuration or input."""


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v), int(v))


def _uniform_init(rng: SplitMix64, shape, fan_in: int) -> Tensor:
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(shape, -bound, bound), requires_grad=True)


# ---------------------------------------------------------------------------
# conv2d


def _im2col(xp: np.ndarray, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    """(N, C, Hp, Wp) -> (N, oh*ow, C*kh*kw) patch matrix."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw]  # (N, C, oh, ow, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride=1, padding=0) -> Tensor:
    """Batched 2D cross-correlation of (N, Cin, H, W) with (Cout, Cin, Kh, Kw)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise LayerError(f"conv2d expects NCHW input, got shape {x.shape}")
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise LayerError(
            f"conv2d channel mismatch: input has {cin}, weight expects {cin_w}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise LayerError(
            f"conv2d output degenerate: input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {sh}x{sw}, padding {ph}x{pw} gives {oh}x{ow}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = cols @ wmat.T  # (N, oh*ow, Cout)
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 2, 1).reshape(n, cout, oh, ow)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n, oh * ow, cout)
        gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        gcols = gmat @ wmat  # (N, oh*ow, C*kh*kw)
        taps = gcols.reshape(n, oh, ow, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += taps[:, :, i, j]
        gx = gxp[:, :, ph:ph + h, pw:pw + w]
        gb = gmat.sum(axis=(0, 1)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op("conv2d", out, inputs, back)


class Conv2d:
    """Conv layer holding (Cout, Cin, Kh, Kw) weights and an optional bias."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, bias=True, rng: SplitMix64 | None = None):
        kh, kw = _pair(kernel_size)
        rng = rng or SplitMix64(0)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        self.weight = _uniform_init(rng, (out_channels, in_channels, kh, kw),
                                    in_channels * kh * kw)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


# ---------------------------------------------------------------------------
# conv1d (channel-descriptor convolution, "same" zero padding)


def conv1d_same(z: Tensor, weight: Tensor) -> Tensor:
    """Same-length 1D cross-correlation with a (1, 1, k) kernel.

    Accepts a single length-C descriptor or (N, C) rows.
    """
    z = as_tensor(z)
    if z.ndim == 1:
        return conv1d_same(z.reshape(1, -1), weight).reshape(-1)
    if z.ndim != 2:
        raise LayerError(f"conv1d expects (C,) or (N, C) input, got shape {z.shape}")
    k = int(weight.shape[-1])
    if k % 2 == 0:
        raise LayerError(f"conv1d kernel size must be odd, got {k}")
    pad = (k - 1) // 2
    n, c = z.shape
    w = weight.data.reshape(k)
    zp = np.pad(z.data, ((0, 0), (pad, pad)))
    out = np.zeros((n, c))
    for j in range(k):
        out += w[j] * zp[:, j:j + c]

    def back(g):
        gzp = np.zeros_like(zp)
        gw = np.zeros(k)
        for j in range(k):
            gzp[:, j:j + c] += w[j] * g
            gw[j] = float((g * zp[:, j:j + c]).sum())
        gz = gzp[:, pad:pad + c] if pad else gzp
        return gz, gw.reshape(weight.shape)

    return apply_op("conv1d", out, (z, weight), back)


class Conv1d:
    """Kernel of shape (1, 1, k), k odd, zero-padded to preserve length."""

    def __init__(self, kernel_size: int, rng: SplitMix64 | None = None):
        if kernel_size % 2 == 0:
            raise LayerError(f"conv1d kernel size must be odd, got {kernel_size}")
        rng = rng or SplitMix64(0)
        self.weight = _uniform_init(rng, (1, 1, kernel_size), kernel_size)

    def forward(self, z: Tensor) -> Tensor:
        return conv1d_same(z, self.weight)

    def params(self):
        return [("weight", self.weight)]


# ---------------------------------------------------------------------------
# pooling


def pool2d(kind: str, x: Tensor, window, stride=None, padding=0) -> Tensor:
    """Windowed max/avg pooling.

    Max pooling pads with -inf and routes each window's gradient to the first
    maximal element in row-major scan order; avg pooling pads with zeros and
    always divides by the full window size.
    """
    if kind not in ("max", "avg"):
        raise LayerError(f"unknown pooling kind {kind!r}")
    x = as_tensor(x)
    if x.ndim != 4:
        raise LayerError(f"pool2d expects NCHW input, got shape {x.shape}")
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise LayerError(
            f"pool window {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    if ph >= kh or pw >= kw:
        raise LayerError("pool padding must be smaller than the window")
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1

    fill = -np.inf if kind == "max" else 0.0
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::sh, ::sw].reshape(n, c, oh, ow, kh * kw)

    if kind == "max":
        arg = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

        def back(g):
            gxp = np.zeros_like(xp)
            ki, kj = np.divmod(arg, kw)
            oi = np.arange(oh)[:, None] * sh
            oj = np.arange(ow)[None, :] * sw
            rows = (oi[None, None] + ki).reshape(-1)
            colx = (oj[None, None] + kj).reshape(-1)
            ns = np.repeat(np.arange(n), c * oh * ow)
            cs = np.tile(np.repeat(np.arange(c), oh * ow), n)
            np.add.at(gxp, (ns, cs, rows, colx), g.reshape(-1))
            return (gxp[:, :, ph:ph + h, pw:pw + w],)

        return apply_op("maxpool2d", out, (x,), back)

    out = win.mean(axis=-1)
    scale = 1.0 / (kh * kw)

    def back_avg(g):
        gxp = np.zeros_like(xp)
        gs = g * scale
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gs
        return (gxp[:, :, ph:ph + h, pw:pw + w],)

    return apply_op("avgpool2d", out, (x,), back_avg)


def global_pool(kind: str, x: Tensor) -> Tensor:
    """Pool every spatial position into (N, C, 1, 1)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise LayerError(f"global_pool expects NCHW input, got shape {x.shape}")
    h, w = x.shape[2], x.shape[3]
    return pool2d(kind, x, window=(h, w), stride=(h, w))


# ---------------------------------------------------------------------------
# linear


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N, in) times weight (out, in) transposed, plus bias."""
    out = as_tensor(x) @ weight.T
    return out + bias if bias is not None else out


class Linear:
    def __init__(self, in_features, out_features, bias=True,
                 rng: SplitMix64 | None = None):
        rng = rng or SplitMix64(0)
        self.weight = _uniform_init(rng, (out_features, in_features), in_features)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


# ---------------------------------------------------------------------------
# batchnorm


class BatchNorm2d:
    """Per-channel batch normalization with running statistics.

    Epsilon is added in the variance domain and defaults far below typical
    activation scales so normalized activations hit mean 0 / variance 1
    within 1e-6 on ordinary inputs; float64 keeps the tiny epsilon stable.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-12):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def forward(self, x: Tensor, mode: str = "train") -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise LayerError(
                f"batchnorm expects (N, {self.channels}, H, W), got {x.shape}")
        c = self.channels
        gamma = self.gamma.reshape(1, c, 1, 1)
        beta = self.beta.reshape(1, c, 1, 1)
        if mode == "train":
            if x.shape[0] < 2:
                raise LayerError("batchnorm training mode requires batch size >= 2")
            mu = x.mean(axes=(0, 2, 3), keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axes=(0, 2, 3), keepdims=True)
            inv = (var + self.eps) ** -0.5
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(c)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(c)
            return centered * inv * gamma + beta
        if mode == "eval":
            inv = Tensor((self.running_var + self.eps) ** -0.5)
            mean = Tensor(self.running_mean)
            xc = x - mean.reshape(1, c, 1, 1)
            return xc * inv.reshape(1, c, 1, 1) * gamma + beta
        raise LayerError(f"unknown batchnorm mode {mode!r}")

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


# ---------------------------------------------------------------------------
# loss


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax logits."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise LayerError(f"expected (N, K) logits, got shape {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise LayerError(f"{labels.shape[0]} labels for {n} logit rows")
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        raise LayerError(f"label {labels[bad][0]} out of range [0, {k})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))
    loss = np.array(nll.mean())

    def back(g):
        onehot = np.zeros((n, k))
        onehot[np.arange(n), labels] = 1.0
        gs = float(np.asarray(g).reshape(-1)[0])
        return (gs * (probs - onehot) / n,)

    return apply_op("softmax_xent", loss, (logits,), back)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# optimizer


class SgdOptimizer:
    """SGD with classical momentum: v <- m*v + grad; p <- p - lr*v."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        params = list(params)
        if params and isinstance(params[0], tuple):
            params = [p for _, p in params]
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise LayerError(f"parameter {i} has no gradient; run backward first")
            self.velocity[i] = self.momentum * self.velocity[i] + p.grad
            p.data = p.data - self.lr * self.velocity[i]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

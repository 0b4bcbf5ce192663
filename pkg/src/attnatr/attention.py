"""Channel and spatial attention blocks: SE, ECA, and CBAM.

Each block maps an (N, C, H, W) feature map to a refined map of the same
shape by multiplying sigmoid gates onto channels and/or pixels.  Gates are
strictly inside (0, 1), so every block is a contraction in max-abs norm.
Forward is a pure function of (weights, input); concurrent forward calls on
one block are safe.
"""

from __future__ import annotations

import math

from .layers import Conv1d, Conv2d, LayerError, Linear, conv1d_same, conv2d, global_pool
from .rng import SplitMix64
from .tensor import Tensor, concat, relu, sigmoid


def _check_channels(block, u):
    if u.ndim != 4 or u.shape[1] != block.channels:
        raise LayerError(
            f"{type(block).__name__} built for {block.channels} channels, "
            f"got input shape {u.shape}")


def _hidden_width(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


class SeBlock:
    """Squeeze-and-excitation: global average pool, bottleneck MLP, channel gates.

    The two fully connected stages carry no biases; the bottleneck width is
    max(1, C // r).
    """

    def __init__(self, channels: int, reduction: int = 16,
                 rng: SplitMix64 | None = None):
        rng = rng or SplitMix64(0)
        hidden = _hidden_width(channels, reduction)
        self.channels = channels
        self.reduction = reduction
        self.fc1 = Linear(channels, hidden, bias=False, rng=rng.split("fc1"))
        self.fc2 = Linear(hidden, channels, bias=False, rng=rng.split("fc2"))

    def forward(self, u: Tensor) -> Tensor:
        _check_channels(self, u)
        n, c = u.shape[0], u.shape[1]
        z = global_pool("avg", u).reshape(n, c)
        s = sigmoid(self.fc2.forward(relu(self.fc1.forward(z))))
        return u * s.reshape(n, c, 1, 1)

    def params(self):
        return [("0.weight", self.fc1.weight), ("1.weight", self.fc2.weight)]


def eca_kernel_size(channels: int, gamma: int) -> int:
    """Adaptive 1D kernel size: ceil(C / gamma), bumped to the next odd value.

    The ceiling rule can land on an even width; same-length padding needs an
    odd kernel, so even results are incremented by one.
    """
    if channels < 1 or gamma < 1:
        raise LayerError(f"need channels >= 1 and gamma >= 1, got {channels}, {gamma}")
    k = math.ceil(channels / gamma)
    if k % 2 == 0:
        k += 1
    return max(1, k)


class EcaBlock:
    """Efficient channel attention: pooled descriptor, 1D conv, channel gates."""

    def __init__(self, channels: int, gamma: int = 16,
                 rng: SplitMix64 | None = None):
        self.channels = channels
        self.gamma = gamma
        self.kernel_size = eca_kernel_size(channels, gamma)
        self.conv = Conv1d(self.kernel_size, rng=(rng or SplitMix64(0)).split("conv"))

    def forward(self, u: Tensor) -> Tensor:
        _check_channels(self, u)
        n, c = u.shape[0], u.shape[1]
        z = global_pool("avg", u).reshape(n, c)
        s = sigmoid(conv1d_same(z, self.conv.weight))
        return u * s.reshape(n, c, 1, 1)

    def params(self):
        return [("0.weight", self.conv.weight)]


class CbamBlock:
    """Convolutional block attention: a channel pass then a spatial pass.

    The channel pass feeds average- and max-pooled descriptors through one
    shared bias-free MLP and gates channels with the sigmoid of their sum.
    The spatial pass stacks the per-pixel channel mean and max into a
    two-plane map, convolves it down to one plane, and gates pixels.
    """

    def __init__(self, channels: int, reduction: int = 16, spatial_kernel: int = 7,
                 rng: SplitMix64 | None = None):
        if spatial_kernel % 2 == 0:
            raise LayerError(f"spatial kernel must be odd, got {spatial_kernel}")
        rng = rng or SplitMix64(0)
        hidden = _hidden_width(channels, reduction)
        self.channels = channels
        self.reduction = reduction
        self.spatial_kernel = spatial_kernel
        self.fc1 = Linear(channels, hidden, bias=False, rng=rng.split("fc1"))
        self.fc2 = Linear(hidden, channels, bias=False, rng=rng.split("fc2"))
        self.spatial = Conv2d(2, 1, spatial_kernel, stride=1,
                              padding=(spatial_kernel - 1) // 2, bias=False,
                              rng=rng.split("spatial"))

    def _mlp(self, d: Tensor) -> Tensor:
        return self.fc2.forward(relu(self.fc1.forward(d)))

    def channel_attention(self, f: Tensor):
        """Return (gates (N, C, 1, 1), gated map)."""
        _check_channels(self, f)
        n, c = f.shape[0], f.shape[1]
        avg_d = global_pool("avg", f).reshape(n, c)
        max_d = global_pool("max", f).reshape(n, c)
        m_c = sigmoid(self._mlp(avg_d) + self._mlp(max_d)).reshape(n, c, 1, 1)
        return m_c, m_c * f

    def spatial_attention(self, f_c: Tensor):
        """Return (gates (N, 1, H, W), gated map)."""
        stats = concat([f_c.mean(axes=1, keepdims=True),
                        f_c.max(axes=1, keepdims=True)], axis=1)
        m_s = sigmoid(conv2d(stats, self.spatial.weight, None,
                             stride=1, padding=self.spatial.padding))
        return m_s, m_s * f_c

    def forward(self, f: Tensor) -> Tensor:
        _, f_c = self.channel_attention(f)
        _, f_s = self.spatial_attention(f_c)
        return f_s

    def params(self):
        return [("0.weight", self.fc1.weight), ("1.weight", self.fc2.weight),
                ("2.weight", self.spatial.weight)]


ATTENTION_KINDS = ("none", "se", "eca", "cbam")


def make_attention(kind: str, channels: int, reduction: int = 16,
                   eca_gamma: int = 16, spatial_kernel: int = 7,
                   rng: SplitMix64 | None = None):
    """Instantiate an attention block by kind; None for "none"."""
    if kind == "none":
        return None
    if kind == "se":
        return SeBlock(channels, reduction, rng=rng)
    if kind == "eca":
        return EcaBlock(channels, eca_gamma, rng=rng)
    if kind == "cbam":
        return CbamBlock(channels, reduction, spatial_kernel, rng=rng)
    raise LayerError(f"unknown attention kind {kind!r}, expected one of {ATTENTION_KINDS}")

"""ResNet-18-style classifier with pluggable attention blocks.

Two insertion modes are supported, selected per model:

  in_block      - the conventional placement: the attention block refines the
                  residual branch of every basic block before the skip
                  addition, out = relu(skip(x) + att(branch(x))).
  residual_wrap - the literal residual form y = out + att(out) applied to
                  each basic block's output.

The stem is a 7x7 stride-2 convolution from the (single) input channel
followed by a 3x3 stride-2 max pool, then four stages of two basic blocks
each, global average pooling, and a linear head.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import ATTENTION_KINDS, make_attention
from .layers import BatchNorm2d, Conv2d, LayerError, Linear, global_pool, pool2d
from .rng import SplitMix64
from .tensor import Tensor, relu

INSERTION_MODES = ("in_block", "residual_wrap")


class ConfigError(ValueError):
    """Raised when a model configuration is invalid; names offending fields."""


@dataclass
class ModelConfig:
    in_channels: int = 1
    input_size: int = 128
    num_classes: int = 10
    stage_widths: tuple = (64, 128, 256, 512)
    blocks_per_stage: int = 2
    attention: str = "none"
    insertion: str = "in_block"
    reduction: int = 16
    eca_gamma: int = 16
    spatial_kernel: int = 7

    def validate(self):
        bad = []
        if self.in_channels < 1:
            bad.append(f"in_channels={self.in_channels} (need >= 1)")
        if self.input_size < 32:
            bad.append(f"input_size={self.input_size} (need >= 32)")
        if self.num_classes < 2:
            bad.append(f"num_classes={self.num_classes} (need >= 2)")
        if not 1 <= len(self.stage_widths) <= 4 or any(w < 1 for w in self.stage_widths):
            bad.append(f"stage_widths={self.stage_widths} (need 1-4 positive widths)")
        if self.blocks_per_stage < 1:
            bad.append(f"blocks_per_stage={self.blocks_per_stage} (need >= 1)")
        if self.attention not in ATTENTION_KINDS:
            bad.append(f"attention={self.attention!r} (one of {ATTENTION_KINDS})")
        if self.insertion not in INSERTION_MODES:
            bad.append(f"insertion={self.insertion!r} (one of {INSERTION_MODES})")
        if self.reduction < 1:
            bad.append(f"reduction={self.reduction} (need >= 1)")
        if self.eca_gamma < 1:
            bad.append(f"eca_gamma={self.eca_gamma} (need >= 1)")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            bad.append(f"spatial_kernel={self.spatial_kernel} (need odd >= 1)")
        if bad:
            raise ConfigError("invalid model config: " + "; ".join(bad))
        return self


def desk_config(attention: str = "none", **overrides) -> ModelConfig:
    """Reduced configuration sized for desk-scale training and tests."""
    cfg = ModelConfig(input_size=32, num_classes=3, stage_widths=(4, 8, 16, 32),
                      attention=attention)
    return replace(cfg, **overrides) if overrides else cfg


class BasicBlock:
    """Two 3x3 conv+bn stages with a skip path and optional attention."""

    def __init__(self, in_ch: int, out_ch: int, stride: int, cfg: ModelConfig,
                 rng: SplitMix64):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=stride, padding=1,
                            bias=False, rng=rng.split("conv1"))
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, stride=1, padding=1,
                            bias=False, rng=rng.split("conv2"))
        self.bn2 = BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = (
                Conv2d(in_ch, out_ch, 1, stride=stride, bias=False,
                       rng=rng.split("down")),
                BatchNorm2d(out_ch),
            )
        self.att = make_attention(cfg.attention, out_ch, cfg.reduction,
                                  cfg.eca_gamma, cfg.spatial_kernel,
                                  rng=rng.split("att"))
        self.insertion = cfg.insertion

    def forward(self, x: Tensor, mode: str) -> Tensor:
        out = relu(self.bn1.forward(self.conv1.forward(x), mode))
        out = self.bn2.forward(self.conv2.forward(out), mode)
        if self.downsample is not None:
            conv, bn = self.downsample
            skip = bn.forward(conv.forward(x), mode)
        else:
            skip = x
        if self.att is not None and self.insertion == "in_block":
            out = self.att.forward(out)
        y = relu(out + skip)
        if self.att is not None and self.insertion == "residual_wrap":
            y = y + self.att.forward(y)
        return y

    def params(self):
        out = [("conv1.weight", self.conv1.weight)]
        out += [("bn1." + n, p) for n, p in self.bn1.params()]
        out.append(("conv2.weight", self.conv2.weight))
        out += [("bn2." + n, p) for n, p in self.bn2.params()]
        if self.downsample is not None:
            conv, bn = self.downsample
            out.append(("downsample.conv.weight", conv.weight))
            out += [("downsample.bn." + n, p) for n, p in bn.params()]
        if self.att is not None:
            out += [("att." + n, p) for n, p in self.att.params()]
        return out

    def batchnorms(self):
        bns = [("bn1", self.bn1), ("bn2", self.bn2)]
        if self.downsample is not None:
            bns.append(("downsample.bn", self.downsample[1]))
        return bns


class ResNet:
    """The assembled classifier; build via :func:`build_resnet18`."""

    def __init__(self, cfg: ModelConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        rng = SplitMix64(seed)
        w = cfg.stage_widths
        self.stem_conv = Conv2d(cfg.in_channels, w[0], 7, stride=2, padding=3,
                                bias=False, rng=rng.split("stem"))
        self.stem_bn = BatchNorm2d(w[0])
        self.stages: list[list[BasicBlock]] = []
        in_ch = w[0]
        for s, width in enumerate(w):
            blocks = []
            for b in range(cfg.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                blocks.append(BasicBlock(in_ch, width, stride, cfg,
                                         rng.split(f"stage{s + 1}", str(b))))
                in_ch = width
            self.stages.append(blocks)
        self.head = Linear(w[-1], cfg.num_classes, bias=True, rng=rng.split("head"))

    # -- forward --------------------------------------------------------

    def forward(self, x: Tensor, mode: str = "eval", capture: dict | None = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels \
                or x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise LayerError(
                f"model expects (N, {self.cfg.in_channels}, {self.cfg.input_size}, "
                f"{self.cfg.input_size}) input, got {x.shape}")
        h = relu(self.stem_bn.forward(self.stem_conv.forward(x), mode))
        h = pool2d("max", h, window=3, stride=2, padding=1)
        if capture is not None and "stem" in capture:
            capture["stem"] = h
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                h = block.forward(h, mode)
                name = f"stage{s + 1}.{b}"
                if capture is not None and name in capture:
                    capture[name] = h
        n = h.shape[0]
        pooled = global_pool("avg", h).reshape(n, h.shape[1])
        return self.head.forward(pooled)

    def feature_layers(self) -> list[str]:
        """Names usable as Grad-CAM capture points, shallow to deep."""
        names = ["stem"]
        for s, blocks in enumerate(self.stages):
            names += [f"stage{s + 1}.{b}" for b in range(len(blocks))]
        return names

    def forward_capture(self, x: Tensor, layer_name: str):
        """Eval-mode forward returning (logits, captured feature tensor)."""
        if layer_name not in self.feature_layers():
            raise LayerError(
                f"unknown layer {layer_name!r}; choose from {self.feature_layers()}")
        capture = {layer_name: None}
        logits = self.forward(x, mode="eval", capture=capture)
        return logits, capture[layer_name]

    # -- parameters -------------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("stem.conv.weight", self.stem_conv.weight)]
        out += [("stem.bn." + n, p) for n, p in self.stem_bn.params()]
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                prefix = f"stage{s + 1}.{b}."
                out += [(prefix + n, p) for n, p in block.params()]
        out += [("head." + n, p) for n, p in self.head.params()]
        return out

    def _named_batchnorms(self):
        out = [("stem.bn", self.stem_bn)]
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                prefix = f"stage{s + 1}.{b}."
                out += [(prefix + n, bn) for n, bn in block.batchnorms()]
        return out

    def named_state(self) -> list[tuple[str, np.ndarray]]:
        """Trainable parameters plus batchnorm running stats, checkpoint order."""
        out = [(name, p.data) for name, p in self.named_params()]
        for name, bn in self._named_batchnorms():
            out += [(f"{name}.{k}", v) for k, v in bn.buffers()]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]):
        expected = dict(self.named_state())
        missing = sorted(set(expected) - set(tensors))
        unknown = sorted(set(tensors) - set(expected))
        if missing or unknown:
            raise LayerError(
                f"checkpoint/model mismatch: missing {missing}, unknown {unknown}")
        params = dict(self.named_params())
        bns = dict(self._named_batchnorms())
        for name, arr in tensors.items():
            if arr.shape != expected[name].shape:
                raise LayerError(
                    f"shape mismatch for {name}: checkpoint {arr.shape}, "
                    f"model {expected[name].shape}")
            if name in params:
                params[name].data = np.ascontiguousarray(arr, dtype=np.float64)
            else:
                bn_name, _, buf = name.rpartition(".")
                setattr(bns[bn_name], buf, np.ascontiguousarray(arr, dtype=np.float64))

    def num_params(self) -> int:
        return sum(p.size for _, p in self.named_params())

    def zero_grad(self):
        for _, p in self.named_params():
            p.grad = None


def build_resnet18(cfg: ModelConfig, seed: int) -> ResNet:
    """Validate the config and build a deterministically initialized model."""
    return ResNet(cfg, seed)

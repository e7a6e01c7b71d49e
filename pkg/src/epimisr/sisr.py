"""Single-image feature extraction shared across views.

Every variant starts from a Catmull-Rom bicubic upsample of the LR image
and refines it with convolutions on the super-resolved grid:

  bicubic_conv1    one 1x1 conv, 3 -> C
  bicubic_conv3    one 3x3 conv, 3 -> C
  residual_stack   3x3 stem then `depth` blocks of conv-relu-conv with a
                   skip connection, all at width C

Convolutions see an edge-replicated frame (padded by the stack's
receptive radius, cropped after), so a constant image yields constant
features and border pixels are not polluted by zero padding.

The RGB head is a 1x1 projection C -> 3 added to the bicubic upsample as
a global residual; with zero-initialized head weights the SISR output is
the bicubic upsample exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, add, as_tensor, bicubic_upsample, conv2d, relu, replicate_pad

VARIANTS = ("bicubic_conv1", "bicubic_conv3", "residual_stack")


@dataclass(frozen=True)
class FeatureExtractorConfig:
    variant: str = "bicubic_conv3"
    channels: int = 16
    depth: int = 2
    s: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown extractor variant {self.variant!r}; expected one of {VARIANTS}")
        if self.channels < 3:
            raise ConfigError(f"feature channels must be >= 3, got {self.channels}")
        if self.depth < 1:
            raise ConfigError(f"residual depth must be >= 1, got {self.depth}")
        if self.s < 1:
            raise ConfigError(f"scale must be >= 1, got {self.s}")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "channels": self.channels, "depth": self.depth, "s": self.s}

    @staticmethod
    def from_dict(d: dict) -> "FeatureExtractorConfig":
        return FeatureExtractorConfig(**d)


def _receptive_radius(cfg: FeatureExtractorConfig) -> int:
    """Rings of context the conv stack reads past the output footprint."""
    if cfg.variant == "bicubic_conv1":
        return 0
    if cfg.variant == "bicubic_conv3":
        return 1
    return 1 + 2 * cfg.depth  # stem plus two 3x3 convs per block


def init_sisr_weights(cfg: FeatureExtractorConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded extractor + RGB-head parameters as named trainable tensors.

    Conv kernels draw from N(0, 1/fan_in); biases start at zero. The RGB
    head is zero-initialized so projection reduces to the bicubic base.
    """
    rng = np.random.default_rng(seed)
    c = cfg.channels

    def kinit(kh, kw, cin, cout):
        std = 1.0 / np.sqrt(kh * kw * cin)
        data = rng.normal(0.0, std, size=(kh, kw, cin, cout))
        return Tensor(data.astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    w: dict[str, Tensor] = {}
    if cfg.variant == "bicubic_conv1":
        w["sisr.stem.k"] = kinit(1, 1, 3, c)
    else:
        w["sisr.stem.k"] = kinit(3, 3, 3, c)
    w["sisr.stem.b"] = zeros(c)
    if cfg.variant == "residual_stack":
        for i in range(cfg.depth):
            w[f"sisr.block{i}.a.k"] = kinit(3, 3, c, c)
            w[f"sisr.block{i}.a.b"] = zeros(c)
            w[f"sisr.block{i}.b.k"] = kinit(3, 3, c, c)
            w[f"sisr.block{i}.b.b"] = zeros(c)
    w["sisr.rgb.k"] = zeros(1, 1, c, 3)
    w["sisr.rgb.b"] = zeros(3)
    return w


def _require(weights: dict[str, Tensor], name: str, shape: tuple) -> Tensor:
    t = weights.get(name)
    if t is None:
        raise ConfigError(f"missing weight {name!r} for this extractor config")
    if t.shape != shape:
        raise ConfigError(f"weight {name!r} has shape {t.shape}, config expects {shape}")
    return t


def extract_features(i_lr, cfg: FeatureExtractorConfig, weights: dict[str, Tensor]) -> Tensor:
    """LR image (H, W, 3) -> feature map (sH, sW, C) on the SR grid."""
    x = as_tensor(i_lr)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"extract_features expects (H,W,3), got {x.shape}")
    base = bicubic_upsample(x, cfg.s)
    return _features_from_base(base, cfg, weights)


def _features_from_base(base: Tensor, cfg: FeatureExtractorConfig, weights: dict[str, Tensor]) -> Tensor:
    c = cfg.channels
    r = _receptive_radius(cfg)
    khw = 1 if cfg.variant == "bicubic_conv1" else 3
    stem_k = _require(weights, "sisr.stem.k", (khw, khw, 3, c))
    stem_b = _require(weights, "sisr.stem.b", (c,))
    x = replicate_pad(base, r) if r else base
    x = add(conv2d(x, stem_k), stem_b)
    if cfg.variant == "residual_stack":
        for i in range(cfg.depth):
            ka = _require(weights, f"sisr.block{i}.a.k", (3, 3, c, c))
            ba = _require(weights, f"sisr.block{i}.a.b", (c,))
            kb = _require(weights, f"sisr.block{i}.b.k", (3, 3, c, c))
            bb = _require(weights, f"sisr.block{i}.b.b", (c,))
            y = relu(add(conv2d(x, ka), ba))
            x = add(x, add(conv2d(y, kb), bb))
    if r:
        x = _center_crop(x, r)
    return x


def _center_crop(t: Tensor, r: int) -> Tensor:
    h, w, _ = t.shape
    data = np.ascontiguousarray(t.data[r:h - r, r:w - r])

    def bwd(g):
        if t.requires_grad:
            gt = np.zeros_like(t.data)
            gt[r:h - r, r:w - r] = g
            t.accumulate_grad(gt)

    return Tensor._from_op(data, (t,), bwd)


def project_to_rgb(f0: Tensor, weights: dict[str, Tensor], base: Tensor) -> Tensor:
    """1x1 projection of features to RGB added to the bicubic base image.

    No clamping here; exports clip to [0,1] at write time so the loss
    path stays linear.
    """
    f0 = as_tensor(f0)
    base = as_tensor(base)
    if f0.ndim != 3:
        raise ShapeError(f"project_to_rgb expects (sH,sW,C) features, got {f0.shape}")
    c = f0.shape[2]
    k = _require(weights, "sisr.rgb.k", (1, 1, c, 3))
    b = _require(weights, "sisr.rgb.b", (3,))
    if base.shape != (f0.shape[0], f0.shape[1], 3):
        raise ShapeError(f"residual base shape {base.shape} does not match features {f0.shape}")
    return add(add(conv2d(f0, k), b), base)


def sisr_forward(i_lr, cfg: FeatureExtractorConfig, weights: dict[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """Convenience pass: returns (I_SISR, features, bicubic base)."""
    x = as_tensor(i_lr)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"sisr_forward expects (H,W,3), got {x.shape}")
    base = bicubic_upsample(x, cfg.s)
    feats = _features_from_base(base, cfg, weights)
    return project_to_rgb(feats, weights, base), feats, base

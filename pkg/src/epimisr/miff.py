"""Multi-image feature fusion.

Two cascaded post-LN transformers turn the per-view plane-sweep samples
into a residual RGB correction. Per (pixel, ray point), a view
transformer self-attends over the V view tokens (invalid samples masked)
and a single-query decoder pulls them together with the projected target
feature. The fused per-point features then enter a ray transformer that
self-attends over the P depth points, whose decoder cross-attention
weights double as a depth probe. A zero-initialized linear head maps the
pooled feature to RGB, so a fresh model leaves the SISR image untouched.

Views carry no positional encoding (fusion is order-equivariant); ray
tokens get one extra scalar, the normalized inverse depth of their
ladder point, appended before the input projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cap import EpipolarTensor
from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    layer_norm,
    matmul,
    mul,
    multi_head_attention,
    relu,
    reshape,
    transpose,
)


@dataclass(frozen=True)
class MiffConfig:
    d_model: int = 32
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_width: int = 64

    def __post_init__(self):
        if self.d_model < 1 or self.heads < 1:
            raise ConfigError(f"d_model and heads must be positive, got {self.d_model}, {self.heads}")
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if self.ffn_width < 1:
            raise ConfigError(f"ffn_width must be positive, got {self.ffn_width}")

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "heads": self.heads,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "ffn_width": self.ffn_width,
        }

    @staticmethod
    def from_dict(d: dict) -> "MiffConfig":
        return MiffConfig(**d)


@dataclass
class AttentionRecord:
    """Last ray-decoder cross-attention, kept per pixel.

    ray_decoder_attn: (npix, heads, 1, P) raw weights
    averaged_attn:    (npix, P) head-averaged; rows sum to 1 over valid
                      points and to 0 where every point was masked
    grid:             (sH, sW) pixel layout, None for scattered batches
    """

    ray_decoder_attn: np.ndarray
    averaged_attn: np.ndarray
    grid: tuple[int, int] | None = None


# -- parameters ---------------------------------------------------------------------


def _layer_names(prefix: str) -> list[tuple[str, str]]:
    """(name, kind) pairs for one transformer layer under `prefix`."""
    out = []
    for nm in ("wq", "wk", "wv", "wo"):
        out.append((f"{prefix}.{nm}", "dd"))
    for nm in ("bq", "bk", "bv", "bo"):
        out.append((f"{prefix}.{nm}", "d0"))
    out += [
        (f"{prefix}.ln1.g", "ones"),
        (f"{prefix}.ln1.b", "d0"),
        (f"{prefix}.w1", "df"),
        (f"{prefix}.b1", "f0"),
        (f"{prefix}.w2", "fd"),
        (f"{prefix}.b2", "d0"),
        (f"{prefix}.ln2.g", "ones"),
        (f"{prefix}.ln2.b", "d0"),
    ]
    return out


def init_miff_weights(cfg: MiffConfig, channels: int, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded fusion parameters; the final RGB head starts at zero.

    The init is matching-friendly: query, key, value and output projections
    start at identity, FFN output projections start at zero (residual
    branches begin as identities), the ray input projection starts
    near-identity, and the same feature embedding feeds tokens and queries.
    Attention logits then equal raw feature correlation from the first
    step, so the stack begins as a photometric-consistency plane-sweep
    fuser. Random projections would bury that signal: even a tied random
    wq=wk pair adds rotation noise of the same order as the match term.
    """
    if channels < 1:
        raise ConfigError(f"feature channels must be positive, got {channels}")
    rng = np.random.default_rng(seed)
    d, f = cfg.d_model, cfg.ffn_width

    def lin(fan_in, fan_out):
        data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        return Tensor(data.astype(dtype), requires_grad=True)

    def const(shape, value=0.0):
        return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)

    def copy_of(t: Tensor) -> Tensor:
        return Tensor(t.data.copy(), requires_grad=True)

    embed = lin(channels, d)
    ray_in = np.vstack([np.eye(d), rng.normal(0.0, 1.0 / np.sqrt(d + 1), size=(1, d))])
    w: dict[str, Tensor] = {
        "miff.view_in.w": embed,
        "miff.view_in.b": const((d,)),
        "miff.vq.w": copy_of(embed),
        "miff.vq.b": const((d,)),
        "miff.ray_in.w": Tensor(ray_in.astype(dtype), requires_grad=True),
        "miff.ray_in.b": const((d,)),
        "miff.rq.w": copy_of(embed),
        "miff.rq.b": const((d,)),
    }
    stacks = [("venc", cfg.enc_layers), ("vdec", cfg.dec_layers), ("renc", cfg.enc_layers), ("rdec", cfg.dec_layers)]
    shapes = {"df": lambda: lin(d, f), "fd": lambda: const((f, d))}
    for stack, count in stacks:
        for i in range(count):
            prefix = f"miff.{stack}{i}"
            for name, kind in _layer_names(prefix):
                if name.endswith((".wq", ".wk", ".wv", ".wo")):
                    w[name] = Tensor(np.eye(d, dtype=dtype), requires_grad=True)
                elif kind in shapes:
                    w[name] = shapes[kind]()
                elif kind == "ones":
                    w[name] = const((d,), 1.0)
                elif kind == "f0":
                    w[name] = const((f,))
                else:
                    w[name] = const((d,))
    w["miff.head.w"] = const((d, 3))
    w["miff.head.b"] = const((3,))
    return w


def _get(w: dict[str, Tensor], name: str) -> Tensor:
    t = w.get(name)
    if t is None:
        raise ConfigError(f"missing weight {name!r}")
    return t


def _linear(x: Tensor, w: dict[str, Tensor], wn: str, bn: str) -> Tensor:
    return add(matmul(x, _get(w, wn)), _get(w, bn))


def _ffn(x: Tensor, w: dict[str, Tensor], p: str) -> Tensor:
    return _linear(relu(_linear(x, w, f"{p}.w1", f"{p}.b1")), w, f"{p}.w2", f"{p}.b2")


def _enc_layer(x: Tensor, keymask, heads: int, w: dict[str, Tensor], p: str) -> Tensor:
    q = _linear(x, w, f"{p}.wq", f"{p}.bq")
    k = _linear(x, w, f"{p}.wk", f"{p}.bk")
    v = _linear(x, w, f"{p}.wv", f"{p}.bv")
    a, _ = multi_head_attention(q, k, v, heads, mask=keymask)
    x = layer_norm(add(x, _linear(a, w, f"{p}.wo", f"{p}.bo")), _get(w, f"{p}.ln1.g"), _get(w, f"{p}.ln1.b"))
    x = layer_norm(add(x, _ffn(x, w, p)), _get(w, f"{p}.ln2.g"), _get(w, f"{p}.ln2.b"))
    return x


def _dec_layer(q: Tensor, kv: Tensor, keymask, heads: int, w: dict[str, Tensor], p: str):
    qq = _linear(q, w, f"{p}.wq", f"{p}.bq")
    kk = _linear(kv, w, f"{p}.wk", f"{p}.bk")
    vv = _linear(kv, w, f"{p}.wv", f"{p}.bv")
    a, attn = multi_head_attention(qq, kk, vv, heads, mask=keymask)
    q = layer_norm(add(q, _linear(a, w, f"{p}.wo", f"{p}.bo")), _get(w, f"{p}.ln1.g"), _get(w, f"{p}.ln1.b"))
    q = layer_norm(add(q, _ffn(q, w, p)), _get(w, f"{p}.ln2.g"), _get(w, f"{p}.ln2.b"))
    return q, attn


# -- transformers -------------------------------------------------------------------


def view_transformer(feats, valid: np.ndarray, f0_pix, cfg: MiffConfig, weights: dict[str, Tensor]) -> Tensor:
    """Fuse V view tokens into one feature per (ray point, pixel).

    feats: (V, P, N, C) tensor, valid: (V, P, N) bool, f0_pix: (N, C).
    Returns (P, N, d_model); exactly zero wherever no view is valid, and
    for V=0 outright.
    """
    feats = as_tensor(feats)
    f0_pix = as_tensor(f0_pix)
    if feats.ndim != 4 or f0_pix.ndim != 2:
        raise ShapeError(f"view_transformer expects (V,P,N,C) and (N,C), got {feats.shape}, {f0_pix.shape}")
    vcount, p, n, c = feats.shape
    if _get(weights, "miff.view_in.w").shape[0] != c:
        raise ShapeError(f"feature width {c} does not match view projection fan-in")
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (vcount, p, n):
        raise ShapeError(f"validity shape {valid.shape} does not match features {feats.shape}")
    d = cfg.d_model
    if vcount == 0 or not valid.any():
        return as_tensor(np.zeros((p, n, d), dtype=feats.dtype))

    x = transpose(feats, (1, 2, 0, 3))  # (P, N, V, C)
    x = _linear(x, weights, "miff.view_in.w", "miff.view_in.b")
    keymask = valid.transpose(1, 2, 0)[:, :, None, None, :]  # (P, N, 1, 1, V)
    for i in range(cfg.enc_layers):
        x = _enc_layer(x, keymask, cfg.heads, weights, f"miff.venc{i}")
    q = _linear(f0_pix, weights, "miff.vq.w", "miff.vq.b")  # (N, d)
    q = broadcast_to(reshape(q, (1, n, 1, d)), (p, n, 1, d))
    for i in range(cfg.dec_layers):
        q, _ = _dec_layer(q, x, keymask, cfg.heads, weights, f"miff.vdec{i}")
    fused = reshape(q, (p, n, d))
    gate = valid.any(axis=0)[..., None].astype(feats.dtype)  # (P, N, 1)
    return mul(fused, gate)


def normalized_inverse_depth(depths: np.ndarray) -> np.ndarray:
    """Ladder depths mapped to [0, 1] linearly in 1/d; a lone point maps to 0."""
    depths = np.asarray(depths, dtype=np.float64)
    if depths.ndim != 1 or depths.size < 1:
        raise ShapeError(f"depth ladder must be a nonempty vector, got shape {depths.shape}")
    if depths.size == 1:
        return np.zeros(1)
    inv = 1.0 / depths
    span = inv[0] - inv[-1]
    if span <= 0:
        raise ConfigError("depth ladder must be strictly increasing")
    return (inv[0] - inv) / span


def ray_transformer(fused, ray_valid: np.ndarray, depths: np.ndarray, f0_pix, cfg: MiffConfig, weights: dict[str, Tensor]):
    """Pool P per-point features into one vector per pixel.

    fused: (P, N, d_model), ray_valid: (P, N) bool (point usable iff any
    view was valid there), depths: (P,) ladder. Returns the pooled
    (N, d_model) tensor and the last decoder layer's AttentionRecord.
    """
    fused = as_tensor(fused)
    f0_pix = as_tensor(f0_pix)
    if fused.ndim != 3 or fused.shape[2] != cfg.d_model:
        raise ShapeError(f"ray_transformer expects (P,N,{cfg.d_model}), got {fused.shape}")
    p, n, d = fused.shape
    ray_valid = np.asarray(ray_valid, dtype=bool)
    if ray_valid.shape != (p, n):
        raise ShapeError(f"ray validity shape {ray_valid.shape} does not match ({p},{n})")
    u = normalized_inverse_depth(depths)
    if u.shape[0] != p:
        raise ShapeError(f"ladder has {u.shape[0]} depths for {p} ray points")

    x = transpose(fused, (1, 0, 2))  # (N, P, d)
    uu = np.broadcast_to(u.astype(fused.dtype)[None, :, None], (n, p, 1))
    x = concat([x, as_tensor(np.ascontiguousarray(uu))], axis=-1)
    x = _linear(x, weights, "miff.ray_in.w", "miff.ray_in.b")
    keymask = ray_valid.T[:, None, None, :]  # (N, 1, 1, P)
    for i in range(cfg.enc_layers):
        x = _enc_layer(x, keymask, cfg.heads, weights, f"miff.renc{i}")
    q = reshape(_linear(f0_pix, weights, "miff.rq.w", "miff.rq.b"), (n, 1, d))
    attn = None
    for i in range(cfg.dec_layers):
        q, attn = _dec_layer(q, x, keymask, cfg.heads, weights, f"miff.rdec{i}")
    pooled = reshape(q, (n, d))
    any_valid = ray_valid.any(axis=0)  # (N,)
    pooled = mul(pooled, any_valid[:, None].astype(fused.dtype))
    record = AttentionRecord(
        ray_decoder_attn=np.asarray(attn, dtype=np.float64),
        averaged_attn=np.asarray(attn, dtype=np.float64).mean(axis=1)[:, 0, :],
    )
    return pooled, record


def miff_forward_pixels(f0_pix, feats, valid: np.ndarray, depths: np.ndarray, cfg: MiffConfig, weights: dict[str, Tensor]):
    """Scattered-pixel fusion: f0_pix (N, C), feats (V, P, N, C), valid (V, P, N).

    Returns (delta (N, 3) tensor, AttentionRecord). V=0 short-circuits to
    an exact zero correction with an empty record.
    """
    f0_pix = as_tensor(f0_pix)
    feats = as_tensor(feats)
    if feats.ndim != 4:
        raise ShapeError(f"expected (V,P,N,C) features, got {feats.shape}")
    vcount, p, n, _ = feats.shape
    if f0_pix.ndim != 2 or f0_pix.shape[0] != n:
        raise ShapeError(f"target features {f0_pix.shape} do not match {n} pixels")
    if vcount == 0:
        heads = cfg.heads
        rec = AttentionRecord(
            ray_decoder_attn=np.zeros((n, heads, 1, 0)), averaged_attn=np.zeros((n, 0))
        )
        return as_tensor(np.zeros((n, 3), dtype=f0_pix.dtype)), rec
    fused = view_transformer(feats, valid, f0_pix, cfg, weights)
    ray_valid = np.asarray(valid, dtype=bool).any(axis=0)  # (P, N)
    pooled, record = ray_transformer(fused, ray_valid, depths, f0_pix, cfg, weights)
    delta = _linear(pooled, weights, "miff.head.w", "miff.head.b")
    # keep untouched pixels untouched even once the head bias trains away from zero
    delta = mul(delta, ray_valid.any(axis=0)[:, None].astype(f0_pix.dtype))
    return delta, record


def miff_forward(f0, epipolar: list[EpipolarTensor], cfg: MiffConfig, weights: dict[str, Tensor]):
    """Full-grid fusion: F_0 (sH, sW, C) + V epipolar tensors -> (ΔI, attention).

    ΔI is (sH, sW, 3); the record's grid field carries the pixel layout.
    """
    f0 = as_tensor(f0)
    if f0.ndim != 3:
        raise ShapeError(f"expected (sH,sW,C) target features, got {f0.shape}")
    sh, sw, c = f0.shape
    n = sh * sw
    if not epipolar:
        dtype = f0.dtype
        rec = AttentionRecord(
            ray_decoder_attn=np.zeros((n, cfg.heads, 1, 0)),
            averaged_attn=np.zeros((n, 0)),
            grid=(sh, sw),
        )
        return as_tensor(np.zeros((sh, sw, 3), dtype=dtype)), rec
    p = epipolar[0].features.shape[0]
    depths = epipolar[0].depths
    parts, masks = [], []
    for e in epipolar:
        if e.features.shape != (p, sh, sw, c):
            raise ShapeError(
                f"epipolar tensor shape {e.features.shape} inconsistent with ({p},{sh},{sw},{c})"
            )
        if not np.array_equal(e.depths, depths):
            raise ShapeError("extra views sampled on different depth ladders")
        parts.append(reshape(e.features, (1, p, n, c)))
        masks.append(e.mask.reshape(p, n))
    feats = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    valid = np.stack(masks, axis=0)
    f0_pix = reshape(f0, (n, c))
    delta, record = miff_forward_pixels(f0_pix, feats, valid, depths, cfg, weights)
    record.grid = (sh, sw)
    return reshape(delta, (sh, sw, 3)), record


def extract_depth_map(record: AttentionRecord, depths: np.ndarray) -> np.ndarray:
    """Argmax of head-averaged ray attention mapped onto the depth ladder.

    Ladder depths must be ascending; ties resolve to the nearer depth.
    Fully-masked pixels get sentinel depth 0. Returns (sH, sW) when the
    record carries a grid, else (npix,).
    """
    avg = np.asarray(record.averaged_attn, dtype=np.float64)
    if avg.ndim != 2:
        raise ShapeError(f"averaged attention must be (npix, P), got {avg.shape}")
    depths = np.asarray(depths, dtype=np.float64)
    npix = avg.shape[0]
    if avg.shape[1] == 0:
        out = np.zeros(npix)
    else:
        if depths.shape != (avg.shape[1],):
            raise ShapeError(f"ladder shape {depths.shape} does not match attention {avg.shape}")
        out = depths[np.argmax(avg, axis=1)]
        out[avg.sum(axis=1) <= 0.0] = 0.0
    if record.grid is not None:
        out = out.reshape(record.grid)
    return out

"""Neural-net ops over the autodiff core: normalization, attention
substrate, convolution, resampling and the training loss."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ConfigError, ShapeError
from .core import Tensor, as_tensor, reshape, _check_dtypes


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Masked softmax along one axis.

    Masked-out entries (mask False) get weight exactly 0; a fully masked
    slice yields all zeros instead of NaN. The mask is plain data, never
    differentiated.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        z = np.where(mask, z, x.dtype.type(-np.inf))
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, x.dtype.type(0.0))
    e = np.exp(z - m)
    s = e.sum(axis=axis, keepdims=True)
    y = e / np.where(s == 0, x.dtype.type(1.0), s)

    def bwd(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x.accumulate_grad(y * (g - inner))

    return Tensor._from_op(y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    _check_dtypes(x, gamma, beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine params must have shape ({n},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    y = gamma.data * xhat + beta.data

    def bwd(g):
        if gamma.requires_grad:
            axes = tuple(range(g.ndim - 1))
            gamma.accumulate_grad((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            axes = tuple(range(g.ndim - 1))
            beta.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            gh = g * gamma.data
            # standard layer-norm backward, fused form
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(term * inv)

    return Tensor._from_op(y, (x, gamma, beta), bwd)


def conv2d(x: Tensor, k: Tensor) -> Tensor:
    """Zero-padded same-size 2D convolution, x (H, W, Cin) with k (kh, kw, Cin, Cout)."""
    x, k = as_tensor(x), as_tensor(k)
    _check_dtypes(x, k)
    if x.ndim != 3 or k.ndim != 4:
        raise ShapeError(f"conv2d expects (H,W,Cin) and (kh,kw,Cin,Cout), got {x.shape}, {k.shape}")
    kh, kw, cin, _ = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if cin != x.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape[2]} vs kernel {cin}")
    y = kernels.conv2d_forward(x.data, k.data)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x.accumulate_grad(kernels.conv2d_backward_input(g, k.data))
        if k.requires_grad:
            k.accumulate_grad(kernels.conv2d_backward_kernel(g, x.data, kh, kw))

    return Tensor._from_op(y, (x, k), bwd)


def bicubic_sample_at(f: Tensor, coords: np.ndarray) -> Tensor:
    """Catmull-Rom sample of f (h, w, C) at n real (x, y) pixel positions.

    Linear in f (gradient = interpolation weights, scattered back onto the
    grid); the coordinates are fixed geometry and receive no gradient.
    Out-of-range positions clamp to the edge.
    """
    f = as_tensor(f)
    coords = np.asarray(coords, dtype=np.float64)
    if f.ndim != 3 or coords.ndim != 2 or coords.shape[1] != 2:
        raise ShapeError(f"bicubic_sample_at expects (h,w,C) and (n,2), got {f.shape}, {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise ShapeError("bicubic_sample_at coords must be finite")
    h, w, _ = f.shape
    xs, ys = coords[:, 0], coords[:, 1]
    y = kernels.bicubic_gather(f.data, xs, ys)

    def bwd(g):
        if f.requires_grad:
            f.accumulate_grad(kernels.bicubic_scatter(np.ascontiguousarray(g), xs, ys, h, w))

    return Tensor._from_op(y, (f,), bwd)


def upsample_grid_coords(h: int, w: int, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Half-pixel-centered source coordinates for an integer upscale by s."""
    ys = (np.arange(s * h, dtype=np.float64) + 0.5) / s - 0.5
    xs = (np.arange(s * w, dtype=np.float64) + 0.5) / s - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def bicubic_upsample(x, s: int) -> Tensor:
    """Catmull-Rom upscale of an (H, W, C) tensor by an integer factor."""
    x = as_tensor(x)
    if s < 1:
        raise ConfigError(f"upsample factor must be >= 1, got {s}")
    if s == 1:

        def bwd(g):
            if x.requires_grad:
                x.accumulate_grad(g)

        return Tensor._from_op(x.data.copy(), (x,), bwd)
    h, w, c = x.shape
    gx, gy = upsample_grid_coords(h, w, s)
    flat = bicubic_sample_at(x, np.stack([gx, gy], axis=1))
    return reshape(flat, (s * h, s * w, c))


def replicate_pad(x: Tensor, r: int) -> Tensor:
    """Edge-replicate an (H, W, C) tensor by r rows/cols on every side.

    Forward is a gather through clamped indices, so the backward pass
    scatter-adds border gradients onto the edge pixels.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"replicate_pad expects (H,W,C), got {x.shape}")
    if r < 0:
        raise ConfigError(f"pad radius must be >= 0, got {r}")
    if r == 0:

        def bwd0(g):
            if x.requires_grad:
                x.accumulate_grad(g)

        return Tensor._from_op(x.data.copy(), (x,), bwd0)
    h, w, _ = x.shape
    iy = np.clip(np.arange(-r, h + r), 0, h - 1)
    ix = np.clip(np.arange(-r, w + r), 0, w - 1)
    data = np.ascontiguousarray(x.data[iy][:, ix])

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            np.add.at(gx, (iy[:, None], ix[None, :]), g)
            x.accumulate_grad(gx)

    return Tensor._from_op(data, (x,), bwd)


def l1_loss(a: Tensor, b) -> Tensor:
    """Mean absolute difference; subgradient sign(a-b)/N with sign(0) = 0."""
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    _check_dtypes(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    val = np.abs(diff).mean(dtype=a.dtype)
    sgn = np.sign(diff) / a.dtype.type(a.size)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * sgn)
        if b.requires_grad:
            b.accumulate_grad(-g * sgn)

    return Tensor._from_op(np.asarray(val), (a, b), bwd)

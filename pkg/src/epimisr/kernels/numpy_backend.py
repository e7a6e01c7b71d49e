"""Pure-numpy implementations of the hot kernels.

Functionally identical to the numba backend; selected by setting
``EPIMISR_BACKEND=numpy``. Kept vectorized so the fallback stays usable
for real workloads, not just as a reference.
"""

import numpy as np

_SPLITMIX_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_HASH_PX = np.uint64(0x8DA6B343EC53F7A7)
_HASH_PY = np.uint64(0xD8163841FDE6A8F9)


def _catmull_rom_weights(t):
    """Weights for taps at offsets (-1, 0, 1, 2) around the base index.

    Catmull-Rom spline (bicubic kernel with a = -0.5); t in [0, 1).
    Returns an array of shape t.shape + (4,).
    """
    t2 = t * t
    t3 = t2 * t
    w = np.empty(t.shape + (4,), dtype=t.dtype)
    w[..., 0] = 0.5 * (-t3 + 2.0 * t2 - t)
    w[..., 1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w[..., 2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w[..., 3] = 0.5 * (t3 - t2)
    return w


def _tap_indices_weights(coords, extent):
    base = np.floor(coords)
    t = coords - base
    w = _catmull_rom_weights(t)
    idx = base.astype(np.int64)[:, None] + np.arange(-1, 3, dtype=np.int64)
    np.clip(idx, 0, extent - 1, out=idx)
    return idx, w


def bicubic_gather(f, xs, ys):
    """Sample f (h, w, C) at real pixel positions; edge-clamped Catmull-Rom.

    Returns (n, C) with the dtype of f.
    """
    h, w, _ = f.shape
    dtype = f.dtype
    xi, wx = _tap_indices_weights(xs.astype(dtype, copy=False), w)
    yi, wy = _tap_indices_weights(ys.astype(dtype, copy=False), h)
    out = None
    for a in range(4):
        row = None
        for b in range(4):
            contrib = f[yi[:, a], xi[:, b], :] * wx[:, b : b + 1]
            row = contrib if row is None else row + contrib
        row = row * wy[:, a : a + 1]
        out = row if out is None else out + row
    return out


def bicubic_scatter(g, xs, ys, h, w):
    """Adjoint of bicubic_gather: scatter-add (n, C) grads onto an (h, w, C) grid."""
    dtype = g.dtype
    xi, wx = _tap_indices_weights(xs.astype(dtype, copy=False), w)
    yi, wy = _tap_indices_weights(ys.astype(dtype, copy=False), h)
    grad = np.zeros((h, w, g.shape[1]), dtype=dtype)
    for a in range(4):
        for b in range(4):
            np.add.at(grad, (yi[:, a], xi[:, b]), g * (wy[:, a] * wx[:, b])[:, None])
    return grad


def _pad_same(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((ph, ph), (pw, pw), (0, 0)))


def conv2d_forward(x, k):
    """Zero-padded same-size convolution: x (H, W, Cin) * k (kh, kw, Cin, Cout)."""
    kh, kw = k.shape[0], k.shape[1]
    xp = _pad_same(x, kh, kw)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    # windows: (H, W, Cin, kh, kw); contract (Cin, kh, kw) against k (kh, kw, Cin, Cout)
    return np.tensordot(windows, k, axes=([3, 4, 2], [0, 1, 2]))


def conv2d_backward_input(g, k):
    """Gradient w.r.t. x: full correlation of g with the flipped kernel."""
    kf = k[::-1, ::-1].transpose(0, 1, 3, 2)
    return conv2d_forward(g, np.ascontiguousarray(kf))


def conv2d_backward_kernel(g, x, kh, kw):
    """Gradient w.r.t. k given upstream g (H, W, Cout) and input x (H, W, Cin)."""
    H, W, cin = x.shape
    cout = g.shape[2]
    xp = _pad_same(x, kh, kw)
    dk = np.empty((kh, kw, cin, cout), dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            dk[a, b] = np.tensordot(xp[a : a + H, b : b + W, :], g, axes=([0, 1], [0, 1]))
    return dk


def _splitmix64(z):
    z = (z + _SPLITMIX_GAMMA).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


_U64 = (1 << 64) - 1


def _splitmix64_int(z: int) -> int:
    """Python-int variant for scalar seeds (numpy warns on scalar wraparound)."""
    z = (z + 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def _lattice_value(xi, yi, seed):
    h = xi.astype(np.uint64) * _HASH_PX ^ yi.astype(np.uint64) * _HASH_PY ^ seed
    return _splitmix64(h).astype(np.float64) * (1.0 / 2.0**64)


def value_noise(xs, ys, seed, octaves, lacunarity, gain):
    """Seeded multi-octave value noise in [0, 1] at real 2D positions."""
    seed = np.uint64(seed)
    total = np.zeros(xs.shape, dtype=np.float64)
    amp = 1.0
    norm = 0.0
    freq = 1.0
    for o in range(octaves):
        px = xs * freq
        py = ys * freq
        x0 = np.floor(px)
        y0 = np.floor(py)
        tx = px - x0
        ty = py - y0
        x0i = x0.astype(np.int64)
        y0i = y0.astype(np.int64)
        oseed = np.uint64(_splitmix64_int(o ^ int(seed)))
        v00 = _lattice_value(x0i, y0i, oseed)
        v10 = _lattice_value(x0i + 1, y0i, oseed)
        v01 = _lattice_value(x0i, y0i + 1, oseed)
        v11 = _lattice_value(x0i + 1, y0i + 1, oseed)
        fx = tx * tx * tx * (tx * (tx * 6.0 - 15.0) + 10.0)
        fy = ty * ty * ty * (ty * (ty * 6.0 - 15.0) + 10.0)
        top = v00 + fx * (v10 - v00)
        bot = v01 + fx * (v11 - v01)
        total += amp * (top + fy * (bot - top))
        norm += amp
        amp *= gain
        freq *= lacunarity
    return total / norm

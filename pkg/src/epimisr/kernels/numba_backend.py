"""Numba-jitted hot kernels (default backend).

Same contracts as numpy_backend. Forward kernels parallelize over output
elements only (disjoint writes), so results are deterministic regardless
of thread schedule; the scatter adjoint stays serial for the same reason.
No fastmath: reassociation would break the bit-reproducibility contract.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _cr_weights(t):
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t3 + 2.0 * t2 - t)
    w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w3 = 0.5 * (t3 - t2)
    return w0, w1, w2, w3


@njit(cache=True, inline="always")
def _clamp(i, n):
    if i < 0:
        return 0
    if i > n - 1:
        return n - 1
    return i


@njit(cache=True, parallel=True)
def _gather(f, xs, ys, out):
    h, w, c = f.shape
    for n in prange(xs.shape[0]):
        bx = np.floor(xs[n])
        by = np.floor(ys[n])
        wx = _cr_weights(xs[n] - bx)
        wy = _cr_weights(ys[n] - by)
        xi = int(bx)
        yi = int(by)
        for ch in range(c):
            acc = 0.0 * f[0, 0, 0]
            for a in range(4):
                ya = _clamp(yi + a - 1, h)
                row = 0.0 * f[0, 0, 0]
                for b in range(4):
                    xb = _clamp(xi + b - 1, w)
                    row += f[ya, xb, ch] * wx[b]
                acc += row * wy[a]
            out[n, ch] = acc


@njit(cache=True)
def _scatter(g, xs, ys, grad):
    h, w, c = grad.shape
    for n in range(xs.shape[0]):
        bx = np.floor(xs[n])
        by = np.floor(ys[n])
        wx = _cr_weights(xs[n] - bx)
        wy = _cr_weights(ys[n] - by)
        xi = int(bx)
        yi = int(by)
        for a in range(4):
            ya = _clamp(yi + a - 1, h)
            for b in range(4):
                xb = _clamp(xi + b - 1, w)
                wab = wy[a] * wx[b]
                for ch in range(c):
                    grad[ya, xb, ch] += g[n, ch] * wab


def bicubic_gather(f, xs, ys):
    xs = np.ascontiguousarray(xs, dtype=f.dtype)
    ys = np.ascontiguousarray(ys, dtype=f.dtype)
    out = np.empty((xs.shape[0], f.shape[2]), dtype=f.dtype)
    _gather(np.ascontiguousarray(f), xs, ys, out)
    return out


def bicubic_scatter(g, xs, ys, h, w):
    xs = np.ascontiguousarray(xs, dtype=g.dtype)
    ys = np.ascontiguousarray(ys, dtype=g.dtype)
    grad = np.zeros((h, w, g.shape[1]), dtype=g.dtype)
    _scatter(np.ascontiguousarray(g), xs, ys, grad)
    return grad


def _pad_same(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    return np.pad(x, ((ph, ph), (pw, pw), (0, 0)))


@njit(cache=True, parallel=True)
def _conv_fwd(xp, k, out):
    H, W, cout = out.shape
    kh, kw, cin, _ = k.shape
    for i in prange(H):
        for j in range(W):
            for a in range(kh):
                for b in range(kw):
                    for ci in range(cin):
                        v = xp[i + a, j + b, ci]
                        for co in range(cout):
                            out[i, j, co] += v * k[a, b, ci, co]


@njit(cache=True)
def _conv_bwd_kernel(xp, g, dk):
    H, W, cout = g.shape
    kh, kw, cin, _ = dk.shape
    for a in range(kh):
        for b in range(kw):
            for i in range(H):
                for j in range(W):
                    for ci in range(cin):
                        v = xp[i + a, j + b, ci]
                        for co in range(cout):
                            dk[a, b, ci, co] += v * g[i, j, co]


def conv2d_forward(x, k):
    kh, kw = k.shape[0], k.shape[1]
    xp = _pad_same(x, kh, kw)
    out = np.zeros((x.shape[0], x.shape[1], k.shape[3]), dtype=x.dtype)
    _conv_fwd(xp, np.ascontiguousarray(k), out)
    return out


def conv2d_backward_input(g, k):
    kf = np.ascontiguousarray(k[::-1, ::-1].transpose(0, 1, 3, 2))
    return conv2d_forward(g, kf)


def conv2d_backward_kernel(g, x, kh, kw):
    xp = _pad_same(x, kh, kw)
    dk = np.zeros((kh, kw, x.shape[2], g.shape[2]), dtype=g.dtype)
    _conv_bwd_kernel(xp, np.ascontiguousarray(g), dk)
    return dk


@njit(cache=True, inline="always")
def _splitmix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _lattice_value(xi, yi, seed):
    h = (
        np.uint64(xi) * np.uint64(0x8DA6B343EC53F7A7)
        ^ np.uint64(yi) * np.uint64(0xD8163841FDE6A8F9)
        ^ seed
    )
    return _splitmix64(h) * (1.0 / 18446744073709551616.0)


@njit(cache=True, parallel=True)
def _value_noise(xs, ys, seed, octaves, lacunarity, gain, out):
    for n in prange(xs.shape[0]):
        total = 0.0
        amp = 1.0
        norm = 0.0
        freq = 1.0
        for o in range(octaves):
            px = xs[n] * freq
            py = ys[n] * freq
            x0 = np.floor(px)
            y0 = np.floor(py)
            tx = px - x0
            ty = py - y0
            x0i = np.int64(x0)
            y0i = np.int64(y0)
            oseed = _splitmix64(np.uint64(o) ^ seed)
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
        out[n] = total / norm


def value_noise(xs, ys, seed, octaves, lacunarity, gain):
    shape = np.shape(xs)
    xs = np.ascontiguousarray(xs, dtype=np.float64).ravel()
    ys = np.ascontiguousarray(ys, dtype=np.float64).ravel()
    out = np.empty(xs.shape[0], dtype=np.float64)
    _value_noise(xs, ys, np.uint64(seed), octaves, lacunarity, gain, out)
    return out.reshape(shape)

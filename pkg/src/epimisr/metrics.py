"""Image quality metrics and the degradation operator.

PSNR follows 10 log10(1 / MSE) on [0, 1] images with optional border crop;
SSIM uses the standard 11x11 Gaussian window (sigma 1.5) on Rec.601 luma.
Degradation is either an antialiased bicubic downscale or an explicit
blur-then-decimate, matching how LR data gets produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

PSNR_SENTINEL = 999.0


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "bicubic"
    kernel: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("bicubic", "blur_decimate"):
            raise ConfigError(f"unknown degradation kind {self.kind!r}")
        if self.kind == "blur_decimate" and self.kernel is None:
            raise ConfigError("blur_decimate requires a kernel")
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=np.float64)
            if k.ndim != 2:
                raise ConfigError("blur kernel must be 2D")
            object.__setattr__(self, "kernel", k)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kernel is not None:
            d["kernel"] = self.kernel.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        return cls(kind=d["kind"], kernel=d.get("kernel"))


def _cr_kernel(x: float) -> float:
    # Catmull-Rom (a = -0.5) piecewise cubic
    ax = abs(x)
    if ax <= 1.0:
        return 1.5 * ax**3 - 2.5 * ax**2 + 1.0
    if ax < 2.0:
        return -0.5 * ax**3 + 2.5 * ax**2 - 4.0 * ax + 2.0
    return 0.0


def _downscale_matrix(n_hr: int, s: int) -> np.ndarray:
    """(n_lr, n_hr) row-stochastic matrix for antialiased bicubic reduction.

    The kernel is stretched by s (support 4s) per the usual antialias rule;
    out-of-range taps clamp to the edge; rows re-normalize exactly.
    """
    n_lr = n_hr // s
    W = np.zeros((n_lr, n_hr))
    for j in range(n_lr):
        x = (j + 0.5) * s - 0.5
        lo = int(np.floor(x - 2 * s + 1))
        hi = int(np.floor(x + 2 * s))
        for i in range(lo, hi + 1):
            w = _cr_kernel((x - i) / s)
            W[j, min(max(i, 0), n_hr - 1)] += w
    W /= W.sum(axis=1, keepdims=True)
    return W


def _bicubic_downscale(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    Wr = _downscale_matrix(h, s)
    Wc = _downscale_matrix(w, s)
    if img.ndim == 2:
        return Wr @ img @ Wc.T
    return np.einsum("ih,hwc,jw->ijc", Wr, img, Wc, optimize=True)


def _blur_edge_clamped(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    kh, kw = kernel.shape
    a0, b0 = (kh - 1) // 2, (kw - 1) // 2
    pad = [(a0, kh - 1 - a0), (b0, kw - 1 - b0)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, pad, mode="edge")
    win = sliding_window_view(padded, (kh, kw), axis=(0, 1))
    return np.einsum("...ab,ab->...", win, kernel)


def degrade(img: np.ndarray, s: int, spec: DegradationSpec) -> np.ndarray:
    """HR -> LR by the manifest's operator."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] % s or img.shape[1] % s:
        raise ConfigError(f"extents {img.shape[:2]} not divisible by s={s}")
    if spec.kind == "bicubic":
        if s == 1:
            return img.copy()
        return _bicubic_downscale(img, s)
    blurred = _blur_edge_clamped(img, spec.kernel)
    return blurred[::s, ::s]


def psnr(a: np.ndarray, b: np.ndarray, border_crop: int = 0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    if border_crop:
        if 2 * border_crop >= min(a.shape[0], a.shape[1]):
            raise ConfigError(f"border crop {border_crop} too large for {a.shape[:2]}")
        a = a[border_crop:-border_crop, border_crop:-border_crop]
        b = b[border_crop:-border_crop, border_crop:-border_crop]
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(float(10.0 * np.log10(1.0 / mse)), PSNR_SENTINEL)


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = sliding_window_view(img, win.shape)
    return np.einsum("ijab,ab->ij", view, win)


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over the valid (un-padded) window positions."""
    x = _luma(np.asarray(a, dtype=np.float64))
    y = _luma(np.asarray(b, dtype=np.float64))
    if x.shape != y.shape:
        raise ShapeError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    win = _gaussian_window()
    if x.shape[0] < win.shape[0] or x.shape[1] < win.shape[1]:
        raise ShapeError(f"image {x.shape} smaller than the {win.shape} SSIM window")
    c1, c2 = k1**2, k2**2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    var_x = _filter_valid(x * x, win) - mu_x**2
    var_y = _filter_valid(y * y, win) - mu_y**2
    cov = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def lr_consistency(i_sr: np.ndarray, i_lr: np.ndarray, s: int, spec: DegradationSpec) -> float:
    """PSNR between the degraded SR output and the LR observation."""
    deg = degrade(i_sr, s, spec)
    if deg.shape != np.asarray(i_lr).shape:
        raise ShapeError(f"degraded SR {deg.shape} vs LR {np.asarray(i_lr).shape}")
    return psnr(deg, i_lr)

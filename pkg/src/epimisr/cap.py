"""CAP: cast rays from the target view, sample depths hyperbolically,
project into an extra view, and gather bicubic feature samples with a
validity mask.

Everything here is deterministic, non-learnable geometry; gradients flow
only through the gathered feature values, never through coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import Camera, backproject_pixel_rays, project_points
from .tensor import Tensor, as_tensor, bicubic_sample_at, mul, reshape

Z_EPS = 1e-6


@dataclass(frozen=True)
class RaySampling:
    P: int
    near: float
    far: float
    spacing: str = "hyperbolic"

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ConfigError(f"need 0 < near < far, got ({self.near}, {self.far})")
        if self.P < 2:
            raise ConfigError("need at least 2 ray points")
        if self.spacing != "hyperbolic":
            raise ConfigError(f"unknown spacing {self.spacing!r}")


@dataclass
class EpipolarTensor:
    """Per-view plane-sweep features.

    features: (P, sH, sW, C) tensor, zero where invalid
    mask:     (P, sH, sW) bool, True = valid sample
    depths:   (P,) strictly increasing canonical ladder
    """

    features: Tensor
    mask: np.ndarray
    depths: np.ndarray


def sample_depths_hyperbolic(sampling: RaySampling) -> np.ndarray:
    """Uniform in inverse depth, endpoints inclusive."""
    u = np.arange(sampling.P, dtype=np.float64) / (sampling.P - 1)
    return 1.0 / ((1.0 - u) / sampling.near + u / sampling.far)


def compute_validity(u: np.ndarray, v: np.ndarray, z: np.ndarray, width: int, height: int):
    """Valid iff in front of the camera and inside the grid (corners inclusive)."""
    return (z > Z_EPS) & (u >= 0.0) & (u <= width - 1.0) & (v >= 0.0) & (v <= height - 1.0)


def project_ray_points(
    target_sr: Camera, extra_sr: Camera, xs: np.ndarray, ys: np.ndarray, depths: np.ndarray
):
    """Project the full (P, N) ray-point lattice into the extra SR grid.

    Returns (us, vs, zs) each of shape (P, N).
    """
    origin, dirs = backproject_pixel_rays(target_sr, xs, ys)
    P, N = depths.shape[0], xs.shape[0]
    pts = origin[None, None, :] + depths[:, None, None] * dirs[None, :, :]
    us, vs, zs = project_points(extra_sr, pts.reshape(P * N, 3))
    return us.reshape(P, N), vs.reshape(P, N), zs.reshape(P, N)


def cast_and_project_pixels(
    target: Camera,
    extra: Camera,
    F_v,
    sampling: RaySampling,
    s: int,
    xs: np.ndarray,
    ys: np.ndarray,
):
    """Pixel-subset CAP on SR coordinates (xs, ys) of the target grid.

    Returns (features (P, N, C) tensor, mask (P, N) bool, depths (P,)).
    """
    F_v = as_tensor(F_v)
    target_sr = target.scaled(s)
    extra_sr = extra.scaled(s)
    if F_v.shape[:2] != (extra_sr.intrinsics.height, extra_sr.intrinsics.width):
        raise ShapeError(
            f"feature map {F_v.shape[:2]} does not match the extra view SR grid "
            f"({extra_sr.intrinsics.height}, {extra_sr.intrinsics.width})"
        )
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    depths = sample_depths_hyperbolic(sampling)
    us, vs, zs = project_ray_points(target_sr, extra_sr, xs, ys, depths)
    valid = compute_validity(us, vs, zs, extra_sr.intrinsics.width, extra_sr.intrinsics.height)
    # invalid projections can carry wild coordinates; pin them before gather
    us = np.where(valid, us, 0.0)
    vs = np.where(valid, vs, 0.0)
    coords = np.stack([us.ravel(), vs.ravel()], axis=1)
    flat = bicubic_sample_at(F_v, coords)
    gate = Tensor(valid.reshape(-1, 1).astype(F_v.dtype))
    flat = mul(flat, gate)
    P, N = depths.shape[0], xs.shape[0]
    feats = reshape(flat, (P, N, F_v.shape[2]))
    return feats, valid, depths


def cast_and_project(target: Camera, extra: Camera, F_v, sampling: RaySampling, s: int):
    """Full-grid CAP producing the (P, sH, sW, C) epipolar tensor."""
    F_v = as_tensor(F_v)
    target_sr = target.scaled(s)
    sh, sw = target_sr.intrinsics.height, target_sr.intrinsics.width
    yy, xx = np.mgrid[0:sh, 0:sw].astype(np.float64)
    feats, valid, depths = cast_and_project_pixels(
        target, extra, F_v, sampling, s, xx.ravel(), yy.ravel()
    )
    features = reshape(feats, (sampling.P, sh, sw, F_v.shape[2]))
    return EpipolarTensor(features=features, mask=valid.reshape(sampling.P, sh, sw), depths=depths)


def epipolar_line_segment(
    target: Camera, extra: Camera, pixel, sampling: RaySampling, s: int = 1
) -> np.ndarray:
    """Projected ray-sample coordinates (P, 2) for one target SR pixel."""
    target_sr = target.scaled(s)
    extra_sr = extra.scaled(s)
    x, y = float(pixel[0]), float(pixel[1])
    depths = sample_depths_hyperbolic(sampling)
    us, vs, _ = project_ray_points(
        target_sr, extra_sr, np.array([x]), np.array([y]), depths
    )
    return np.stack([us[:, 0], vs[:, 0]], axis=1)

"""Analytic scene renderer: posed cameras around procedurally textured
geometry, with exact per-pixel depth.

Shading is plain texture lookup (no lighting), so a surface point has the
same color in every view and cross-view correspondence is exact up to
resampling. Plane scenes admit a closed-form homography between views and
sphere scenes a quadric intersection; both serve as oracles in the tests.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import ConfigError, GeometryError
from ..geometry import Camera, Intrinsics, Pose, backproject_pixel_rays
from ..metrics import DegradationSpec, degrade
from .eptn import write_tensor
from .images import write_png
from .manifest import SceneManifest, ViewRecord, save_manifest

_GEOMETRIES = ("textured_plane", "two_planes", "textured_sphere")
_RIGS = ("ring", "arc")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    scene_id: str = "scene"
    geometry: str = "textured_plane"
    rig: str = "ring"
    n_views: int = 9
    rig_radius: float = 0.8
    plane_depth: float = 2.0
    hr_size: int = 48
    s: int = 2
    fov_deg: float = 50.0
    seed: int = 0
    texture_scale: float = 3.0
    octaves: int = 4
    contrast: float = 1.8
    arc_span_deg: float = 120.0
    split: str = "train"
    degradation: DegradationSpec = field(default_factory=DegradationSpec)

    def __post_init__(self):
        if self.geometry not in _GEOMETRIES:
            raise ConfigError(f"unknown geometry {self.geometry!r}")
        if self.rig not in _RIGS:
            raise ConfigError(f"unknown rig {self.rig!r}")
        if self.n_views < 1:
            raise ConfigError("need at least one view")
        if self.hr_size % self.s:
            raise ConfigError(f"hr_size {self.hr_size} not divisible by s={self.s}")

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "geometry": self.geometry,
            "rig": self.rig,
            "n_views": self.n_views,
            "rig_radius": self.rig_radius,
            "plane_depth": self.plane_depth,
            "hr_size": self.hr_size,
            "s": self.s,
            "fov_deg": self.fov_deg,
            "seed": self.seed,
            "texture_scale": self.texture_scale,
            "octaves": self.octaves,
            "contrast": self.contrast,
            "arc_span_deg": self.arc_span_deg,
            "split": self.split,
            "degradation": self.degradation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSceneSpec":
        d = dict(d)
        if "degradation" in d:
            d["degradation"] = DegradationSpec.from_dict(d["degradation"])
        return cls(**d)


@dataclass
class SceneRender:
    cameras: list[Camera]  # HR-grid cameras
    images: list[np.ndarray]  # (hr, hr, 3) in [0, 1]
    depths: list[np.ndarray]  # (hr, hr) camera-frame depth
    near: float
    far: float


def _look_at_pose(position: np.ndarray, target: np.ndarray) -> Pose:
    z = target - position
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(up, z)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose(R=R, t=-R @ position)


def rig_cameras(spec: SyntheticSceneSpec) -> list[Camera]:
    """LR-grid cameras; scale by spec.s to get the HR/SR render grid."""
    lr = spec.hr_size // spec.s
    f = (lr / 2.0) / math.tan(math.radians(spec.fov_deg) / 2.0)
    intr = Intrinsics(fx=f, fy=f, cx=(lr - 1) / 2.0, cy=(lr - 1) / 2.0, width=lr, height=lr)
    target = np.array([0.0, 0.0, spec.plane_depth])
    if spec.rig == "ring":
        angles = [2.0 * math.pi * k / spec.n_views for k in range(spec.n_views)]
    else:
        span = math.radians(spec.arc_span_deg)
        if spec.n_views == 1:
            angles = [0.0]
        else:
            angles = [span * (k / (spec.n_views - 1) - 0.5) for k in range(spec.n_views)]
    cams = []
    for a in angles:
        p = np.array([spec.rig_radius * math.cos(a), spec.rig_radius * math.sin(a), 0.0])
        cams.append(Camera(intr, _look_at_pose(p, target)))
    return cams


def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 1.0, 0.0])
    if abs(np.dot(ref, n)) > 0.999:
        ref = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(n, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def _intersect_plane(origin, dirs, n, c):
    denom = dirs @ n
    t = (c - origin @ n) / np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    return np.where((np.abs(denom) < 1e-12) | (t <= 0), np.inf, t)


def _intersect_sphere(origin, dirs, center, radius):
    oc = origin - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * dirs @ oc
    cc = oc @ oc - radius * radius
    disc = b * b - 4.0 * a * cc
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-b - sq) / (2.0 * a)
    t2 = (-b + sq) / (2.0 * a)
    t = np.where(t1 > 1e-9, t1, t2)
    return np.where(ok & (t > 1e-9), t, np.inf)


def _noise_rgb(us, vs, seed, scale, octaves, contrast):
    chans = [
        kernels.value_noise(us * scale, vs * scale, seed + 7919 * k, octaves, 2.0, 0.5)
        for k in range(3)
    ]
    rgb = np.stack(chans, axis=-1)
    # contrast stretch so the texture spans most of [0, 1]; 1.0 keeps the
    # raw noise (clip-free, smooth), which the resampling oracles need
    return np.clip(0.5 + contrast * (rgb - 0.5), 0.0, 1.0)


class _Scene:
    """Closed-form scene: intersect rays, look up texture at hit points."""

    def __init__(self, spec: SyntheticSceneSpec):
        self.spec = spec
        self.n = np.array([0.0, 0.0, 1.0])
        self.e1, self.e2 = _plane_basis(self.n)
        self.back_c = spec.plane_depth
        self.front_c = 0.75 * spec.plane_depth
        self.sphere_center = np.array([0.0, 0.0, 0.75 * spec.plane_depth])
        self.sphere_radius = 0.22 * abs(spec.plane_depth)

    def trace(self, origin, dirs):
        """Returns (t, object_id); id 0 = back plane, 1 = foreground."""
        spec = self.spec
        t_back = _intersect_plane(origin, dirs, self.n, self.back_c)
        obj = np.zeros(dirs.shape[0], dtype=np.int8)
        t = t_back
        if spec.geometry == "two_planes":
            t_front = _intersect_plane(origin, dirs, self.n, self.front_c)
            hit = origin + t_front[:, None] * np.where(np.isfinite(t_front[:, None]), dirs, 0.0)
            u = hit @ self.e1
            t_front = np.where(u < 0.0, t_front, np.inf)
            front = t_front < t
            t = np.where(front, t_front, t)
            obj = np.where(front, np.int8(1), obj)
        elif spec.geometry == "textured_sphere":
            t_sph = _intersect_sphere(origin, dirs, self.sphere_center, self.sphere_radius)
            front = t_sph < t
            t = np.where(front, t_sph, t)
            obj = np.where(front, np.int8(1), obj)
        return t, obj

    def shade(self, points, obj):
        spec = self.spec
        out = np.zeros((points.shape[0], 3))
        back = obj == 0
        if np.any(back):
            u = points[back] @ self.e1
            v = points[back] @ self.e2
            out[back] = _noise_rgb(u, v, spec.seed, spec.texture_scale, spec.octaves, spec.contrast)
        fore = obj == 1
        if np.any(fore):
            if spec.geometry == "two_planes":
                u = points[fore] @ self.e1
                v = points[fore] @ self.e2
                out[fore] = _noise_rgb(u, v, spec.seed + 104729, spec.texture_scale, spec.octaves, spec.contrast)
            else:
                d = (points[fore] - self.sphere_center) / self.sphere_radius
                lon = np.arctan2(d[:, 1], d[:, 0])
                lat = np.arcsin(np.clip(d[:, 2], -1.0, 1.0))
                out[fore] = _noise_rgb(
                    lon * self.sphere_radius,
                    lat * self.sphere_radius,
                    spec.seed + 104729,
                    spec.texture_scale,
                    spec.octaves,
                    spec.contrast,
                )
        return out


def render_view(cam_hr: Camera, scene: _Scene) -> tuple[np.ndarray, np.ndarray]:
    h, w = cam_hr.intrinsics.height, cam_hr.intrinsics.width
    vs, us = np.mgrid[0:h, 0:w].astype(np.float64)
    origin, dirs = backproject_pixel_rays(cam_hr, us.ravel(), vs.ravel())
    t, obj = scene.trace(origin, dirs)
    if not np.all(np.isfinite(t)):
        miss = float(np.mean(~np.isfinite(t)))
        raise GeometryError(f"camera rig does not see the scene geometry ({miss:.1%} of rays miss)")
    points = origin + t[:, None] * dirs
    img = scene.shade(points, obj).reshape(h, w, 3)
    return img, t.reshape(h, w)


def render_synthetic_views(spec: SyntheticSceneSpec) -> SceneRender:
    """HR images, HR-grid cameras, exact depths, and containing depth bounds."""
    scene = _Scene(spec)
    cams_lr = rig_cameras(spec)
    cams_hr = [c.scaled(spec.s) for c in cams_lr]
    images, depths = [], []
    for cam in cams_hr:
        img, dep = render_view(cam, scene)
        images.append(img)
        depths.append(dep)
    dmin = min(float(d.min()) for d in depths)
    dmax = max(float(d.max()) for d in depths)
    near = dmin * 0.999
    far = dmax * 1.001
    return SceneRender(cameras=cams_hr, images=images, depths=depths, near=near, far=far)


def scene_for(spec: SyntheticSceneSpec) -> _Scene:
    """Expose the analytic scene for oracle computations in tests."""
    return _Scene(spec)


def write_scene(spec: SyntheticSceneSpec, out_dir: str) -> str:
    """Render a scene to disk: HR/LR PNGs, depth EPTNs, manifest JSON.

    Returns the manifest path. Cameras in the manifest are LR-grid; the HR
    render grid is their s-scaled version.
    """
    render = render_synthetic_views(spec)
    cams_lr = rig_cameras(spec)
    scene_dir = os.path.join(out_dir, spec.scene_id)
    for sub in ("hr", "lr", "depth"):
        os.makedirs(os.path.join(scene_dir, sub), exist_ok=True)
    views = []
    for i, (cam, img, dep) in enumerate(zip(cams_lr, render.images, render.depths)):
        hr_rel = f"hr/view_{i:03d}.png"
        lr_rel = f"lr/view_{i:03d}.png"
        dep_rel = f"depth/view_{i:03d}.eptn"
        write_png(os.path.join(scene_dir, hr_rel), img)
        write_png(os.path.join(scene_dir, lr_rel), degrade(img, spec.s, spec.degradation))
        write_tensor(os.path.join(scene_dir, dep_rel), dep.astype(np.float32))
        views.append(ViewRecord(image_path=lr_rel, camera=cam, hr_path=hr_rel, depth_path=dep_rel))
    manifest = SceneManifest(
        scene_id=spec.scene_id,
        views=views,
        near=render.near,
        far=render.far,
        s=spec.s,
        degradation=spec.degradation,
        split=spec.split,
        root=scene_dir,
    )
    path = os.path.join(scene_dir, "manifest.json")
    save_manifest(manifest, path)
    return path

"""Pinhole camera geometry: projection, ray casting, projection-matrix
decomposition, pose perturbation, and view selection.

Conventions pinned here and relied on everywhere else:
  - world-to-camera pose (x_cam = R X + t), points in front have z_cam > 0
  - pixel coordinates follow the half-pixel-centered grid, (0, 0) is the
    center of the top-left pixel
  - geometry always runs in float64
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, GeometryError

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def scaled(self, s: int) -> "Intrinsics":
        """Intrinsics of the s-times-denser grid over the same field of view.

        Half-pixel centering makes the principal point shift by (s-1)/2 on
        top of the plain scaling.
        """
        off = (s - 1) / 2.0
        return Intrinsics(
            fx=self.fx * s,
            fy=self.fy * s,
            cx=self.cx * s + off,
            cy=self.cy * s + off,
            width=self.width * s,
            height=self.height * s,
            skew=self.skew * s,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "skew": self.skew,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            skew=float(d.get("skew", 0.0)),
        )


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > _ORTHO_TOL:
            raise GeometryError("R is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > _ORTHO_TOL:
            raise GeometryError("det(R) != 1")

    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def to_dict(self) -> dict:
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(R=np.asarray(d["R"], dtype=np.float64).reshape(3, 3), t=d["t"])


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose

    def center(self) -> np.ndarray:
        return self.pose.center()

    def projection_matrix(self) -> np.ndarray:
        Rt = np.hstack([self.pose.R, self.pose.t.reshape(3, 1)])
        return self.intrinsics.matrix() @ Rt

    def scaled(self, s: int) -> "Camera":
        return Camera(self.intrinsics.scaled(s), self.pose)


@dataclass(frozen=True)
class PerturbationSpec:
    sigma_translation: float = 0.0
    sigma_rotation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_translation < 0 or self.sigma_rotation < 0:
            raise ConfigError("perturbation sigmas must be nonnegative")


@dataclass(frozen=True)
class Ray:
    """World-frame ray through a pixel.

    origin + d * depth_dir sits at camera-frame depth d; direction is the
    unit-normalized version of depth_dir.
    """

    origin: np.ndarray
    direction: np.ndarray
    depth_dir: np.ndarray


def project_point(cam: Camera, X) -> tuple[float, float, float]:
    """Project one world point; returns (u, v, z_cam), z_cam unclamped."""
    X = np.asarray(X, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(X)):
        raise GeometryError("point must be finite")
    x_cam = cam.pose.R @ X + cam.pose.t
    z = x_cam[2]
    if abs(z) < 1e-12:
        raise GeometryError("point lies on the camera plane")
    p = cam.intrinsics.matrix() @ x_cam
    return p[0] / z, p[1] / z, z


def project_points(cam: Camera, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) world points -> (u, v, z_cam) arrays.

    No at-plane error here: near-zero depths get a guarded division and are
    meant to be rejected by a validity predicate downstream.
    """
    X = np.asarray(X, dtype=np.float64)
    x_cam = X @ cam.pose.R.T + cam.pose.t
    z = x_cam[:, 2]
    safe = np.where(np.abs(z) < 1e-12, 1.0, z)
    K = cam.intrinsics.matrix()
    p = x_cam @ K.T
    return p[:, 0] / safe, p[:, 1] / safe, z


def backproject_pixel_ray(cam: Camera, u: float, v: float) -> Ray:
    """Ray through pixel (u, v): origin at the camera center, world frame."""
    Kinv = np.linalg.inv(cam.intrinsics.matrix())
    d_cam = Kinv @ np.array([u, v, 1.0], dtype=np.float64)
    depth_dir = cam.pose.R.T @ d_cam
    origin = cam.center()
    return Ray(origin=origin, direction=depth_dir / np.linalg.norm(depth_dir), depth_dir=depth_dir)


def backproject_pixel_rays(cam: Camera, us: np.ndarray, vs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized form: returns (origin (3,), depth_dirs (N, 3))."""
    Kinv = np.linalg.inv(cam.intrinsics.matrix())
    ones = np.ones_like(us, dtype=np.float64)
    pix = np.stack([np.asarray(us, dtype=np.float64), np.asarray(vs, dtype=np.float64), ones], axis=-1)
    depth_dirs = pix @ Kinv.T @ cam.pose.R
    return cam.center(), depth_dirs


def decompose_projection_matrix(P: np.ndarray, width: int = 0, height: int = 0) -> Camera:
    """RQ-decompose a 3x4 projection matrix into a canonical Camera.

    K gets a positive diagonal and unit (2,2) entry; the leftover sign goes
    into a global scale so that z_cam > 0 in front of the camera. Image
    extents are not recoverable from P and are passed through.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (3, 4):
        raise GeometryError(f"projection matrix must be 3x4, got {P.shape}")
    M = P[:, :3]
    if abs(np.linalg.det(M)) < 1e-12 * max(1.0, np.abs(M).max() ** 3):
        raise GeometryError("left 3x3 block is singular")
    K, R = scipy.linalg.rq(M)
    sign = np.sign(np.diag(K))
    sign[sign == 0] = 1.0
    D = np.diag(sign)
    K = K @ D
    R = D @ R
    scale = 1.0
    if np.linalg.det(R) < 0:
        R = -R
        scale = -1.0
    t = scale * np.linalg.solve(K, P[:, 3])
    K = K / K[2, 2]
    intr = Intrinsics(
        fx=K[0, 0], fy=K[1, 1], cx=K[0, 2], cy=K[1, 2], width=width, height=height, skew=K[0, 1]
    )
    return Camera(intr, Pose(R=R, t=t))


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues formula; axis must be unit length."""
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise GeometryError("axis must be unit length")
    kx, ky, kz = axis
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def perturb_pose(pose: Pose, spec: PerturbationSpec, rng: np.random.Generator) -> Pose:
    """Noise model: t += N(0, s_t^2 I); R pre-multiplied by a rotation with a
    uniformly random axis and half-normal angle of scale s_r.

    Zero sigmas skip their draws entirely, so the pose passes through
    bit-exactly."""
    t = pose.t.copy()
    if spec.sigma_translation > 0:
        t = t + rng.normal(0.0, spec.sigma_translation, size=3)
    R = pose.R.copy()
    if spec.sigma_rotation > 0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = spec.sigma_rotation * abs(rng.normal())
        R = rotation_from_axis_angle(axis, angle) @ R
        # re-orthonormalize to keep the invariant tight over long chains
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
    return Pose(R=R, t=t)


def view_angle(cam_a: Camera, cam_b: Camera, scene_point) -> float:
    """Angle in degrees between the two rays camera-center -> scene point."""
    X = np.asarray(scene_point, dtype=np.float64).reshape(3)
    ra = X - cam_a.center()
    rb = X - cam_b.center()
    na, nb = np.linalg.norm(ra), np.linalg.norm(rb)
    if na < 1e-12 or nb < 1e-12:
        raise GeometryError("scene point coincides with a camera center")
    c = np.clip(np.dot(ra, rb) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def _center_distances(target: Camera, candidates) -> np.ndarray:
    c0 = target.center()
    return np.array([np.linalg.norm(cam.center() - c0) for cam in candidates])


def select_nearest_views(target: Camera, candidates, V: int) -> list[int]:
    """Indices of the V candidates nearest the target center, ascending
    distance, ties broken by ascending index."""
    if V > len(candidates):
        raise ConfigError(f"V={V} exceeds candidate count {len(candidates)}")
    d = _center_distances(target, candidates)
    order = np.lexsort((np.arange(len(candidates)), d))
    return [int(i) for i in order[:V]]


def select_median_distance_views(target: Camera, candidates, V: int) -> list[int]:
    """The V candidates whose distance is closest to the median distance."""
    if V > len(candidates):
        raise ConfigError(f"V={V} exceeds candidate count {len(candidates)}")
    d = _center_distances(target, candidates)
    key = np.abs(d - np.median(d))
    order = np.lexsort((np.arange(len(candidates)), key))
    return [int(i) for i in order[:V]]

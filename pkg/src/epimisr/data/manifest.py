"""Scene manifests (JSON) and projection-matrix text import."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import jsonschema
import numpy as np

from ..errors import ConfigError, ParseError
from ..geometry import Camera, Intrinsics, Pose, decompose_projection_matrix
from ..metrics import DegradationSpec

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["scene_id", "s", "near", "far", "split", "degradation", "views"],
    "properties": {
        "scene_id": {"type": "string"},
        "s": {"type": "integer", "minimum": 1},
        "near": {"type": "number", "exclusiveMinimum": 0},
        "far": {"type": "number"},
        "split": {"enum": ["train", "val", "test"]},
        "degradation": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["bicubic", "blur_decimate"]},
                "kernel": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "views": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["image", "camera"],
                "properties": {
                    "image": {"type": "string"},
                    "hr": {"type": "string"},
                    "depth": {"type": "string"},
                    "camera": {
                        "type": "object",
                        "required": ["intrinsics", "pose"],
                        "properties": {
                            "intrinsics": {"type": "object"},
                            "pose": {
                                "type": "object",
                                "required": ["R", "t"],
                                "properties": {
                                    "R": {"type": "array", "minItems": 9, "maxItems": 9},
                                    "t": {"type": "array", "minItems": 3, "maxItems": 3},
                                },
                            },
                        },
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class ViewRecord:
    image_path: str
    camera: Camera
    hr_path: str | None = None
    depth_path: str | None = None


@dataclass
class SceneManifest:
    scene_id: str
    views: list[ViewRecord]
    near: float
    far: float
    s: int
    degradation: DegradationSpec
    split: str = "train"
    root: str = "."

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ConfigError(f"need 0 < near < far, got ({self.near}, {self.far})")
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"bad split {self.split!r}")
        if self.s < 1:
            raise ConfigError("scale must be >= 1")

    def resolve(self, rel: str) -> str:
        return os.path.join(self.root, rel)


def _view_to_dict(v: ViewRecord) -> dict:
    d = {
        "image": v.image_path,
        "camera": {"intrinsics": v.camera.intrinsics.to_dict(), "pose": v.camera.pose.to_dict()},
    }
    if v.hr_path is not None:
        d["hr"] = v.hr_path
    if v.depth_path is not None:
        d["depth"] = v.depth_path
    return d


def save_manifest(manifest: SceneManifest, path) -> None:
    doc = {
        "scene_id": manifest.scene_id,
        "s": manifest.s,
        "near": manifest.near,
        "far": manifest.far,
        "split": manifest.split,
        "degradation": manifest.degradation.to_dict(),
        "views": [_view_to_dict(v) for v in manifest.views],
    }
    jsonschema.validate(doc, MANIFEST_SCHEMA)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_manifest(path) -> SceneManifest:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid JSON ({e})") from e
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ParseError(f"{path}: manifest schema violation: {e.message}") from e
    views = []
    for v in doc["views"]:
        cam = Camera(
            Intrinsics.from_dict(v["camera"]["intrinsics"]), Pose.from_dict(v["camera"]["pose"])
        )
        views.append(
            ViewRecord(
                image_path=v["image"], camera=cam, hr_path=v.get("hr"), depth_path=v.get("depth")
            )
        )
    return SceneManifest(
        scene_id=doc["scene_id"],
        views=views,
        near=float(doc["near"]),
        far=float(doc["far"]),
        s=int(doc["s"]),
        degradation=DegradationSpec.from_dict(doc["degradation"]),
        split=doc["split"],
        root=os.path.dirname(os.path.abspath(path)),
    )


def parse_projection_file(path) -> np.ndarray:
    """Read a 3x4 whitespace-separated projection matrix from text."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{ln}: expected 4 numbers, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as e:
                raise ParseError(f"{path}:{ln}: {e}") from e
    if len(rows) != 3:
        raise ParseError(f"{path}: expected 3 matrix rows, got {len(rows)}")
    return np.asarray(rows, dtype=np.float64)


def import_projection_matrices(paths, width: int = 0, height: int = 0) -> list[Camera]:
    return [decompose_projection_matrix(parse_projection_file(p), width, height) for p in paths]


def export_projection_matrix(path, cam: Camera) -> None:
    P = cam.projection_matrix()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        for row in P:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    os.replace(tmp, path)

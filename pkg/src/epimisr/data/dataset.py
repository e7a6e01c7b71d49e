"""Dataset assembly: seeded target draws plus rule-based extra-view picks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import select_median_distance_views, select_nearest_views
from .eptn import read_tensor
from .images import read_png
from .manifest import SceneManifest

_SELECTORS = {"nearest": select_nearest_views, "median": select_median_distance_views}


@dataclass(frozen=True)
class Sample:
    scene: SceneManifest
    target: int
    extras: tuple[int, ...]


def select_extras(scene: SceneManifest, target: int, V: int, selection: str = "nearest"):
    """Indices of V extra views for a given target view."""
    if selection not in _SELECTORS:
        raise ConfigError(f"unknown selection rule {selection!r}")
    if V + 1 > len(scene.views):
        raise ConfigError(f"scene {scene.scene_id}: V={V} needs {V + 1} views, has {len(scene.views)}")
    cand_idx = [i for i in range(len(scene.views)) if i != target]
    cams = [scene.views[i].camera for i in cand_idx]
    picked = _SELECTORS[selection](scene.views[target].camera, cams, V)
    return tuple(cand_idx[j] for j in picked)


def build_dataset(
    scenes: list[SceneManifest],
    V: int,
    selection: str = "nearest",
    seed: int = 0,
    targets_per_scene: int = 1,
) -> list[Sample]:
    """Deterministic sample list: seeded target draw, rule-based extras."""
    rng = np.random.default_rng(seed)
    samples = []
    for scene in scenes:
        n = len(scene.views)
        if V + 1 > n:
            raise ConfigError(f"scene {scene.scene_id}: V={V} needs {V + 1} views, has {n}")
        for _ in range(targets_per_scene):
            target = int(rng.integers(n))
            samples.append(
                Sample(scene=scene, target=target, extras=select_extras(scene, target, V, selection))
            )
    return samples


def load_lr(scene: SceneManifest, idx: int) -> np.ndarray:
    return read_png(scene.resolve(scene.views[idx].image_path))


def load_hr(scene: SceneManifest, idx: int) -> np.ndarray:
    rec = scene.views[idx]
    if rec.hr_path is None:
        raise ConfigError(f"scene {scene.scene_id} view {idx} has no HR reference")
    return read_png(scene.resolve(rec.hr_path))


def load_depth(scene: SceneManifest, idx: int) -> np.ndarray:
    rec = scene.views[idx]
    if rec.depth_path is None:
        raise ConfigError(f"scene {scene.scene_id} view {idx} has no depth map")
    return read_tensor(scene.resolve(rec.depth_path))

"""8-bit PNG image IO. Float images live in [0, 1]; files are written
atomically (temp then rename)."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from ..errors import ShapeError


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 2:
        mode = "L"
    elif img.ndim == 3 and img.shape[2] == 3:
        mode = "RGB"
    else:
        raise ShapeError(f"expected (H,W) or (H,W,3) image, got {img.shape}")
    q = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    tmp = f"{path}.tmp.{os.getpid()}.png"
    Image.fromarray(q, mode=mode).save(tmp, format="PNG")
    os.replace(tmp, path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.float64) / 255.0

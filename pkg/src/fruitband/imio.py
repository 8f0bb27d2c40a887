"""PNG image I/O and small pixel-format helpers shared across stages.

Conventions: images are numpy arrays, (H, W) for single-channel and
(H, W, 3) for color, uint8 on disk. Float images live in [0, 1].
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit PNG as uint8, (H, W) for grayscale or (H, W, 3) for RGB."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(path: str | os.PathLike, image: np.ndarray) -> None:
    """Save a uint8 array ((H, W) or (H, W, 3)) as PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {arr.dtype}")
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"unsupported image shape {arr.shape}")


def to_float(image: np.ndarray) -> np.ndarray:
    """uint8 [0, 255] -> float32 [0, 1]; float inputs pass through as float32."""
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32)


def quantize(image: np.ndarray) -> np.ndarray:
    """Clamp a float image to [0, 1] and quantize to uint8 (round half up)."""
    clipped = np.clip(image, 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def luma(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an RGB image as float32 in [0, 1]; grayscale passes through."""
    f = to_float(image)
    if f.ndim == 2:
        return f
    return (0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]).astype(np.float32)


def resize_bilinear(image: np.ndarray, size_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a uint8 image to (height, width)."""
    h, w = size_hw
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("resize_bilinear expects uint8 input")
    mode = "L" if arr.ndim == 2 else "RGB"
    out = Image.fromarray(arr, mode=mode).resize((w, h), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)

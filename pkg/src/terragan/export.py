"""File emission for downstream engines: 16-bit PNG, Unity RAW, 8-bit texture PNG, OBJ mesh.

All image writers take arrays in model range [-1, 1] and quantize on the way
out. Quantization is monotone, so pixel ordering survives a round trip.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class MeshConfig:
    """Scales applied when turning a heightmap into world-space geometry.

    horizontal_scale: meters between adjacent pixels (source imagery is 1 km/px).
    vertical_scale: height in meters of a full-intensity pixel.
    """

    horizontal_scale: float = 1000.0
    vertical_scale: float = 4000.0

    def __post_init__(self):
        if self.horizontal_scale <= 0 or self.vertical_scale <= 0:
            raise ValueError("mesh scales must be positive")


def _check_model_range(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise ValueError(f"{name} has values outside [-1, 1]; refusing to clamp silently")
    return arr


def quantize16(heightmap: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to uint16 via round((v+1)/2 * 65535)."""
    arr = _check_model_range(heightmap, "heightmap")
    return np.round((arr + 1.0) / 2.0 * 65535.0).astype(np.uint16)


def write_heightmap_png16(heightmap: np.ndarray, path) -> None:
    """Write a single-channel heightmap in [-1, 1] as a 16-bit grayscale PNG."""
    arr = np.asarray(heightmap)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D heightmap, got shape {arr.shape}")
    Image.fromarray(quantize16(arr)).save(str(path), format="PNG")


def read_heightmap_png16(path) -> np.ndarray:
    """Read a 16-bit grayscale PNG back into [-1, 1] floats."""
    img = Image.open(str(path))
    arr = np.array(img)
    if arr.dtype != np.uint16:
        raise ValueError(f"{path}: expected 16-bit grayscale PNG, got dtype {arr.dtype}")
    return (arr.astype(np.float64) / 65535.0) * 2.0 - 1.0


def write_texture_png(texture: np.ndarray, path) -> None:
    """Write an RGB texture in [-1, 1] as an 8-bit PNG."""
    arr = _check_model_range(texture, "texture")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 texture, got shape {np.asarray(texture).shape}")
    q = np.round((arr + 1.0) / 2.0 * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(str(path), format="PNG")


def read_texture_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG back into [-1, 1] floats."""
    arr = np.array(Image.open(str(path)).convert("RGB"))
    return (arr.astype(np.float64) / 255.0) * 2.0 - 1.0


def write_unity_raw(heightmap: np.ndarray, path) -> int:
    """Write a heightmap as Unity-style RAW: uint16 little-endian, row-major from the top row.

    Returns the number of bytes written (always 2*W*H).
    """
    arr = np.asarray(heightmap)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError(f"expected 2-D heightmap, got shape {arr.shape}")
    if arr.shape[0] != arr.shape[1]:
        warnings.warn(
            f"non-square heightmap {arr.shape}; engines typically expect square inputs",
            stacklevel=2,
        )
    data = quantize16(arr).astype("<u2").tobytes(order="C")
    Path(path).write_bytes(data)
    return len(data)


def heightmap_to_obj(heightmap: np.ndarray, config: MeshConfig, path) -> None:
    """Emit a triangulated OBJ mesh for a heightmap in [-1, 1].

    One vertex per pixel at (col*hscale, height_m, row*hscale) with
    height_m = (v+1)/2 * vscale; two CCW triangles (viewed from +y) per cell.
    """
    arr = np.asarray(heightmap)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"heightmap must be at least 2x2, got shape {arr.shape}")
    arr = _check_model_range(arr, "heightmap")
    h, w = arr.shape
    heights = (arr + 1.0) / 2.0 * config.vertical_scale
    lines = []
    for r in range(h):
        z = r * config.horizontal_scale
        for c in range(w):
            lines.append(f"v {c * config.horizontal_scale:.6f} {heights[r, c]:.6f} {z:.6f}")
    for r in range(h - 1):
        for c in range(w - 1):
            a = r * w + c + 1  # OBJ indices are 1-based
            b = a + 1
            cc = a + w
            d = cc + 1
            lines.append(f"f {a} {cc} {b}")
            lines.append(f"f {b} {cc} {d}")
    Path(path).write_text("\n".join(lines) + "\n")

"""Inference-side pipeline: latent sampling, heightmap generation, linear
latent interpolation, artifact-smoothing Gaussian blur, heightmap->texture
translation, and montage composition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import convolve1d


@dataclass(frozen=True)
class GenerationRequest:
    count: int = 1
    seed: int = 0
    blur_radius_px: float = 0.4
    emit_texture: bool = True

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.blur_radius_px < 0:
            raise ValueError("blur_radius_px must be >= 0")


def sample_latent(k: int, n: int, seed: int) -> np.ndarray:
    """n standard-normal latent vectors of dimension k, seeded."""
    if n < 1 or k < 1:
        raise ValueError("k and n must be >= 1")
    return np.random.default_rng(seed).standard_normal((n, k))


def interpolate_latents(z1: np.ndarray, z2: np.ndarray, steps: int) -> np.ndarray:
    """Linear interpolation with exact endpoints: entry i is (1-a_i) z1 + a_i z2."""
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"latent shape mismatch: {z1.shape} vs {z2.shape}")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    alphas = np.linspace(0.0, 1.0, steps)
    return (1.0 - alphas)[:, None] * z1[None, :] + alphas[:, None] * z2[None, :]


def generate_heightmaps(generator, latents: np.ndarray) -> np.ndarray:
    """Decode a batch of latents to heightmaps in [-1, 1], order preserved."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2:
        raise ValueError(f"expected (n, k) latents, got shape {latents.shape}")
    spec = generator.spec
    if latents.shape[1] != spec.latent_dim:
        raise ValueError(
            f"latent dimension {latents.shape[1]} does not match generator k={spec.latent_dim}"
        )
    generator.eval()
    with torch.no_grad():
        z = torch.from_numpy(latents.astype(np.float32))
        out = generator(z).numpy()
    return out[:, 0, :, :].astype(np.float64)


def translate_to_textures(texture_generator, heightmaps: np.ndarray) -> np.ndarray:
    """Translate a batch of heightmaps in [-1, 1] to RGB textures in [-1, 1]."""
    heightmaps = np.asarray(heightmaps, dtype=np.float64)
    if heightmaps.ndim == 2:
        heightmaps = heightmaps[None, :, :]
    texture_generator.eval()
    with torch.no_grad():
        x = torch.from_numpy(heightmaps.astype(np.float32))[:, None, :, :]
        out = texture_generator(x).numpy()
    return np.transpose(out, (0, 2, 3, 1)).astype(np.float64)


def _gaussian_kernel(radius_px: float) -> np.ndarray:
    sigma = radius_px
    half = max(1, int(math.floor(3.0 * sigma)))
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(heightmap: np.ndarray, radius_px: float) -> np.ndarray:
    """Separable Gaussian blur with sigma = radius_px, kernel truncated at 3 sigma
    (at least 1 px), mirror padding at borders. Radius 0 is the identity."""
    if radius_px < 0:
        raise ValueError("radius must be >= 0")
    arr = np.asarray(heightmap, dtype=np.float64)
    if radius_px == 0:
        return arr.copy()
    kernel = _gaussian_kernel(radius_px)
    out = convolve1d(arr, kernel, axis=0, mode="mirror")
    out = convolve1d(out, kernel, axis=1, mode="mirror")
    return out


def generate_pair(
    heightmap_generator,
    texture_generator,
    z: np.ndarray,
    blur_radius: float = 0.4,
    blur_before_texture: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Full two-stage sample: heightmap from z, blur, then texture translation.

    Returns (heightmap, texture) in model range [-1, 1]. With
    blur_before_texture=False the blur is applied to the heightmap only after
    translation (the translated texture sees the raw heightmap).
    """
    g_res = heightmap_generator.spec.output_resolution
    t_res = texture_generator.spec.output_resolution
    if g_res != t_res:
        raise ValueError(f"resolution mismatch: heightmap generator {g_res}, texture generator {t_res}")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = z[None, :]
    raw = generate_heightmaps(heightmap_generator, z)[0]
    blurred = gaussian_blur(raw, blur_radius)
    # blur can overshoot [-1,1] only by numerical noise; the kernel is convex
    blurred = np.clip(blurred, -1.0, 1.0)
    texture = translate_to_textures(texture_generator, blurred if blur_before_texture else raw)[0]
    return blurred, texture


def montage(images: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Compose equally-sized images into a row-major grid; empty cells are black."""
    if not images:
        raise ValueError("no images")
    if rows * cols < len(images):
        raise ValueError(f"grid {rows}x{cols} too small for {len(images)} images")
    shapes = {np.asarray(im).shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"mixed image sizes in montage: {sorted(shapes)}")
    first = np.asarray(images[0])
    h, w = first.shape[:2]
    channels = first.shape[2] if first.ndim == 3 else None
    out_shape = (rows * h, cols * w) if channels is None else (rows * h, cols * w, channels)
    # black in model range is -1
    out = np.full(out_shape, -1.0, dtype=np.float64)
    for i, im in enumerate(images):
        r, c = divmod(i, cols)
        out[r * h : (r + 1) * h, c * w : (c + 1) * w] = np.asarray(im, dtype=np.float64)
    return out

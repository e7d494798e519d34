"""Classical diamond-square midpoint displacement, kept as a non-learned
comparison fixture and a cheap source of test heightmaps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiamondSquareConfig:
    exponent: int  # grid is (2^n + 1) squared
    roughness: float = 0.5
    corner_values: tuple[float, float, float, float] = (0.5, 0.5, 0.5, 0.5)  # TL, TR, BL, BR
    seed: int = 0

    def __post_init__(self):
        if self.exponent < 1:
            raise ValueError("exponent must be >= 1")
        if self.roughness < 0:
            raise ValueError("roughness must be >= 0")


def diamond_square(config: DiamondSquareConfig) -> np.ndarray:
    """Generate a (2^n+1)^2 heightmap, clamped to [0, 1].

    Diamond step: each square's center becomes the mean of its 4 corners plus
    uniform [-1, 1] noise scaled by the level amplitude. Square step: edge
    midpoints average their available cardinal neighbors (3 at borders, 4
    interior) plus noise. Amplitude halves each level: roughness * 2^-level.
    """
    size = 2**config.exponent + 1
    grid = np.zeros((size, size), dtype=np.float64)
    tl, tr, bl, br = config.corner_values
    grid[0, 0] = tl
    grid[0, -1] = tr
    grid[-1, 0] = bl
    grid[-1, -1] = br

    rng = np.random.default_rng(config.seed)
    step = size - 1
    level = 0
    while step > 1:
        half = step // 2
        amplitude = config.roughness * 2.0 ** (-level)

        # diamond step: centers of squares
        for r in range(half, size, step):
            for c in range(half, size, step):
                corners = (
                    grid[r - half, c - half]
                    + grid[r - half, c + half]
                    + grid[r + half, c - half]
                    + grid[r + half, c + half]
                )
                grid[r, c] = corners / 4.0 + rng.uniform(-1.0, 1.0) * amplitude

        # square step: edge midpoints, averaging whatever cardinal neighbors exist
        for r in range(0, size, half):
            c_start = half if (r // half) % 2 == 0 else 0
            for c in range(c_start, size, step):
                total = 0.0
                count = 0
                for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < size and 0 <= cc < size:
                        total += grid[rr, cc]
                        count += 1
                grid[r, c] = total / count + rng.uniform(-1.0, 1.0) * amplitude

        step = half
        level += 1

    return np.clip(grid, 0.0, 1.0)

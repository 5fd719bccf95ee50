"""
Ground-truth density maps built from point annotations.
"""

from typing import Sequence, Tuple

import numpy as np

from errors import ConfigurationError


def _axis_profile(center: float, extent: int, sigma: float) -> np.ndarray:
    # pixel j covers [j, j+1); sample at its centre and renormalise after clipping
    coords = np.arange(extent, dtype=np.float64) + 0.5
    profile = np.exp(-((coords - center) ** 2) / (2.0 * sigma * sigma))
    total = profile.sum()
    if total <= 0.0:
        profile = np.zeros(extent)
        profile[min(max(int(center), 0), extent - 1)] = 1.0
        return profile
    return profile / total


def density_from_points(
    points: Sequence[Tuple[float, float]], image_size: Tuple[int, int], sigma: float = 1.0
) -> np.ndarray:
    """[H, W] map, one separable Gaussian of mass exactly 1 per (x, y) point"""
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be positive, got {sigma}")
    height, width = image_size
    density = np.zeros((height, width), dtype=np.float64)
    for x, y in points:
        density += np.outer(_axis_profile(y, height, sigma), _axis_profile(x, width, sigma))
    return density

"""
Plain-text and 16-bit PGM exports for maps and images.

PGM files are binary P5 with maxval 65535 (big-endian samples). A header
comment records the factor that maps stored integers back to values:

    P5
    # scale <value-per-unit> offset <minimum>
    <W> <H>
    65535
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np

from errors import DataError
from tensor.autograd import ShapeError

PathLike = Union[str, Path]
PGM_MAX = 65535


def write_pgm16(path: PathLike, plane: np.ndarray, value_range: Tuple[float, float] = None) -> float:
    """Write a [H, W] map; returns the scale (value per stored unit)"""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"PGM export expects a [H, W] map, got {plane.shape}")
    low, high = value_range if value_range is not None else (float(plane.min()), float(plane.max()))
    span = high - low
    scale = span / PGM_MAX if span > 0 else 1.0
    levels = np.clip(np.round((plane - low) / scale), 0, PGM_MAX).astype(">u2")
    height, width = plane.shape
    header = f"P5\n# scale {scale:.9e} offset {low:.9e}\n{width} {height}\n{PGM_MAX}\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(levels.tobytes())
    return scale


def read_pgm16(path: PathLike) -> np.ndarray:
    """Read back a map written by write_pgm16, undoing the recorded scale"""
    with open(path, "rb") as f:
        raw = f.read()
    lines = raw.split(b"\n", 4)
    if len(lines) < 5 or lines[0] != b"P5" or not lines[1].startswith(b"# scale"):
        raise DataError(f"{path} is not a 16-bit PGM written by this service")
    fields = lines[1].split()
    scale, offset = float(fields[2]), float(fields[4])
    width, height = (int(v) for v in lines[2].split())
    levels = np.frombuffer(lines[4][: width * height * 2], dtype=">u2").reshape(height, width)
    return levels.astype(np.float64) * scale + offset


def image_to_gray(image: np.ndarray) -> np.ndarray:
    """[3, H, W] RGB in [0, 1] -> [H, W] luminance"""
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def write_csv_grid(path: PathLike, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeError(f"CSV grid export expects a 2-D array, got {grid.shape}")
    np.savetxt(path, grid, delimiter=",", fmt="%.9f")

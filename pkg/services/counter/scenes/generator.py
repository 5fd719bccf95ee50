"""
==============================================================================
SYNTHETIC SCENE GENERATOR
==============================================================================
Draws multi-class counting scenes: textured, coloured shapes on a noisy
background, one class designated as the target. Distractor classes share
either colour or shape with the target, so counting them by mistake is the
natural failure of a model that ignores the exemplars.

A scene is a pure function of (spec, seed).
==============================================================================
"""

import math
from typing import List, Tuple

import numpy as np
from loguru import logger

from errors import DataError
from models.sample_models import ClassSpec, CountingSample, SceneSpec, ShapeKind, Texture
from scenes.density import density_from_points
from tensor.functional import interpolation_matrix


class SceneError(DataError):
    """Raised when a scene cannot be generated from its spec"""
    pass


# (class index, centre x, centre y, half extent)
Placement = Tuple[int, float, float, float]


# ============================================================================
# RENDERING
# ============================================================================

def shape_mask(kind: ShapeKind, dx: np.ndarray, dy: np.ndarray, radius: float) -> np.ndarray:
    """Boolean footprint of a shape given pixel-centre offsets from its centre"""
    if kind == ShapeKind.DISC:
        return dx * dx + dy * dy <= radius * radius
    if kind == ShapeKind.SQUARE:
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * radius
    if kind == ShapeKind.RING:
        dist = np.sqrt(dx * dx + dy * dy)
        return (dist <= radius) & (dist >= 0.55 * radius)
    if kind == ShapeKind.CROSS:
        arm = 0.35 * radius
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    if kind == ShapeKind.TRIANGLE:
        return (np.abs(dy) <= radius) & (np.abs(dx) <= 0.5 * (dy + radius))
    raise SceneError(f"Unknown shape kind {kind}")


def texture_gain(texture: Texture, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if texture == Texture.STRIPES:
        return np.where((xs.astype(int) // 2) % 2 == 0, 1.0, 0.6)
    if texture == Texture.DOTS:
        return np.where(((xs.astype(int) // 2) + (ys.astype(int) // 2)) % 2 == 0, 1.0, 0.55)
    return np.ones_like(xs, dtype=np.float64)


def render(spec: SceneSpec, placements: List[Placement], rng: np.random.Generator) -> np.ndarray:
    height, width = spec.image_size
    canvas = np.empty((3, height, width))
    canvas[:] = np.asarray(spec.background)[:, None, None]
    if spec.noise_std > 0:
        canvas += rng.normal(0.0, spec.noise_std, size=canvas.shape)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    for class_index, cx, cy, radius in placements:
        cls: ClassSpec = spec.classes[class_index]
        mask = shape_mask(cls.shape, xs + 0.5 - cx, ys + 0.5 - cy, radius)
        gain = texture_gain(cls.texture, xs, ys)
        for channel in range(3):
            canvas[channel][mask] = cls.color[channel] * gain[mask]
    return np.clip(canvas, 0.0, 1.0)


# ============================================================================
# LAYOUT
# ============================================================================

def draw_counts(spec: SceneSpec, rng: np.random.Generator) -> List[int]:
    counts = [int(rng.integers(c.count_range[0], c.count_range[1] + 1)) for c in spec.classes]
    distractors = [i for i in range(spec.n_classes) if i != spec.target_class]
    if distractors and spec.min_nontarget_ratio > 0:
        needed = math.ceil(spec.min_nontarget_ratio * counts[spec.target_class])
        k = 0
        while sum(counts[i] for i in distractors) < needed:
            counts[distractors[k % len(distractors)]] += 1
            k += 1
    return counts


def _overlaps(cx: float, cy: float, radius: float, placed: List[Placement]) -> bool:
    for _, ox, oy, orad in placed:
        gap = radius + orad + 1.0
        if abs(cx - ox) < gap and abs(cy - oy) < gap:
            return True
    return False


def place_objects(spec: SceneSpec, counts: List[int], rng: np.random.Generator) -> List[Placement]:
    height, width = spec.image_size
    placed: List[Placement] = []
    for class_index, n in enumerate(counts):
        r_low, r_high = spec.classes[class_index].radius_range
        for _ in range(n):
            for _attempt in range(spec.max_retries):
                radius = float(rng.uniform(r_low, r_high))
                if 2 * radius >= min(height, width):
                    raise SceneError(f"object radius {radius:.1f} does not fit a {width}x{height} image")
                cx = float(rng.uniform(radius, width - radius))
                cy = float(rng.uniform(radius, height - radius))
                if not spec.non_overlap or not _overlaps(cx, cy, radius, placed):
                    placed.append((class_index, cx, cy, radius))
                    break
            else:
                raise SceneError(
                    f"could not place object {len(placed) + 1} of class {class_index} "
                    f"without overlap after {spec.max_retries} attempts"
                )
    return placed


# ============================================================================
# EXEMPLARS
# ============================================================================

def object_box(cx: float, cy: float, radius: float, image_size: Tuple[int, int]) -> Tuple[int, int, int, int]:
    """Integer (x0, y0, w, h) box around an object, clipped to the image"""
    height, width = image_size
    x0, y0 = max(int(math.floor(cx - radius)), 0), max(int(math.floor(cy - radius)), 0)
    x1, y1 = min(int(math.ceil(cx + radius)), width), min(int(math.ceil(cy + radius)), height)
    return x0, y0, x1 - x0, y1 - y0


def crop_and_resize(image: np.ndarray, box: Tuple[int, int, int, int], size: Tuple[int, int]) -> np.ndarray:
    x0, y0, w, h = box
    crop = image[:, y0:y0 + h, x0:x0 + w]
    rows, cols = interpolation_matrix(h, size[0]), interpolation_matrix(w, size[1])
    return np.matmul(np.matmul(rows, crop), cols.T)


# ============================================================================
# ENTRY POINT
# ============================================================================

def generate_scene(spec: SceneSpec, rng: np.random.Generator, sample_id: str = "sample") -> CountingSample:
    counts = draw_counts(spec, rng)
    n_targets = counts[spec.target_class]
    if spec.shots > 0 and n_targets == 0:
        raise SceneError(f"{sample_id}: no target instances to crop exemplars from")

    placements = place_objects(spec, counts, rng)
    query = render(spec, placements, rng)

    targets = [p for p in placements if p[0] == spec.target_class]
    others = [p for p in placements if p[0] != spec.target_class]
    points = [(cx, cy) for _, cx, cy, _ in targets]

    boxes, exemplars = [], []
    if spec.shots > 0:
        order = rng.permutation(len(targets))
        # fewer targets than shots: cycle through the available instances
        for i in range(spec.shots):
            _, cx, cy, radius = targets[int(order[i % len(targets)])]
            box = object_box(cx, cy, radius, spec.image_size)
            boxes.append(tuple(float(v) for v in box))
            exemplars.append(crop_and_resize(query, box, spec.exemplar_size))

    density = density_from_points(points, spec.image_size, spec.sigma)[None]
    logger.debug(f"Generated {sample_id}: {n_targets} targets, {len(others)} distractors")
    return CountingSample(
        sample_id=sample_id,
        query=query,
        exemplars=exemplars,
        boxes=boxes,
        points=points,
        density=density,
        nontarget_points=[(cx, cy) for _, cx, cy, _ in others],
        nontarget_classes=[c for c, _, _, _ in others],
        target_class=spec.target_class,
        spec=spec,
    )


def generate_from_seed(spec: SceneSpec, seed: int, sample_id: str = "sample") -> CountingSample:
    return generate_scene(spec, np.random.default_rng(seed), sample_id)

"""
Procedural scenes: a background gradient with 3 to 8 anti-aliased shapes
composited far to near, with the true depth and segment label of the front
shape at every pixel.
"""
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from ..constants import IMAGE_CHANNELS, MAX_LABEL, MAX_SCENE_SIZE, MAX_SHAPES, MIN_SCENE_SIZE, MIN_SHAPES
from ..exceptions import ShapeError, UnknownKindError
from ..messages import MSG_SCENE_SIZE, MSG_SHAPE_KIND
from ..util import make_rng, setup_logger

logger = setup_logger(__name__)

SHAPE_KINDS = ("disk", "rect", "stripe")
SUPERSAMPLE = 4
COVERED = 0.5  # coverage at which a shape owns the pixel's depth and label
MAX_ATTEMPTS = 100


@dataclass
class Shape:
    kind: str
    params: Dict[str, float]
    color: np.ndarray
    depth: float
    label: int


@dataclass
class Scene:
    image: np.ndarray  # C x H x W in [0, 1]
    depth: np.ndarray  # 1 x H x W in [0, 1], background 1.0
    labels: np.ndarray  # H x W ints, background 0
    seed: int
    shapes: List[Shape] = field(default_factory=list)

    @property
    def seg(self) -> np.ndarray:
        """1 x H x W label map normalized to [0, 1]"""
        return (self.labels / float(MAX_LABEL))[None]


def _sample_grid(height: int, width: int):
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys = (np.arange(height)[:, None] + offsets[None, :]).reshape(-1) / height
    xs = (np.arange(width)[:, None] + offsets[None, :]).reshape(-1) / width
    return np.meshgrid(ys, xs, indexing="ij")


def shape_coverage(shape: Shape, height: int, width: int) -> np.ndarray:
    """Fraction of each pixel covered by ``shape``, from a supersampled grid"""
    y, x = _sample_grid(height, width)
    p = shape.params
    dy, dx = y - p["cy"], x - p["cx"]
    if shape.kind == "disk":
        inside = dy * dy + dx * dx <= p["r"] ** 2
    elif shape.kind == "rect":
        c, s = np.cos(p["angle"]), np.sin(p["angle"])
        u, v = c * dx + s * dy, -s * dx + c * dy
        inside = (np.abs(u) <= p["hw"]) & (np.abs(v) <= p["hh"])
    elif shape.kind == "stripe":
        c, s = np.cos(p["angle"]), np.sin(p["angle"])
        inside = np.abs(c * dx + s * dy) <= p["half"]
    else:
        raise UnknownKindError(MSG_SHAPE_KIND.format(shape.kind))
    return inside.reshape(height, SUPERSAMPLE, width, SUPERSAMPLE).mean(axis=(1, 3))


def _random_shape(rng: np.random.Generator, depth: float, label: int, channels: int) -> Shape:
    kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
    params = {"cy": rng.uniform(0.15, 0.85), "cx": rng.uniform(0.15, 0.85)}
    if kind == "disk":
        params["r"] = rng.uniform(0.12, 0.3)
    elif kind == "rect":
        params.update(hw=rng.uniform(0.1, 0.3), hh=rng.uniform(0.1, 0.3), angle=rng.uniform(0, np.pi))
    else:
        params.update(half=rng.uniform(0.06, 0.12), angle=rng.uniform(0, np.pi))
    return Shape(kind, params, rng.uniform(0.1, 0.9, size=channels), depth, label)


def _composite(shapes: List[Shape], rng: np.random.Generator, height: int, width: int, channels: int):
    top, bottom = rng.uniform(0.2, 0.8, size=(2, channels))
    ramp = np.linspace(0.0, 1.0, height)[None, :, None]
    image = top[:, None, None] * (1.0 - ramp) + bottom[:, None, None] * ramp
    image = np.broadcast_to(image, (channels, height, width)).copy()
    depth = np.ones((height, width))
    labels = np.zeros((height, width), dtype=int)
    for shape in shapes:
        cov = shape_coverage(shape, height, width)
        image = cov[None] * shape.color[:, None, None] + (1.0 - cov[None]) * image
        owned = cov >= COVERED
        depth[owned] = shape.depth
        labels[owned] = shape.label
    return image, depth, labels


def render_scene(seed: int, height: int, width: int, channels: int = IMAGE_CHANNELS) -> Scene:
    """
    Render a scene; the same seed gives the same scene.

    Shapes are drawn in composite order with strictly decreasing depth, so a
    later shape is always nearer. Layouts where some shape ends up with no
    pixel of its own are redrawn until every label is visible.
    """
    if not (MIN_SCENE_SIZE <= height <= MAX_SCENE_SIZE and MIN_SCENE_SIZE <= width <= MAX_SCENE_SIZE):
        raise ShapeError(MSG_SCENE_SIZE.format(MIN_SCENE_SIZE, MAX_SCENE_SIZE, height, width))
    rng = make_rng(seed)
    for attempt in range(MAX_ATTEMPTS):
        n = int(rng.integers(MIN_SHAPES, MAX_SHAPES + 1))
        depths = np.sort(rng.uniform(0.05, 0.9, size=n))[::-1]
        shapes = [_random_shape(rng, float(d), k + 1, channels) for k, d in enumerate(depths)]
        image, depth, labels = _composite(shapes, rng, height, width, channels)
        if len(np.unique(labels)) == n + 1:
            break
    else:
        logger.warning("scene %s: some shapes stayed hidden after %s attempts", seed, MAX_ATTEMPTS)
    logger.debug("scene %s: %s shapes after %s attempts", seed, len(shapes), attempt + 1)
    return Scene(image=np.clip(image, 0.0, 1.0), depth=depth[None], labels=labels, seed=seed, shapes=shapes)

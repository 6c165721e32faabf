"""Dataset ingestion, synthetic scene generation, and augmentation.

On-disk layout per sequence: `<dir>/input/in%06d.jpg|png` frames and
`<dir>/groundtruth/gt%06d.png` 8-bit grayscale annotations.  Raw annotation
values map to the three-way alphabet {0 background, 1 foreground, -1
ignored}; frames without an annotation file are carried as all-ignored.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import resize_bilinear
from .errors import ConfigError, DataError, ShapeError
from .segmentation import LabelMap

log = logging.getLogger(__name__)

# raw grayscale annotation value -> class (shadow counts as background,
# out-of-scope and unknown-motion regions are ignored)
GT_VALUE_MAP = {255: 1, 0: 0, 50: 0, 85: -1, 170: -1}
# class -> exported grayscale value (ignored regions export as 170)
LABEL_EXPORT_MAP = {1: 255, 0: 0, -1: 170}

_INPUT_RE = re.compile(r"^in(\d{6})\.(jpg|jpeg|png)$", re.IGNORECASE)
_GT_RE = re.compile(r"^gt(\d{6})\.png$", re.IGNORECASE)


@dataclass(frozen=True)
class FrameSample:
    """One frame: normalized image, per-pixel labels, optional clean background."""

    image: np.ndarray
    labels: LabelMap
    gt_background: np.ndarray | None = None
    sequence_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[0] != 3:
            raise ShapeError(f"image must be [3,H,W], got {img.shape}")
        if self.labels.shape != img.shape[1:]:
            raise ShapeError(
                f"label size {self.labels.shape} does not match image spatial size {img.shape[1:]}"
            )
        if self.gt_background is not None and np.asarray(self.gt_background).shape != img.shape:
            raise ShapeError("gt_background must match the image shape")
        object.__setattr__(self, "image", img)


@dataclass(frozen=True)
class DatasetSplit:
    """One-based temporal split: the first half trains, the rest tests."""

    n: int
    train_indices: range
    test_indices: range


def split_dataset(n: int) -> DatasetSplit:
    """Frames [1, floor(n/2)] train; frames [floor(n/2)+1, n] test."""
    if n < 2:
        raise DataError(f"need at least 2 frames to split, got {n}")
    half = n // 2
    return DatasetSplit(n=n, train_indices=range(1, half + 1), test_indices=range(half + 1, n + 1))


def map_gt_labels(raw: np.ndarray, strict: bool = True) -> LabelMap:
    """Translate raw 8-bit annotation values to {0, 1, -1}.

    Unknown raw values raise in strict mode; in lenient mode they become -1
    and a warning records how many were coerced.
    """
    raw = np.asarray(raw)
    if raw.ndim != 2:
        raise ShapeError(f"raw annotation grid must be 2-D, got shape {raw.shape}")
    out = np.full(raw.shape, -2, dtype=np.int64)
    for raw_value, label in GT_VALUE_MAP.items():
        out[raw == raw_value] = label
    unknown = out == -2
    if unknown.any():
        values = sorted(np.unique(raw[unknown]).tolist())
        if strict:
            raise DataError(f"annotation values outside the known table: {values}")
        log.warning("coercing %d pixels with unknown annotation values %s to ignore", int(unknown.sum()), values)
        out[unknown] = -1
    return LabelMap(out)


def export_labels(labels: LabelMap) -> np.ndarray:
    """Inverse of map_gt_labels onto the canonical exported grayscale values."""
    out = np.zeros(labels.shape, dtype=np.uint8)
    for label, raw_value in LABEL_EXPORT_MAP.items():
        out[labels.values == label] = raw_value
    return out


def _load_image_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _load_image_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"))
    except OSError as exc:
        raise DataError(f"unreadable annotation {path}: {exc}") from exc


def load_sequence(directory, strict_labels: bool = True) -> list:
    """Read one sequence; frames lacking an annotation get all-ignore labels."""
    root = Path(directory)
    input_dir = root / "input"
    gt_dir = root / "groundtruth"
    if not input_dir.is_dir():
        raise DataError(f"missing input directory: {input_dir}")
    frames: dict[int, Path] = {}
    for p in input_dir.iterdir():
        m = _INPUT_RE.match(p.name)
        if m:
            frames[int(m.group(1))] = p
    if not frames:
        raise DataError(f"no input frames found under {input_dir}")
    gts: dict[int, Path] = {}
    if gt_dir.is_dir():
        for p in gt_dir.iterdir():
            m = _GT_RE.match(p.name)
            if m:
                gts[int(m.group(1))] = p
    orphans = sorted(set(gts) - set(frames))
    if orphans:
        raise DataError(
            f"annotation/input count mismatch: annotations without frames at indices {orphans[:10]}"
        )
    sequence_id = root.name
    samples = []
    for index in sorted(frames):
        image = _load_image_rgb(frames[index])
        if index in gts:
            raw = _load_image_gray(gts[index])
            if raw.shape != image.shape[1:]:
                raise ShapeError(
                    f"frame {index}: annotation size {raw.shape} != image size {image.shape[1:]}"
                )
            labels = map_gt_labels(raw, strict=strict_labels)
        else:
            labels = LabelMap(np.full(image.shape[1:], -1, dtype=np.int64))
        samples.append(FrameSample(image=image, labels=labels, sequence_id=sequence_id, frame_index=index))
    return samples


def write_sequence(frames, directory) -> None:
    """Write frames back out in the canonical sequence layout."""
    root = Path(directory)
    (root / "input").mkdir(parents=True, exist_ok=True)
    (root / "groundtruth").mkdir(parents=True, exist_ok=True)
    for f in frames:
        img = image_to_uint8(f.image)
        Image.fromarray(img.transpose(1, 2, 0)).save(root / "input" / f"in{f.frame_index:06d}.png")
        Image.fromarray(export_labels(f.labels)).save(root / "groundtruth" / f"gt{f.frame_index:06d}.png")


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def mask_to_uint8(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) > 0).astype(np.uint8) * 255


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a [3,H,W] (or [N,3,H,W]) image to size x size."""
    arr = np.asarray(image, dtype=np.float64)
    squeeze = arr.ndim == 3
    if squeeze:
        arr = arr[None]
    out = resize_bilinear(arr, size, size)
    return out[0] if squeeze else out


def resize_labels_nearest(labels: LabelMap, size: int) -> LabelMap:
    """Nearest-neighbor resize keeps the label alphabet intact."""
    v = labels.values
    h, w = v.shape
    if (h, w) == (size, size):
        return labels
    rows = np.clip(np.floor((np.arange(size) + 0.5) * h / size), 0, h - 1).astype(np.int64)
    cols = np.clip(np.floor((np.arange(size) + 0.5) * w / size), 0, w - 1).astype(np.int64)
    return LabelMap(v[np.ix_(rows, cols)])


@dataclass(frozen=True)
class SpriteSpec:
    """A moving shape: square or disk, constant color, constant velocity.

    With camouflage set, the shape keeps the underlying surface's own colors
    shifted by that constant offset instead of painting a flat color, so it
    stays invisible to appearance cues yet differs from the clean background.
    """

    shape: str = "square"
    size: int = 8
    velocity: tuple = (1, 1)
    color: tuple = (0.9, 0.2, 0.2)
    start: tuple | None = None
    camouflage: float | None = None

    def __post_init__(self):
        if self.shape not in ("square", "disk"):
            raise ConfigError(f"sprite shape must be square or disk, got {self.shape!r}")
        if self.size < 1:
            raise ConfigError("sprite size must be positive")
        if len(self.velocity) != 2 or len(self.color) != 3:
            raise ConfigError("velocity must be (dy, dx) and color (r, g, b)")
        if self.camouflage is not None and self.camouflage == 0:
            raise ConfigError("camouflage offset must be nonzero (the shape would vanish)")

    def footprint(self) -> np.ndarray:
        if self.shape == "square":
            return np.ones((self.size, self.size), dtype=bool)
        yy, xx = np.mgrid[: self.size, : self.size]
        c = (self.size - 1) / 2.0
        return (yy - c) ** 2 + (xx - c) ** 2 <= (self.size / 2.0) ** 2


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Procedural scene: smooth background, moving sprites, Gaussian noise."""

    canvas: int = 64
    background: str = "static"
    sprites: tuple = field(default_factory=tuple)
    noise_sigma: float = 0.0
    frames: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.canvas < 4:
            raise ConfigError("canvas must be at least 4 pixels")
        if self.background not in ("static", "dynamic"):
            raise ConfigError(f"background kind must be static or dynamic, got {self.background!r}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.frames < 1:
            raise ConfigError("a scene needs at least one frame")
        for s in self.sprites:
            if s.size > self.canvas:
                raise ConfigError(f"sprite of size {s.size} exceeds canvas {self.canvas}")


def _smooth_background(rng: np.random.Generator, canvas: int) -> np.ndarray:
    """Low-frequency random field in [0.2, 0.8], bilinearly upsampled."""
    coarse = rng.uniform(0.2, 0.8, size=(1, 3, 4, 4))
    return resize_bilinear(coarse, canvas, canvas)[0]


def _sprite_positions(spec: SyntheticSceneSpec, sprite: SpriteSpec, rng: np.random.Generator):
    """Top-left corner per frame; motion wraps around the canvas torus."""
    limit = spec.canvas - sprite.size + 1
    if sprite.start is not None:
        y0, x0 = int(sprite.start[0]), int(sprite.start[1])
        if not (0 <= y0 < limit and 0 <= x0 < limit):
            raise ConfigError(f"sprite start {sprite.start} leaves the canvas")
    else:
        y0 = int(rng.integers(0, limit))
        x0 = int(rng.integers(0, limit))
    t = np.arange(spec.frames)
    ys = np.mod(np.rint(y0 + t * sprite.velocity[0]).astype(np.int64), limit)
    xs = np.mod(np.rint(x0 + t * sprite.velocity[1]).astype(np.int64), limit)
    return ys, xs


def synth_sequence(spec: SyntheticSceneSpec) -> list:
    """Deterministic scene: same spec (same seed) gives bitwise-equal frames."""
    rng = np.random.default_rng(spec.seed)
    base = _smooth_background(rng, spec.canvas)
    if spec.background == "dynamic":
        phase = rng.uniform(0.0, 2.0 * np.pi, size=(1, spec.canvas, spec.canvas))
        pattern = 0.05 * np.sin(phase + rng.uniform(0, 2 * np.pi))
        period = max(8, spec.frames // 3)
    positions = [_sprite_positions(spec, s, rng) for s in spec.sprites]
    samples = []
    for t in range(spec.frames):
        if spec.background == "dynamic":
            background = np.clip(base + pattern * np.sin(2.0 * np.pi * t / period), 0.0, 1.0)
        else:
            background = base
        frame = background.copy()
        labels = np.zeros((spec.canvas, spec.canvas), dtype=np.int64)
        for sprite, (ys, xs) in zip(spec.sprites, positions):
            fp = sprite.footprint()
            y, x = int(ys[t]), int(xs[t])
            region = frame[:, y : y + sprite.size, x : x + sprite.size]
            if sprite.camouflage is not None:
                paint = region + sprite.camouflage
            else:
                paint = np.broadcast_to(
                    np.asarray(sprite.color, dtype=np.float64).reshape(3, 1, 1), region.shape
                )
            region[:] = np.where(fp[None], paint, region)
            labels[y : y + sprite.size, x : x + sprite.size][fp] = 1
        if spec.noise_sigma > 0:
            frame = np.clip(frame + rng.normal(0.0, spec.noise_sigma, size=frame.shape), 0.0, 1.0)
        samples.append(
            FrameSample(
                image=frame,
                labels=LabelMap(labels),
                gt_background=background.copy(),
                sequence_id=f"synthetic_{spec.seed}",
                frame_index=t + 1,
            )
        )
    return samples


def default_augmentation_sprites(rng: np.random.Generator, frame_size: int) -> list:
    """Procedural paste shapes sized to the frame."""
    sprites = []
    for shape in ("square", "disk"):
        size = int(rng.integers(max(2, frame_size // 8), max(3, frame_size // 4)))
        color = tuple(rng.uniform(0.0, 1.0, size=3).tolist())
        sprites.append(SpriteSpec(shape=shape, size=size, velocity=(0, 0), color=color))
    return sprites


def paste_objects(sample: FrameSample, sprites=None, count: int | None = None, seed: int = 0) -> FrameSample:
    """Composite 1 or 2 shapes onto a frame and mark them foreground.

    Placement, shape choice, and (when not given) the count are drawn from
    the seed; pixels outside the pasted footprints are untouched and the
    clean background reference is preserved.
    """
    rng = np.random.default_rng(seed)
    if count is None:
        count = int(rng.integers(1, 3))
    if count not in (1, 2):
        raise ConfigError(f"paste count must be 1 or 2, got {count}")
    h, w = sample.image.shape[1:]
    if sprites is None:
        sprites = default_augmentation_sprites(rng, min(h, w))
    sprites = list(sprites)
    if not sprites:
        raise ConfigError("no sprites to paste")
    image = sample.image.copy()
    labels = sample.labels.values.copy()
    for _ in range(count):
        sprite = sprites[int(rng.integers(0, len(sprites)))]
        if sprite.size > min(h, w):
            raise DataError(f"sprite of size {sprite.size} does not fit a {h}x{w} frame")
        y = int(rng.integers(0, h - sprite.size + 1))
        x = int(rng.integers(0, w - sprite.size + 1))
        fp = sprite.footprint()
        region = image[:, y : y + sprite.size, x : x + sprite.size]
        if sprite.camouflage is not None:
            paint = np.clip(region + sprite.camouflage, 0.0, 1.0)
        else:
            paint = np.broadcast_to(
                np.asarray(sprite.color, dtype=np.float64).reshape(3, 1, 1), region.shape
            )
        region[:] = np.where(fp[None], paint, region)
        labels[y : y + sprite.size, x : x + sprite.size][fp] = 1
    return replace(sample, image=image, labels=LabelMap(labels))

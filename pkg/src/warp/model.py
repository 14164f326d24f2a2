"""Shared data model: boxes, detections, annotations, images, outcomes.

All types are immutable value objects; they can be shared freely across
worker tasks. Boxes are corner-form ``(x_min, y_min, x_max, y_max)`` with
continuous pixel coordinates; center/size forms are converted at ingestion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TP = "TP"
FN = "FN"


class WarpError(Exception):
    """Base class for harness errors."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with strictly positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box coordinate: {self!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate box (zero/negative extent): {self!r}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        """COCO corner+size form."""
        return cls(x, y, x + w, y + h)

    @classmethod
    def from_cxcywh(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        """Center+size form."""
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.width, self.height)

    def shift(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def scale(self, fx: float, fy: float) -> "BoundingBox":
        return BoundingBox(self.x_min * fx, self.y_min * fy, self.x_max * fx, self.y_max * fy)

    def clip(self, width: float, height: float) -> "BoundingBox | None":
        """Intersect with [0, width] x [0, height]; None if nothing remains."""
        x0 = max(self.x_min, 0.0)
        y0 = max(self.y_min, 0.0)
        x1 = min(self.x_max, float(width))
        y1 = min(self.y_max, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return BoundingBox(x0, y0, x1, y1)


def box_area(b: BoundingBox) -> float:
    """Area in square pixels; construction guarantees it is positive."""
    return b.width * b.height


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    class_label: int = 1

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")
        if self.class_label < 1:
            raise ValueError(f"class label must be >= 1: {self.class_label}")


@dataclass(frozen=True)
class GroundTruthAnnotation:
    box: BoundingBox
    class_label: int = 1

    def __post_init__(self):
        if self.class_label < 1:
            raise ValueError(f"class label must be >= 1: {self.class_label}")


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """An image plus its ground-truth annotations.

    Pixels are height x width x 3 uint8; the array is frozen on construction
    so records can be shared across workers.
    """

    image_id: str
    pixels: np.ndarray
    annotations: tuple[GroundTruthAnnotation, ...] = ()
    source: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        px = px.copy() if px.flags.writeable else px
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "annotations", tuple(self.annotations))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_pixels(self, pixels: np.ndarray, image_id: str | None = None) -> "ImageRecord":
        return ImageRecord(
            image_id=self.image_id if image_id is None else image_id,
            pixels=pixels,
            annotations=self.annotations,
            source=self.source,
        )

    def __eq__(self, other):
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.source == other.source
            and self.annotations == other.annotations
            and self.pixels.shape == other.pixels.shape
            and np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.image_id, self.source))


@dataclass(frozen=True)
class EvalOutcome:
    """Image-level result: TP iff the detector reported at least one box."""

    image_id: str
    original_class: str
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))
        expected = classify_image_outcome(self.detections)
        if self.original_class != expected:
            raise ValueError(
                f"outcome class {self.original_class!r} inconsistent with "
                f"{len(self.detections)} detections (expected {expected!r})"
            )

    @classmethod
    def from_detections(cls, image_id: str, detections) -> "EvalOutcome":
        detections = tuple(detections)
        return cls(image_id, classify_image_outcome(detections), detections)


def classify_image_outcome(detections) -> str:
    """TP when the detector emitted at least one box, FN otherwise."""
    return TP if len(detections) > 0 else FN

"""Deterministic stub detector built from image statistics.

Stands in for a real DNN so the adapter is testable without any ML
framework: it letterboxes the source frame to the model input size, boxes
the bright blob in the model frame, and inverse-maps the box to source
coordinates. The letterbox/inverse arithmetic is exactly what a real-model
wrapper has to implement, so the stub exercises the full coordinate path.

Optional "weights" are a JSON file tuning the rules:
``{"bright_ratio": 0.5, "input_size": 640, "pad_value": 114}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class StubParams:
    bright_ratio: float = 0.5
    input_size: int = 640
    pad_value: int = 114

    @classmethod
    def from_weights(cls, path) -> "StubParams":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return cls(
            bright_ratio=float(raw.get("bright_ratio", 0.5)),
            input_size=int(raw.get("input_size", 640)),
            pad_value=int(raw.get("pad_value", 114)),
        )


@dataclass(frozen=True)
class Letterbox:
    """Content placement of a source frame inside the model input frame."""

    content_w: int
    content_h: int
    pad_x: int
    pad_y: int
    scale_x: float
    scale_y: float

    def to_source(self, x0: float, y0: float, x1: float, y1: float,
                  width: int, height: int):
        """Model-frame box to source coordinates, clamped to the source."""
        sx0 = (x0 - self.pad_x) / self.scale_x
        sy0 = (y0 - self.pad_y) / self.scale_y
        sx1 = (x1 - self.pad_x) / self.scale_x
        sy1 = (y1 - self.pad_y) / self.scale_y
        return (
            max(0.0, min(sx0, width)),
            max(0.0, min(sy0, height)),
            max(0.0, min(sx1, width)),
            max(0.0, min(sy1, height)),
        )


def letterbox(pixels: np.ndarray, size: int, pad_value: int):
    """Resize keeping aspect, center on a padded square canvas."""
    h, w = pixels.shape[:2]
    scale = min(size / w, size / h)
    content_w = max(1, round(w * scale))
    content_h = max(1, round(h * scale))
    resized = np.asarray(
        Image.fromarray(pixels, mode="RGB").resize((content_w, content_h),
                                                   Image.BILINEAR),
        dtype=np.uint8,
    )
    canvas = np.full((size, size, 3), pad_value, dtype=np.uint8)
    pad_x = (size - content_w) // 2
    pad_y = (size - content_h) // 2
    canvas[pad_y : pad_y + content_h, pad_x : pad_x + content_w] = resized
    box = Letterbox(
        content_w=content_w,
        content_h=content_h,
        pad_x=pad_x,
        pad_y=pad_y,
        scale_x=content_w / w,
        scale_y=content_h / h,
    )
    return canvas, box


class StubModel:
    """Bright-blob detector with model-side resizing and inverse mapping."""

    name = "warp-shim-stub"

    def __init__(self, params: StubParams | None = None,
                 conf_threshold: float = 0.25):
        self.params = params or StubParams()
        self.conf_threshold = conf_threshold

    def detect(self, pixels: np.ndarray) -> list[dict]:
        """Detections in source coordinates for an RGB uint8 array."""
        h, w = pixels.shape[:2]
        canvas, lb = letterbox(pixels, self.params.input_size, self.params.pad_value)
        content = canvas[
            lb.pad_y : lb.pad_y + lb.content_h, lb.pad_x : lb.pad_x + lb.content_w
        ]
        brightness = content.astype(np.int64).sum(axis=2)
        peak = int(brightness.max())
        if peak <= 0:
            return []
        mask = brightness >= self.params.bright_ratio * peak
        rows, cols = np.nonzero(mask)
        my0, my1 = int(rows.min()), int(rows.max()) + 1
        mx0, mx1 = int(cols.min()), int(cols.max()) + 1
        mean_sum = float(brightness[my0:my1, mx0:mx1].mean())
        confidence = round(min(1.0, mean_sum / 765.0), 4)
        if confidence < self.conf_threshold:
            return []
        x0, y0, x1, y1 = lb.to_source(
            mx0 + lb.pad_x, my0 + lb.pad_y, mx1 + lb.pad_x, my1 + lb.pad_y, w, h
        )
        if x0 >= x1 or y0 >= y1:
            return []
        return [
            {
                "x_min": x0,
                "y_min": y0,
                "x_max": x1,
                "y_max": y1,
                "confidence": confidence,
                "class": 1,
            }
        ]

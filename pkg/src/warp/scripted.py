"""Deterministic rule-based detectors used as test oracles.

Three rule kinds:

* ``constant`` — always emit a fixed box.
* ``region_trigger`` — emit a fixed box when the mean intensity inside a
  probe region crosses a threshold (``min_mean`` and/or ``max_mean``).
* ``patch_chaser`` — seed on the brightest NxN window, then emit the tight
  bounding box of the bright pixels inside it.

Rules are pure functions of the pixel array, so identical input pixels always
produce identical detections. Rule sets round-trip through JSON so the CLI can
drive end-to-end runs without a live model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import BoundingBox, Detection


@dataclass(frozen=True)
class ConstantRule:
    box: tuple[float, float, float, float]
    confidence: float = 0.9
    class_label: int = 1

    def emit(self, pixels: np.ndarray) -> list[Detection]:
        return [Detection(BoundingBox(*self.box), self.confidence, self.class_label)]


@dataclass(frozen=True)
class RegionTriggerRule:
    """Fires when the probe region's mean channel value crosses a threshold."""

    emit_box: tuple[float, float, float, float]
    probe: tuple[float, float, float, float] | None = None
    min_mean: float | None = None
    max_mean: float | None = None
    confidence: float = 0.9
    class_label: int = 1

    def __post_init__(self):
        if self.min_mean is None and self.max_mean is None:
            raise ValueError("region trigger needs min_mean and/or max_mean")

    def emit(self, pixels: np.ndarray) -> list[Detection]:
        h, w = pixels.shape[:2]
        if self.probe is None:
            region = pixels
        else:
            x0, y0, x1, y1 = self.probe
            region = pixels[
                max(0, int(y0)) : min(h, int(np.ceil(y1))),
                max(0, int(x0)) : min(w, int(np.ceil(x1))),
            ]
        if region.size == 0:
            return []
        mean = float(region.mean(dtype=np.float64))
        if self.min_mean is not None and mean < self.min_mean:
            return []
        if self.max_mean is not None and mean > self.max_mean:
            return []
        return [Detection(BoundingBox(*self.emit_box), self.confidence, self.class_label)]


@dataclass(frozen=True)
class PatchChaserRule:
    """Boxes the bright blob inside the brightest window of the image.

    Brightness is the integer channel sum per pixel; a pixel is bright when
    that sum exceeds ``bright_floor``. With no bright pixel anywhere the rule
    emits nothing; with bright pixels but none inside the winning window it
    emits the window itself.
    """

    window: int = 25
    bright_floor: int = 0
    confidence: float = 1.0
    class_label: int = 1

    def emit(self, pixels: np.ndarray) -> list[Detection]:
        brightness = pixels.astype(np.int64).sum(axis=2)
        if int(brightness.max()) <= self.bright_floor:
            return []
        h, w = brightness.shape
        win_h = min(self.window, h)
        win_w = min(self.window, w)
        r0, c0 = kernels.window_sum_argmax(brightness, win_h, win_w)
        window = brightness[r0 : r0 + win_h, c0 : c0 + win_w]
        rows, cols = np.nonzero(window > self.bright_floor)
        if rows.size == 0:
            box = BoundingBox(float(c0), float(r0), float(c0 + win_w), float(r0 + win_h))
        else:
            box = BoundingBox(
                float(c0 + cols.min()),
                float(r0 + rows.min()),
                float(c0 + cols.max() + 1),
                float(r0 + rows.max() + 1),
            )
        return [Detection(box, self.confidence, self.class_label)]


_RULE_KINDS = {
    "constant": ConstantRule,
    "region_trigger": RegionTriggerRule,
    "patch_chaser": PatchChaserRule,
}


@dataclass(frozen=True)
class ScriptedDetector:
    """A named, deterministic bundle of detection rules."""

    rules: tuple = ()
    name: str = "scripted"
    conf_threshold: float = 0.0

    def detect_pixels(self, pixels: np.ndarray) -> list[Detection]:
        detections: list[Detection] = []
        for rule in self.rules:
            detections.extend(rule.emit(pixels))
        return detections

    def to_dict(self) -> dict:
        rules = []
        for rule in self.rules:
            kind = next(k for k, cls in _RULE_KINDS.items() if isinstance(rule, cls))
            entry = {"kind": kind}
            entry.update(
                {k: list(v) if isinstance(v, tuple) else v for k, v in vars(rule).items()}
            )
            rules.append(entry)
        return {"name": self.name, "conf_threshold": self.conf_threshold, "rules": rules}

    @classmethod
    def from_dict(cls, raw: dict) -> "ScriptedDetector":
        rules = []
        for entry in raw.get("rules", []):
            entry = dict(entry)
            kind = entry.pop("kind", None)
            if kind not in _RULE_KINDS:
                raise ValueError(f"unknown scripted rule kind: {kind!r}")
            for key in ("box", "emit_box", "probe"):
                if entry.get(key) is not None:
                    entry[key] = tuple(entry[key])
            rules.append(_RULE_KINDS[kind](**entry))
        return cls(
            rules=tuple(rules),
            name=str(raw.get("name", "scripted")),
            conf_threshold=float(raw.get("conf_threshold", 0.0)),
        )

    @classmethod
    def from_json_file(cls, path) -> "ScriptedDetector":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

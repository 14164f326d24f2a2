"""Dataset augmentation variants with exact annotation remapping.

Four variants: seeded Gaussian overlays, zoned cloud-patch injections,
2x2 mosaic composites with a seeded interior split, and 2x2 crops resized to
a target size. Geometry-changing variants record their per-source affine
parameters in provenance so the emitted boxes can be recomputed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .model import BoundingBox, GroundTruthAnnotation, ImageRecord
from .perturb import GridSchedule, NoiseOverlayParams, PatchSpec, global_overlay, \
    inject_patch

MIDDLE_HORIZONTAL = "middle_horizontal"
SKY_UPPER = "sky_upper"
ZONE_ROWS = {
    MIDDLE_HORIZONTAL: tuple(range(10, 15)),
    SKY_UPPER: tuple(range(0, 10)),
}
MIN_CLIP_SURVIVAL = 0.2
VARIANTS = ("gaussian_overlay", "cloud_patch", "mosaic", "crop2x2")


@dataclass(frozen=True)
class AugmentationPlan:
    """Config for one augmentation run; parsed from the CLI config file."""

    variant: str
    noise_range: tuple[float, float] = (0.1, 0.4)
    zone: str = MIDDLE_HORIZONTAL
    target_size: tuple[int, int] = (640, 640)
    seed: int = 0
    per_image: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown augmentation variant: {self.variant!r}")
        lo, hi = self.noise_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"noise range must sit inside [0, 1]: {self.noise_range}")
        if self.zone not in ZONE_ROWS:
            raise ValueError(f"unknown zone: {self.zone!r}")


@dataclass(frozen=True)
class AugmentedRecord:
    image: ImageRecord
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for ann in self.image.annotations:
            box = ann.box
            if (
                box.x_min < 0
                or box.y_min < 0
                or box.x_max > self.image.width
                or box.y_max > self.image.height
            ):
                raise ValueError(
                    f"augmented annotation {box} exceeds image bounds "
                    f"{self.image.width}x{self.image.height}"
                )


def augment_gaussian(image: ImageRecord, noise_range=(0.1, 0.4), seed: int = 0
                     ) -> AugmentedRecord:
    """Overlay noise at a level drawn uniformly from the range (seeded)."""
    lo, hi = noise_range
    rng = np.random.default_rng(seed)
    a = float(rng.uniform(lo, hi))
    noise_seed = int(rng.integers(0, 2**63))
    out = global_overlay(image, NoiseOverlayParams(a, noise_seed))
    out = out.with_pixels(out.pixels, image_id=f"{image.image_id}_gauss{seed}")
    return AugmentedRecord(
        out,
        provenance={
            "variant": "gaussian_overlay",
            "sources": [image.image_id],
            "noise_level": a,
            "noise_seed": noise_seed,
            "seed": seed,
        },
    )


def augment_cloud_patch(image: ImageRecord, patch: PatchSpec, zone: str = MIDDLE_HORIZONTAL,
                        seed: int = 0, grid: GridSchedule | None = None) -> AugmentedRecord:
    """Composite the cloud patch at a random slot of the zone.

    The cloud is a negative distractor: annotations pass through unchanged
    and no annotation is added for the patch.
    """
    grid = grid or GridSchedule()
    rows = [r for r in ZONE_ROWS[zone] if r < grid.rows]
    if not rows:
        raise ValueError(f"zone {zone!r} has no rows inside a {grid.rows}-row grid")
    rng = np.random.default_rng(seed)
    row = int(rng.choice(rows))
    col = int(rng.integers(0, grid.cols))
    out, patch_box = inject_patch(image, patch, (row, col), grid)
    out = out.with_pixels(out.pixels, image_id=f"{image.image_id}_cloud{seed}")
    return AugmentedRecord(
        out,
        provenance={
            "variant": "cloud_patch",
            "sources": [image.image_id],
            "zone": zone,
            "slot": [row, col],
            "patch_box": list(patch_box.as_tuple()),
            "seed": seed,
        },
    )


def _resize(pixels: np.ndarray, width: int, height: int) -> np.ndarray:
    im = Image.fromarray(pixels, mode="RGB").resize((width, height), Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)


def _remap_box(box: BoundingBox, fx: float, fy: float, tx: float, ty: float,
               clip_region: tuple[float, float, float, float],
               min_survival: float) -> BoundingBox | None:
    """Scale+translate a box, clip it to a region, drop it when too little
    survives. The survival ratio compares against the unclipped remapped box."""
    remapped = (
        box.x_min * fx + tx,
        box.y_min * fy + ty,
        box.x_max * fx + tx,
        box.y_max * fy + ty,
    )
    rx0, ry0, rx1, ry1 = remapped
    cx0, cy0, cx1, cy1 = clip_region
    x0, y0 = max(rx0, cx0), max(ry0, cy0)
    x1, y1 = min(rx1, cx1), min(ry1, cy1)
    if x0 >= x1 or y0 >= y1:
        return None
    full = (rx1 - rx0) * (ry1 - ry0)
    kept = (x1 - x0) * (y1 - y0)
    if kept < min_survival * full:
        return None
    return BoundingBox(x0, y0, x1, y1)


def augment_mosaic(images, target_size=(640, 640), seed: int = 0, split=None,
                   min_survival: float = MIN_CLIP_SURVIVAL) -> AugmentedRecord:
    """Compose four sources into a 2x2 mosaic around a seeded split point.

    The split is sampled inside the central 50% of each axis unless given
    explicitly. Each source is scaled to its quadrant; its annotations are
    scaled, translated, clipped to the quadrant, and dropped below the
    survival threshold.
    """
    images = list(images)
    if len(images) != 4:
        raise ValueError(f"mosaic needs exactly 4 source images, got {len(images)}")
    tw, th = target_size
    rng = np.random.default_rng(seed)
    if split is None:
        sx = int(rng.integers(tw // 4, 3 * tw // 4 + 1))
        sy = int(rng.integers(th // 4, 3 * th // 4 + 1))
    else:
        sx, sy = split
    if not (0 < sx < tw and 0 < sy < th):
        raise ValueError(f"split point {split} outside the target interior")

    quadrants = (
        (0, 0, sx, sy),
        (sx, 0, tw, sy),
        (0, sy, sx, th),
        (sx, sy, tw, th),
    )
    canvas = np.zeros((th, tw, 3), dtype=np.uint8)
    annotations: list[GroundTruthAnnotation] = []
    transforms = []
    for image, (qx0, qy0, qx1, qy1) in zip(images, quadrants):
        qw, qh = qx1 - qx0, qy1 - qy0
        canvas[qy0:qy1, qx0:qx1] = _resize(image.pixels, qw, qh)
        fx, fy = qw / image.width, qh / image.height
        transforms.append(
            {
                "source": image.image_id,
                "scale": [fx, fy],
                "translate": [float(qx0), float(qy0)],
                "clip": [float(qx0), float(qy0), float(qx1), float(qy1)],
            }
        )
        for ann in image.annotations:
            box = _remap_box(
                ann.box, fx, fy, float(qx0), float(qy0),
                (float(qx0), float(qy0), float(qx1), float(qy1)), min_survival,
            )
            if box is not None:
                annotations.append(GroundTruthAnnotation(box, ann.class_label))

    record = ImageRecord(
        image_id=f"{'-'.join(im.image_id for im in images)}_mosaic{seed}",
        pixels=canvas,
        annotations=tuple(annotations),
        source="mosaic",
    )
    return AugmentedRecord(
        record,
        provenance={
            "variant": "mosaic",
            "sources": [im.image_id for im in images],
            "split": [sx, sy],
            "target_size": [tw, th],
            "transforms": transforms,
            "min_survival": min_survival,
            "interpolation": "bilinear",
            "seed": seed,
        },
    )


def augment_crop2x2(image: ImageRecord, target_size=(640, 640),
                    min_survival: float = MIN_CLIP_SURVIVAL) -> list[AugmentedRecord]:
    """Cut the image into four equal quadrants, each resized to the target.

    Annotations translate into the quadrant frame, clip there, drop below the
    survival threshold (relative to the original box area), then scale with
    the resize. Quadrants without surviving annotations are still emitted as
    negative samples.
    """
    if image.width < 2 or image.height < 2:
        raise ValueError("crops need an image of at least 2x2 pixels")
    tw, th = target_size
    hw, hh = image.width // 2, image.height // 2
    quadrants = {
        "tl": (0, 0, hw, hh),
        "tr": (hw, 0, image.width, hh),
        "bl": (0, hh, hw, image.height),
        "br": (hw, hh, image.width, image.height),
    }
    out = []
    for name, (qx0, qy0, qx1, qy1) in quadrants.items():
        qw, qh = qx1 - qx0, qy1 - qy0
        fx, fy = tw / qw, th / qh
        pixels = _resize(image.pixels[qy0:qy1, qx0:qx1], tw, th)
        annotations = []
        for ann in image.annotations:
            clipped = _remap_box(
                ann.box, 1.0, 1.0, -float(qx0), -float(qy0),
                (0.0, 0.0, float(qw), float(qh)), min_survival,
            )
            if clipped is not None:
                annotations.append(
                    GroundTruthAnnotation(clipped.scale(fx, fy), ann.class_label)
                )
        record = ImageRecord(
            image_id=f"{image.image_id}_crop_{name}",
            pixels=pixels,
            annotations=tuple(annotations),
            source=image.source,
        )
        out.append(
            AugmentedRecord(
                record,
                provenance={
                    "variant": "crop2x2",
                    "sources": [image.image_id],
                    "quadrant": name,
                    "region": [qx0, qy0, qx1, qy1],
                    "scale": [fx, fy],
                    "min_survival": min_survival,
                    "interpolation": "bilinear",
                },
            )
        )
    return out

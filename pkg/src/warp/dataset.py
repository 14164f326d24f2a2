"""COCO-style manifest loading, validation, and the annotation-position heatmap.

The manifest is detection-style COCO JSON: ``images`` (id, file_name, width,
height), ``annotations`` (image_id, bbox as [x, y, w, h], category_id) and
``categories`` (id, name). Only those fields are consumed; unknown fields are
ignored on load and not written back.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .model import BoundingBox, GroundTruthAnnotation, ImageRecord, WarpError


class ManifestError(WarpError):
    """Malformed or inconsistent dataset manifest."""


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    file_name: str
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ManifestError(
                f"image {self.image_id!r}: declared dims {self.width}x{self.height} invalid"
            )


@dataclass(frozen=True)
class AnnotationEntry:
    image_id: str
    box: BoundingBox
    class_label: int


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    split: str
    images: tuple[ImageEntry, ...]
    annotations: tuple[AnnotationEntry, ...]
    categories: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [im.image_id for im in self.images]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate image ids in manifest: {dupes}")
        known = set(ids)
        for ann in self.annotations:
            if ann.image_id not in known:
                raise ManifestError(
                    f"annotation references unknown image_id {ann.image_id!r}"
                )

    def annotations_for(self, image_id: str) -> list[AnnotationEntry]:
        return [a for a in self.annotations if a.image_id == image_id]


def load_manifest(path, name: str | None = None, split: str = "test") -> DatasetManifest:
    """Load and validate a COCO-style JSON manifest."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: {e}") from e

    for key in ("images", "annotations"):
        if key not in raw or not isinstance(raw[key], list):
            raise ManifestError(f"manifest {path} lacks the {key!r} array")

    images = []
    for im in raw["images"]:
        try:
            images.append(
                ImageEntry(
                    image_id=str(im["id"]),
                    file_name=str(im["file_name"]),
                    width=int(im["width"]),
                    height=int(im["height"]),
                )
            )
        except KeyError as e:
            raise ManifestError(f"image entry {im.get('id')!r} missing field {e}") from e

    categories = {}
    for cat in raw.get("categories", []):
        try:
            categories[int(cat["id"])] = str(cat["name"])
        except KeyError as e:
            raise ManifestError(f"category entry missing field {e}") from e

    annotations = []
    for ann in raw["annotations"]:
        ann_id = ann.get("id")
        try:
            x, y, w, h = (float(v) for v in ann["bbox"])
            box = BoundingBox.from_xywh(x, y, w, h)
        except KeyError as e:
            raise ManifestError(f"annotation {ann_id!r} missing field {e}") from e
        except (TypeError, ValueError) as e:
            raise ManifestError(f"annotation {ann_id!r} has invalid bbox: {e}") from e
        annotations.append(
            AnnotationEntry(
                image_id=str(ann["image_id"]),
                box=box,
                class_label=int(ann.get("category_id", 1)),
            )
        )

    return DatasetManifest(
        name=name if name is not None else str(raw.get("info", {}).get("description", path.stem)),
        split=split,
        images=tuple(images),
        annotations=tuple(annotations),
        categories=categories,
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    raw = {
        "info": {"description": manifest.name},
        "images": [
            {
                "id": im.image_id,
                "file_name": im.file_name,
                "width": im.width,
                "height": im.height,
            }
            for im in manifest.images
        ],
        "annotations": [
            {
                "id": idx + 1,
                "image_id": ann.image_id,
                "bbox": list(ann.box.as_xywh()),
                "category_id": ann.class_label,
                "area": ann.box.width * ann.box.height,
                "iscrowd": 0,
            }
            for idx, ann in enumerate(manifest.annotations)
        ],
        "categories": [
            {"id": cid, "name": cname, "supercategory": "none"}
            for cid, cname in sorted(manifest.categories.items())
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=1, sort_keys=True)


def load_image(entry: ImageEntry, images_root, annotations=()) -> ImageRecord:
    """Decode one image to 8-bit RGB and check its declared dimensions."""
    path = Path(images_root) / entry.file_name
    if not path.is_file():
        raise ManifestError(f"image {entry.image_id!r}: file not found: {path}")
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    h, w = rgb.shape[:2]
    if (w, h) != (entry.width, entry.height):
        raise ManifestError(
            f"image {entry.image_id!r}: declared {entry.width}x{entry.height} "
            f"but decoded {w}x{h}"
        )
    return ImageRecord(
        image_id=entry.image_id,
        pixels=rgb,
        annotations=tuple(annotations),
        source=entry.file_name,
    )


def load_image_records(manifest: DatasetManifest, images_root) -> list[ImageRecord]:
    """Decode every image in the manifest with its annotations attached."""
    by_image: dict[str, list[GroundTruthAnnotation]] = {im.image_id: [] for im in manifest.images}
    for ann in manifest.annotations:
        by_image[ann.image_id].append(GroundTruthAnnotation(ann.box, ann.class_label))
    return [
        load_image(entry, images_root, by_image[entry.image_id])
        for entry in manifest.images
    ]


@dataclass(frozen=True)
class AnnotationHeatmap:
    """Counts of annotation box centers per grid cell."""

    counts: np.ndarray
    total: int

    @property
    def rows(self) -> int:
        return self.counts.shape[0]

    @property
    def cols(self) -> int:
        return self.counts.shape[1]


def annotation_heatmap(
    manifest: DatasetManifest, rows: int = 25, cols: int = 25
) -> AnnotationHeatmap:
    """Count each annotation in the cell containing its box center.

    Centers use normalized coordinates so differently sized images share the
    grid; a center exactly on the right/bottom edge lands in the last cell.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dims must be >= 1: {rows}x{cols}")
    dims = {im.image_id: (im.width, im.height) for im in manifest.images}
    counts = np.zeros((rows, cols), dtype=np.int64)
    for ann in manifest.annotations:
        w, h = dims[ann.image_id]
        cx, cy = ann.box.center
        col = min(int(cx / w * cols), cols - 1)
        row = min(int(cy / h * rows), rows - 1)
        counts[row, col] += 1
    return AnnotationHeatmap(counts, int(counts.sum()))


def heatmap_to_csv(heatmap: AnnotationHeatmap, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for row in heatmap.counts:
            writer.writerow([int(v) for v in row])


def heatmap_from_csv(path) -> AnnotationHeatmap:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [[int(v) for v in row] for row in csv.reader(f) if row]
    counts = np.array(rows, dtype=np.int64)
    return AnnotationHeatmap(counts, int(counts.sum()))


def heatmap_to_json(heatmap: AnnotationHeatmap, path) -> None:
    payload = {
        "rows": heatmap.rows,
        "cols": heatmap.cols,
        "total": heatmap.total,
        "counts": heatmap.counts.tolist(),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)

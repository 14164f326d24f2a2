"""Image perturbations: global Gaussian noise overlay and grid-slot patch injection.

The overlay blends seeded standard-normal noise into the whole frame,
scaled by the image's own pixel standard deviation. Patch injection
alpha-composites a small RGBA raster centered on one slot of a uniform
grid laid over the image at native resolution.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import kernels
from .model import BoundingBox, ImageRecord

DEFAULT_GRID_ROWS = 25
DEFAULT_GRID_COLS = 25


def compute_sigma(image: ImageRecord) -> float:
    """Population standard deviation over all width x height x 3 values."""
    return float(np.std(image.pixels.astype(np.float64)))


@dataclass(frozen=True)
class NoiseOverlayParams:
    """Noise level ``a`` in [0, 1] plus the generator seed."""

    noise_level: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.noise_level <= 1.0):
            raise ValueError(f"noise level outside [0, 1]: {self.noise_level}")


def overlay_preclamp(
    pixels: np.ndarray, noise_level: float, sigma: float, seed: int
) -> np.ndarray:
    """Blended float pixels before rounding/clamping (moment checks use this)."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(pixels.shape)
    return kernels.blend(pixels.astype(np.float64), noise, noise_level, sigma)


def global_overlay(image: ImageRecord, params: NoiseOverlayParams) -> ImageRecord:
    """Blend seeded Gaussian noise into the whole image.

    Per pixel and channel the output is ``(1 - a) * x + a * sigma * r`` with
    ``r`` i.i.d. standard normal, rounded half-to-even and clamped to
    [0, 255]. Annotations pass through unchanged; the result is bit-identical
    for identical (image, params).
    """
    sigma = compute_sigma(image)
    rng = np.random.default_rng(params.seed)
    noise = rng.standard_normal(image.pixels.shape)
    out = kernels.overlay_u8(
        image.pixels.astype(np.float64), noise, params.noise_level, sigma
    )
    out.flags.writeable = False  # fresh array; skip the defensive copy
    return image.with_pixels(out)


@dataclass(frozen=True)
class PatchSpec:
    """RGBA patch raster plus a brightness scale (1.0 = asset unmodified)."""

    rgba: np.ndarray
    brightness: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.rgba)
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValueError(f"patch must be HxWx4 uint8, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("patch must be at least 1x1")
        if not np.any(px[:, :, 3] == 255):
            raise ValueError("patch has no fully opaque pixel")
        if self.brightness < 0.0:
            raise ValueError(f"brightness scale must be >= 0: {self.brightness}")
        px = px.copy() if px.flags.writeable else px
        px.flags.writeable = False
        object.__setattr__(self, "rgba", px)

    @classmethod
    def from_file(cls, path, brightness: float = 1.0) -> "PatchSpec":
        with Image.open(path) as im:
            rgba = np.asarray(im.convert("RGBA"), dtype=np.uint8)
        return cls(rgba, brightness)

    @property
    def width(self) -> int:
        return self.rgba.shape[1]

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.rgba).tobytes())
        h.update(repr(self.brightness).encode())
        return h.hexdigest()

    def scaled_rgb(self) -> np.ndarray:
        """Patch RGB as float64 with the brightness scale applied, clamped."""
        rgb = self.rgba[:, :, :3].astype(np.float64) * self.brightness
        return np.minimum(rgb, 255.0)


@dataclass(frozen=True)
class GridSchedule:
    """Uniform rows x cols grid; slot (r, c) centers at ((c+.5)W/cols, (r+.5)H/rows)."""

    rows: int = DEFAULT_GRID_ROWS
    cols: int = DEFAULT_GRID_COLS

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid dims must be >= 1: {self.rows}x{self.cols}")

    @property
    def slot_count(self) -> int:
        return self.rows * self.cols

    def slot_center(self, row: int, col: int, width: int, height: int) -> tuple[float, float]:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"slot ({row}, {col}) outside {self.rows}x{self.cols} grid")
        return ((col + 0.5) * width / self.cols, (row + 0.5) * height / self.rows)

    def patch_box(
        self, row: int, col: int, width: int, height: int, patch_w: int, patch_h: int
    ) -> BoundingBox:
        """The slot's patch box clipped to the image; slot centers are always
        interior so the clipped box is never empty."""
        cx, cy = self.slot_center(row, col, width, height)
        box = BoundingBox.from_cxcywh(cx, cy, float(patch_w), float(patch_h))
        clipped = box.clip(width, height)
        assert clipped is not None
        return clipped


def enumerate_slots(
    width: int,
    height: int,
    grid: GridSchedule | None = None,
    patch_size: tuple[int, int] = (25, 25),
) -> list[tuple[int, int, BoundingBox]]:
    """All (row, col, clipped patch box) triples in row-major order."""
    grid = grid or GridSchedule()
    pw, ph = patch_size
    out = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            out.append((r, c, grid.patch_box(r, c, width, height, pw, ph)))
    return out


def _axis_span(start: float, size: int, limit: int) -> tuple[int, int, int]:
    """Pixel index range [i0, i1) whose centers fall in [start, start+size),
    clipped to [0, limit), plus the patch-raster offset of i0."""
    i0 = max(0, math.ceil(start - 0.5))
    i1 = min(limit, math.ceil(start + size - 0.5))
    offset = int(math.floor(i0 + 0.5 - start)) if i1 > i0 else 0
    return i0, i1, offset


def inject_patch(
    image: ImageRecord,
    patch: PatchSpec,
    slot: tuple[int, int],
    grid: GridSchedule | None = None,
) -> tuple[ImageRecord, BoundingBox]:
    """Alpha-composite the patch centered on a grid slot.

    A pixel is composited when its center lies inside the patch box; raster
    pixels map 1:1 onto image pixels (no resampling). Returns the perturbed
    record and the slot's clipped patch box. Pixels outside the patch mask
    are bit-identical to the input.
    """
    grid = grid or GridSchedule()
    row, col = slot
    cx, cy = grid.slot_center(row, col, image.width, image.height)
    x0 = cx - patch.width / 2.0
    y0 = cy - patch.height / 2.0

    j0, j1, cofs = _axis_span(x0, patch.width, image.width)
    i0, i1, rofs = _axis_span(y0, patch.height, image.height)
    clipped_box = grid.patch_box(row, col, image.width, image.height, patch.width, patch.height)

    if j1 <= j0 or i1 <= i0:
        return image.with_pixels(image.pixels), clipped_box

    n_rows = min(i1 - i0, patch.height - rofs)
    n_cols = min(j1 - j0, patch.width - cofs)
    i1 = i0 + n_rows
    j1 = j0 + n_cols

    alpha = patch.rgba[rofs : rofs + n_rows, cofs : cofs + n_cols, 3:4].astype(np.float64) / 255.0
    src = patch.scaled_rgb()[rofs : rofs + n_rows, cofs : cofs + n_cols]
    out = image.pixels.copy()
    dst = out[i0:i1, j0:j1].astype(np.float64)
    blended = np.rint(alpha * src + (1.0 - alpha) * dst)
    out[i0:i1, j0:j1] = np.clip(blended, 0.0, 255.0).astype(np.uint8)
    out.flags.writeable = False
    return image.with_pixels(out), clipped_box


def default_patch_path() -> str:
    """Path of the cumulus-cloud RGBA asset shipped with the package."""
    from importlib.resources import files

    return str(files("warp").joinpath("assets/cloud.png"))


def load_default_patch(brightness: float = 1.0) -> PatchSpec:
    return PatchSpec.from_file(default_patch_path(), brightness)

import numpy as np
import pytest

from warp.model import BoundingBox, GroundTruthAnnotation, ImageRecord


def make_image(image_id="img", width=64, height=64, value=0, annotations=(), pixels=None):
    if pixels is None:
        pixels = np.full((height, width, 3), value, dtype=np.uint8)
    return ImageRecord(
        image_id=image_id,
        pixels=pixels,
        annotations=tuple(annotations),
        source="synthetic",
    )


def gt(x0, y0, x1, y1, cls=1):
    return GroundTruthAnnotation(BoundingBox(x0, y0, x1, y1), cls)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def black_image():
    return make_image("black", 64, 64, 0)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warp.model import BoundingBox
from warp.perturb import (
    GridSchedule,
    NoiseOverlayParams,
    PatchSpec,
    compute_sigma,
    enumerate_slots,
    global_overlay,
    inject_patch,
    load_default_patch,
    overlay_preclamp,
)

from .conftest import make_image
from .oracles import two_pass_std


def opaque_patch(value=255, size=25):
    rgba = np.zeros((size, size, 4), dtype=np.uint8)
    rgba[:, :, :3] = value
    rgba[:, :, 3] = 255
    return PatchSpec(rgba)


class TestSigma:
    def test_constant_image(self):
        assert compute_sigma(make_image(value=128)) == 0.0

    def test_two_point_distribution(self):
        px = np.zeros((10, 10, 3), dtype=np.uint8)
        px[:5] = 255
        assert compute_sigma(make_image(pixels=px)) == pytest.approx(127.5, abs=1e-12)

    def test_matches_two_pass_oracle(self, rng):
        px = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        image = make_image(pixels=px)
        assert compute_sigma(image) == pytest.approx(two_pass_std(px), rel=1e-9)


class TestGlobalOverlay:
    def test_a_zero_is_identity(self, rng):
        px = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        image = make_image(pixels=px)
        out = global_overlay(image, NoiseOverlayParams(0.0, seed=7))
        assert np.array_equal(out.pixels, px)

    def test_constant_image_pure_dimming(self):
        image = make_image(value=128)
        out = global_overlay(image, NoiseOverlayParams(0.5, seed=3))
        assert np.all(out.pixels == 64)

    def test_seed_determinism(self, rng):
        px = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        image = make_image(pixels=px)
        p = NoiseOverlayParams(0.25, seed=99)
        assert np.array_equal(global_overlay(image, p).pixels,
                              global_overlay(image, p).pixels)
        other = global_overlay(image, NoiseOverlayParams(0.25, seed=100))
        assert not np.array_equal(global_overlay(image, p).pixels, other.pixels)

    def test_annotations_carried(self):
        ann = (BoundingBox(1, 1, 5, 5),)
        from warp.model import GroundTruthAnnotation

        image = make_image(annotations=[GroundTruthAnnotation(ann[0])], value=50)
        out = global_overlay(image, NoiseOverlayParams(0.3, seed=1))
        assert out.annotations == image.annotations
        assert out.image_id == image.image_id

    def test_preclamp_moment_oracle(self, rng):
        # sample moments of (1-a)x + a*sigma*r against the closed-form values
        px = rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
        image = make_image(pixels=px)
        a = 0.2
        sigma = compute_sigma(image)
        pre = overlay_preclamp(image.pixels, a, sigma, seed=5)
        n = pre.size
        se_mean = a * sigma / np.sqrt(n)
        assert abs(pre.mean() - (1 - a) * px.mean()) <= 3 * se_mean
        expected_var = (1 - a) ** 2 * np.var(px.astype(np.float64)) + (a * sigma) ** 2
        assert abs(np.var(pre) - expected_var) <= 0.05 * expected_var

    def test_rejects_bad_level(self):
        with pytest.raises(ValueError):
            NoiseOverlayParams(1.5)


class TestGridSchedule:
    def test_640_geometry(self):
        grid = GridSchedule()
        assert grid.slot_center(0, 0, 640, 640) == (12.8, 12.8)
        assert grid.slot_center(12, 12, 640, 640) == (320.0, 320.0)

    def test_enumerate_count_and_order(self):
        slots = enumerate_slots(640, 640)
        assert len(slots) == 625
        assert [s[:2] for s in slots[:3]] == [(0, 0), (0, 1), (0, 2)]
        assert slots[-1][:2] == (24, 24)

    def test_spacing_exact(self):
        grid = GridSchedule()
        centers = [grid.slot_center(0, c, 640, 480)[0] for c in range(25)]
        diffs = np.diff(centers)
        assert np.allclose(diffs, 640 / 25, atol=1e-12)
        rows = [grid.slot_center(r, 0, 640, 480)[1] for r in range(25)]
        assert np.allclose(np.diff(rows), 480 / 25, atol=1e-12)

    def test_unit_cells_on_25px_image(self):
        grid = GridSchedule()
        for c in range(25):
            assert grid.slot_center(0, c, 25, 25)[0] == pytest.approx((c + 0.5) * 1.0)

    def test_tiny_image_still_enumerates(self):
        slots = enumerate_slots(8, 8)
        assert len(slots) == 625
        for _r, _c, box in slots:
            assert 0 <= box.x_min < box.x_max <= 8

    def test_out_of_grid_slot_rejected(self):
        with pytest.raises(ValueError):
            GridSchedule().slot_center(25, 0, 640, 640)


class TestInjectPatch:
    def test_fully_transparent_patch_rejected(self):
        rgba = np.zeros((25, 25, 4), dtype=np.uint8)
        rgba[:, :, :3] = 255
        with pytest.raises(ValueError):
            PatchSpec(rgba)

    def test_transparent_region_leaves_pixels_untouched(self, black_image):
        # alpha is 0 everywhere except one opaque pixel; the box is still returned
        rgba = np.zeros((25, 25, 4), dtype=np.uint8)
        rgba[:, :, :3] = 255
        rgba[12, 12, 3] = 255
        patch = PatchSpec(rgba)
        out, box = inject_patch(black_image, patch, (5, 5))
        diff = np.argwhere((out.pixels != black_image.pixels).any(axis=2))
        assert len(diff) == 1
        assert box.clip(64, 64) is not None

    def test_center_slot_white_square(self):
        image = make_image("blk", 640, 640, 0)
        out, box = inject_patch(image, opaque_patch(), (12, 12))
        white = np.argwhere((out.pixels == 255).all(axis=2))
        assert len(white) == 625
        rows = white[:, 0]
        cols = white[:, 1]
        # block of 25x25 pixels whose centers sit inside [307.5, 332.5)
        assert rows.min() == 307 and rows.max() == 331
        assert cols.min() == 307 and cols.max() == 331
        assert box == BoundingBox(307.5, 307.5, 332.5, 332.5)

    def test_corner_slot_clipped_on_small_image(self, black_image):
        out, box = inject_patch(black_image, opaque_patch(), (0, 0))
        # 64px image: cell 2.56, center 1.28, half patch 12.5 -> box clipped at 0
        assert box.x_min == 0.0 and box.y_min == 0.0
        assert box.x_max == pytest.approx(1.28 + 12.5)
        painted = np.argwhere((out.pixels == 255).all(axis=2))
        assert 0 < len(painted) < 625
        assert painted[:, 0].max() == 13 and painted[:, 1].max() == 13

    def test_locality(self, rng):
        px = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
        image = make_image(pixels=px)
        out, box = inject_patch(image, opaque_patch(), (7, 11))
        changed = np.argwhere((out.pixels != px).any(axis=2))
        for r, c in changed:
            assert box.x_min <= c + 0.5 <= box.x_max
            assert box.y_min <= r + 0.5 <= box.y_max

    def test_annotations_unchanged(self):
        from warp.model import GroundTruthAnnotation

        image = make_image(annotations=[GroundTruthAnnotation(BoundingBox(1, 1, 9, 9))])
        out, _ = inject_patch(image, opaque_patch(), (3, 3))
        assert out.annotations == image.annotations

    def test_brightness_scale(self, black_image):
        patch = opaque_patch(value=100)
        dim = PatchSpec(patch.rgba, brightness=0.5)
        out, _ = inject_patch(black_image, dim, (12, 12))
        values = np.unique(out.pixels)
        assert set(values.tolist()) == {0, 50}

    def test_semi_transparent_composites_source_over(self, black_image):
        rgba = np.zeros((5, 5, 4), dtype=np.uint8)
        rgba[:, :, :3] = 200
        rgba[:, :, 3] = 128
        rgba[2, 2, 3] = 255
        patch = PatchSpec(rgba)
        out, _ = inject_patch(black_image, patch, (12, 12))
        values = set(np.unique(out.pixels).tolist())
        # 200*(128/255) rounds to 100; opaque center keeps 200
        assert values == {0, 100, 200}


class TestDefaultPatch:
    def test_loads_and_satisfies_invariants(self):
        patch = load_default_patch()
        assert patch.width == 25 and patch.height == 25
        assert np.any(patch.rgba[:, :, 3] == 255)


@settings(max_examples=25, deadline=None)
@given(
    width=st.integers(26, 200),
    height=st.integers(26, 200),
    row=st.integers(0, 24),
    col=st.integers(0, 24),
)
def test_patch_box_always_positive_area(width, height, row, col):
    box = GridSchedule().patch_box(row, col, width, height, 25, 25)
    assert box.x_max > box.x_min and box.y_max > box.y_min
    assert 0 <= box.x_min and box.x_max <= width

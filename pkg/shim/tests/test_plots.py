import csv
import json
from pathlib import Path

import numpy as np
import pytest

from warp_shim.plots import MissingSeriesError, render_plots


def build_run_dir(root: Path, with_sweep=True, with_map=True, with_heatmap=True):
    root.mkdir(parents=True, exist_ok=True)
    if with_sweep:
        with open(root / "global_sweep.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["a", "map_after", "loss_percent"])
            for i in range(50):
                a = i * 0.001
                writer.writerow([a, 1.0 - a, a * 100.0 / 0.05])
        (root / "global_sweep.json").write_text(
            json.dumps({"metadata": {"detector": "stub-detector"}})
        )
    rng = np.random.default_rng(1)
    if with_map:
        with open(root / "deception_map.csv", "w", newline="") as f:
            writer = csv.writer(f)
            for row in rng.integers(0, 5, (25, 25)):
                writer.writerow([int(v) for v in row])
    if with_heatmap:
        with open(root / "annotation_heatmap.csv", "w", newline="") as f:
            writer = csv.writer(f)
            for row in rng.integers(0, 30, (25, 25)):
                writer.writerow([int(v) for v in row])
    return root


class TestRenderPlots:
    def test_full_run_dir(self, tmp_path):
        run = build_run_dir(tmp_path / "run")
        written = render_plots(run)
        assert set(written) == {"loss_curve", "deception_map", "annotation_heatmap"}
        for path in written.values():
            assert path.is_file()
            assert path.stat().st_size > 0

    def test_custom_out_dir(self, tmp_path):
        run = build_run_dir(tmp_path / "run")
        out = tmp_path / "figures"
        written = render_plots(run, out)
        for path in written.values():
            assert path.parent == out

    def test_partial_run_renders_what_exists(self, tmp_path):
        run = build_run_dir(tmp_path / "run", with_sweep=False)
        written = render_plots(run)
        assert "loss_curve" not in written
        assert "deception_map" in written

    def test_empty_dir_names_expected_files(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(MissingSeriesError, match="global_sweep.csv"):
            render_plots(empty)

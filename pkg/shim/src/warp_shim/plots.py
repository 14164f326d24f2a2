"""Render a run directory's CSV series into plot images.

Three figures: the loss-vs-noise-level curve (one line per sweep CSV found),
the cumulative deception-map heatmap, and the annotation-position heatmap.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402 - backend must be set first
import numpy as np  # noqa: E402

LOSS_CURVE = "loss_curve.png"
DECEPTION_MAP = "deception_map.png"
ANNOTATION_HEATMAP = "annotation_heatmap.png"


class MissingSeriesError(FileNotFoundError):
    """A required CSV series is absent from the run directory."""


def _read_sweep_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    a = [float(r["a"]) for r in rows]
    loss = [float(r["loss_percent"]) for r in rows]
    return a, loss


def _read_matrix_csv(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [[float(v) for v in row] for row in csv.reader(f) if row]
    return np.array(rows)


def _detector_label(run_dir: Path, default: str) -> str:
    meta_path = run_dir / "global_sweep.json"
    if meta_path.is_file():
        try:
            meta = json.loads(meta_path.read_text()).get("metadata", {})
            return str(meta.get("detector", default))
        except json.JSONDecodeError:
            pass
    return default


def render_loss_curve(run_dirs, out_path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 5))
    plotted = 0
    missing = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        path = run_dir / "global_sweep.csv"
        if not path.is_file():
            missing.append(path)
            continue
        a, loss = _read_sweep_csv(path)
        ax.plot(a, loss, label=_detector_label(run_dir, run_dir.name))
        plotted += 1
    if plotted == 0:
        plt.close(fig)
        raise MissingSeriesError(
            "no sweep series found; expected " + ", ".join(str(p) for p in missing)
        )
    ax.set_xlabel("noise level")
    ax.set_ylabel("mAP percentage loss")
    ax.set_title("Global sanity check: noise overlay")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path


def _render_heatmap(matrix: np.ndarray, title: str, out_path: Path,
                    cbar_label: str) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="hot", interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("grid column")
    ax.set_ylabel("grid row")
    fig.colorbar(im, ax=ax, label=cbar_label)
    fig.savefig(out_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path


def render_plots(run_dir, out_dir=None) -> dict[str, Path]:
    """Render every available series; raise when none of the inputs exist.

    Returns {figure name: written path}. Individual missing series raise
    MissingSeriesError naming the expected file.
    """
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)

    expected = {
        "loss_curve": run_dir / "global_sweep.csv",
        "deception_map": run_dir / "deception_map.csv",
        "annotation_heatmap": run_dir / "annotation_heatmap.csv",
    }
    if not any(p.is_file() for p in expected.values()):
        raise MissingSeriesError(
            "run directory has no plottable series; expected "
            + ", ".join(str(p) for p in expected.values())
        )

    written: dict[str, Path] = {}
    if expected["loss_curve"].is_file():
        written["loss_curve"] = render_loss_curve([run_dir], out / LOSS_CURVE)
    if expected["deception_map"].is_file():
        matrix = _read_matrix_csv(expected["deception_map"])
        written["deception_map"] = _render_heatmap(
            matrix, "Cumulative deception map", out / DECEPTION_MAP, "deceptions"
        )
    if expected["annotation_heatmap"].is_file():
        matrix = _read_matrix_csv(expected["annotation_heatmap"])
        written["annotation_heatmap"] = _render_heatmap(
            matrix, "Annotation distribution", out / ANNOTATION_HEATMAP, "annotations"
        )
    return written

"""Command-line surface: baseline, global-sweep, local-sweep, augment, report.

Each run writes into one output directory: a copy of the effective config,
checkpoints, result JSON/CSV series, and (via ``warp report``) a markdown
summary. Reports embed the conventions that pin every ambiguous definition,
and contain no wall-clock data, so identical runs emit identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .augment import (
    AugmentationPlan,
    augment_cloud_patch,
    augment_crop2x2,
    augment_gaussian,
    augment_mosaic,
)
from .dataset import (
    AnnotationEntry,
    DatasetManifest,
    ImageEntry,
    ManifestError,
    annotation_heatmap,
    heatmap_to_csv,
    heatmap_to_json,
    load_image_records,
    load_manifest,
    save_manifest,
)
from .gateway import (
    DETECTOR_ENV_VAR,
    DetectorClient,
    ProtocolError,
    ResponseCache,
    TransportError,
    outcome_from_dict,
    outcome_to_dict,
)
from .metrics import build_robustness_report
from .model import WarpError
from .perturb import GridSchedule, PatchSpec, load_default_patch
from .sweeps import (
    CheckpointError,
    GlobalSweepConfig,
    LocalSweepConfig,
    compute_baseline,
    derive_seed,
    run_global_sweep,
    run_local_sweep,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

CONVENTIONS = {
    "ap_integration": "trapezoid over raw PR points with a recall-0 anchor",
    "loss_sign": "loss_percent is positive when precision drops; "
                 "signed_change_percent keeps the raw sign",
    "sigma": "population standard deviation over all pixels and channels",
    "seed_policy": "noise seed = sha256(run_seed, image_id, level_index)",
    "image_tp_rule": "image-level TP iff the detector reports at least one box",
    "heatmap_rule": "each annotation counts once, at its box-center cell",
    "compositing": "source-over alpha; a pixel is painted when its center "
                   "lies inside the patch box",
    "brightness_anchor": "brightness scale 1.0 leaves the patch asset unmodified",
}


class ConfigError(WarpError):
    """Bad run configuration."""


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=1)
        f.write("\n")


def _load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e


def _resolve_detector(args, config: dict) -> str:
    """Flag overrides config overrides environment."""
    if getattr(args, "detector", None):
        return args.detector
    if config.get("detector"):
        return str(config["detector"])
    env = os.environ.get(DETECTOR_ENV_VAR)
    if env:
        return env
    raise ConfigError(
        f"no detector given: set --detector, config key 'detector', or ${DETECTOR_ENV_VAR}"
    )


def _resolve_seed(args, config: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(config.get("seed", 0))


def _load_dataset(config: dict):
    ds = config.get("dataset")
    if not isinstance(ds, dict) or "manifest" not in ds:
        raise ConfigError("config needs dataset.manifest (and usually dataset.images_root)")
    manifest = load_manifest(ds["manifest"], split=str(ds.get("split", "test")))
    images_root = ds.get("images_root", Path(ds["manifest"]).parent)
    images = load_image_records(manifest, images_root)
    return manifest, images


def _load_patch(config: dict) -> PatchSpec:
    patch_cfg = config.get("patch", {})
    brightness = float(patch_cfg.get("brightness", 1.0))
    if patch_cfg.get("path"):
        return PatchSpec.from_file(patch_cfg["path"], brightness)
    return load_default_patch(brightness)


def _grid_from_config(config: dict) -> GridSchedule:
    grid_cfg = config.get("grid", {})
    return GridSchedule(int(grid_cfg.get("rows", 25)), int(grid_cfg.get("cols", 25)))


def _prepare_outdir(args, config: dict) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config)
    return out


def _metadata(client, seed: int, extra: dict | None = None) -> dict:
    md = {
        "detector": client.handle.name or client.handle.transport,
        "detector_conf_threshold": client.handle.conf_threshold,
        "seed": seed,
        "conventions": CONVENTIONS,
    }
    md.update(extra or {})
    return md


def _client(args, config: dict) -> tuple[DetectorClient, Path | None]:
    spec = _resolve_detector(args, config)
    timeout = float(config.get("detector_timeout", 30.0))
    client = DetectorClient.from_spec(spec, timeout=timeout)
    transcript = config.get("transcript") or os.environ.get("WARP_TRANSCRIPT")
    if transcript:
        client.record_transcript = True
    return client, (Path(transcript) if transcript else None)


def _finish(client: DetectorClient, transcript_path: Path | None) -> None:
    if transcript_path is not None and client.transcript:
        client.flush_transcript(transcript_path)
    client.close()


# -- commands ------------------------------------------------------------------

def cmd_baseline(args) -> int:
    config = _load_config(args.config)
    out = _prepare_outdir(args, config)
    seed = _resolve_seed(args, config)
    manifest, images = _load_dataset(config)

    heatmap = annotation_heatmap(manifest)
    heatmap_to_csv(heatmap, out / "annotation_heatmap.csv")
    heatmap_to_json(heatmap, out / "annotation_heatmap.json")

    client, transcript_path = _client(args, config)
    try:
        cache = ResponseCache(out / "cache")
        outcomes, scores = compute_baseline(images, client, cache)
    finally:
        _finish(client, transcript_path)

    payload = {
        "map50": scores.map50,
        "map50_95": scores.map50_95,
        "per_threshold": {f"{t:.2f}": v for t, v in scores.per_threshold.items()},
        "excluded_classes": list(scores.excluded_classes),
        "outcomes": {i: outcome_to_dict(o) for i, o in sorted(outcomes.items())},
        "tp_count": sum(1 for o in outcomes.values() if o.original_class == "TP"),
        "fn_count": sum(1 for o in outcomes.values() if o.original_class == "FN"),
        "metadata": _metadata(client, seed, {"dataset": manifest.name,
                                             "split": manifest.split}),
    }
    _write_json(out / "baseline.json", payload)
    print(f"baseline: mAP50={scores.map50:.4f} mAP50-95={scores.map50_95:.4f} "
          f"TP={payload['tp_count']} FN={payload['fn_count']}")
    return EXIT_OK


def _require_baseline(out: Path) -> dict:
    path = out / "baseline.json"
    if not path.is_file():
        raise ConfigError(
            f"missing {path}; run `warp baseline --config <cfg> --out {out}` first"
        )
    return json.loads(path.read_text())


def cmd_global_sweep(args) -> int:
    config = _load_config(args.config)
    out = _prepare_outdir(args, config)
    seed = _resolve_seed(args, config)
    _, images = _load_dataset(config)
    baseline = _require_baseline(out)

    if float(baseline["map50_95"]) <= 0.0:
        raise ConfigError(
            "baseline mAP50-95 is zero, so the percentage loss is undefined; "
            "check the detector and dataset, then rerun `warp baseline`"
        )

    sweep_cfg = config.get("sweep", {})
    gcfg = GlobalSweepConfig(
        a_start=float(sweep_cfg.get("a_start", 0.0)),
        a_end=float(sweep_cfg.get("a_end", 0.4)),
        a_step=float(sweep_cfg.get("a_step", 0.001)),
        seed=seed,
        repeats=int(sweep_cfg.get("repeats", 1)),
    )

    client, transcript_path = _client(args, config)
    try:
        cache = ResponseCache(out / "cache")
        outcome = run_global_sweep(
            images,
            client,
            gcfg,
            map_original=float(baseline["map50_95"]),
            cache=cache,
            checkpoint_path=out / "checkpoint_global.json",
        )
    finally:
        _finish(client, transcript_path)

    with open(out / "global_sweep.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["a", "map_after", "loss_percent"])
        for p in outcome.points:
            writer.writerow([repr(p.noise_level), repr(p.map_after), repr(p.loss_percent)])

    payload = {
        "map_original": outcome.map_original,
        "points": [p.to_dict() for p in outcome.points],
        "unevaluated_levels": list(outcome.unevaluated_levels),
        "config": gcfg.to_dict(),
        "metadata": _metadata(client, seed),
    }
    _write_json(out / "global_sweep.json", payload)
    print(f"global sweep: {len(outcome.points)} levels, "
          f"{len(outcome.unevaluated_levels)} unevaluated")
    return EXIT_OK


def cmd_local_sweep(args) -> int:
    config = _load_config(args.config)
    out = _prepare_outdir(args, config)
    seed = _resolve_seed(args, config)
    _, images = _load_dataset(config)
    baseline_payload = _require_baseline(out)
    baseline = {i: outcome_from_dict(o) for i, o in baseline_payload["outcomes"].items()}

    grid = _grid_from_config(config)
    patch = _load_patch(config)
    lcfg = LocalSweepConfig(grid=grid, seed=seed)

    client, transcript_path = _client(args, config)
    try:
        cache = ResponseCache(out / "cache")
        results = run_local_sweep(
            images,
            client,
            patch,
            config=lcfg,
            baseline=baseline,
            cache=cache,
            checkpoint_path=out / "checkpoint_local.json",
        )
    finally:
        _finish(client, transcript_path)

    report = build_robustness_report(
        results,
        rows=grid.rows,
        cols=grid.cols,
        metadata=_metadata(
            client,
            seed,
            {"patch_digest": patch.digest(), "grid": [grid.rows, grid.cols],
             "iou_threshold": lcfg.iou_threshold},
        ),
    )

    slots = grid.slot_count
    with open(out / "gamma_frequency.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["gamma", "slot_deceptions", "image_count"])
        for gamma, count in report.gamma_table.items():
            writer.writerow([repr(gamma), int(round(gamma * slots)), count])
    with open(out / "deception_map.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        for row in report.deception_map.counts:
            writer.writerow([int(v) for v in row])

    share = report.deception_map.middle_horizontal_share
    payload = {
        "expected_alpha": report.expected_alpha,
        "expected_beta": report.expected_beta,
        "expected_gamma": report.expected_gamma,
        "tp_count": report.tp_count,
        "fn_count": report.fn_count,
        "gamma_table": [
            {"gamma": g, "slot_deceptions": int(round(g * slots)), "count": c}
            for g, c in report.gamma_table.items()
        ],
        "deception_map": report.deception_map.counts.tolist(),
        "middle_horizontal_share": share,
        "middle_rows": list(report.deception_map.middle_rows),
        "unevaluated_cells": report.unevaluated_cells,
        "per_image": [
            {
                "image_id": r.image_id,
                "original_class": r.original_class,
                "alpha": r.alpha,
                "beta": r.beta,
                "gamma": r.gamma,
                "deceptions": r.deception_count,
                "unevaluated": list(r.unevaluated),
            }
            for r in results
        ],
        "metadata": report.metadata,
    }
    _write_json(out / "local_report.json", payload)
    share_text = "undefined" if share is None else f"{share * 100:.2f}%"
    print(
        f"local sweep: E[alpha]={report.expected_alpha:.3e} "
        f"E[beta]={report.expected_beta:.3e} E[gamma]={report.expected_gamma:.3e} "
        f"middle-horizontal share={share_text}"
    )
    return EXIT_OK


def _safe_name(image_id: str) -> str:
    return "".join(c if (c.isalnum() or c in "-_.") else "_" for c in image_id)


def cmd_augment(args) -> int:
    config = _load_config(args.config)
    out = _prepare_outdir(args, config)
    seed = _resolve_seed(args, config)
    manifest, images = _load_dataset(config)

    aug_cfg = dict(config.get("augment", {}))
    if args.variant:
        aug_cfg["variant"] = args.variant
    if args.noise_range:
        aug_cfg["noise_range"] = args.noise_range
    if args.zone:
        aug_cfg["zone"] = args.zone
    if args.target_size:
        aug_cfg["target_size"] = args.target_size
    if args.per_image is not None:
        aug_cfg["per_image"] = args.per_image
    if "variant" not in aug_cfg:
        raise ConfigError("augment needs a variant (positional arg or config augment.variant)")

    plan = AugmentationPlan(
        variant=str(aug_cfg["variant"]),
        noise_range=tuple(aug_cfg.get("noise_range", (0.1, 0.4))),
        zone=str(aug_cfg.get("zone", "middle_horizontal")),
        target_size=tuple(aug_cfg.get("target_size", (640, 640))),
        seed=seed,
        per_image=int(aug_cfg.get("per_image", 1)),
    )

    records = []
    if plan.variant == "gaussian_overlay":
        for image in images:
            for k in range(plan.per_image):
                records.append(
                    augment_gaussian(image, plan.noise_range,
                                     derive_seed(seed, image.image_id, k))
                )
    elif plan.variant == "cloud_patch":
        patch = _load_patch(config)
        for image in images:
            for k in range(plan.per_image):
                records.append(
                    augment_cloud_patch(image, patch, plan.zone,
                                        derive_seed(seed, image.image_id, k))
                )
    elif plan.variant == "mosaic":
        if len(images) < 4:
            raise ConfigError("mosaic needs at least 4 images in the dataset")
        rng = np.random.default_rng(seed)
        for k in range(plan.per_image):
            order = rng.permutation(len(images))
            for g in range(len(images) // 4):
                group = [images[i] for i in order[4 * g : 4 * g + 4]]
                records.append(
                    augment_mosaic(group, plan.target_size,
                                   derive_seed(seed, group[0].image_id, k))
                )
    else:  # crop2x2
        for image in images:
            records.extend(augment_crop2x2(image, plan.target_size))

    images_dir = out / "images"
    images_dir.mkdir(exist_ok=True)
    entries = []
    annotations = []
    provenance = {}
    for rec in records:
        name = f"{_safe_name(rec.image.image_id)}.png"
        PILImage.fromarray(rec.image.pixels, mode="RGB").save(images_dir / name)
        entries.append(
            ImageEntry(
                image_id=rec.image.image_id,
                file_name=f"images/{name}",
                width=rec.image.width,
                height=rec.image.height,
            )
        )
        for ann in rec.image.annotations:
            annotations.append(
                AnnotationEntry(rec.image.image_id, ann.box, ann.class_label)
            )
        provenance[rec.image.image_id] = rec.provenance

    out_manifest = DatasetManifest(
        name=f"{manifest.name}-{plan.variant}",
        split=manifest.split,
        images=tuple(entries),
        annotations=tuple(annotations),
        categories=dict(manifest.categories) or {1: "smoke"},
    )
    save_manifest(out_manifest, out / "manifest.json")
    _write_json(out / "provenance.json", provenance)
    print(f"augment {plan.variant}: wrote {len(records)} images, "
          f"{len(annotations)} annotations")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.run:
        run_dir = Path(args.run)
    elif args.config:
        run_dir = Path(_load_config(args.config).get("run_dir", ""))
    else:
        raise ConfigError("report needs --run <dir> or --config with a run_dir key")
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")

    artifacts = {
        name: run_dir / f"{name}.json"
        for name in ("baseline", "global_sweep", "local_report")
    }
    present = {k: p for k, p in artifacts.items() if p.is_file()}
    if not present:
        raise ConfigError(
            "no run artifacts found; expected at least one of "
            + ", ".join(str(p) for p in artifacts.values())
        )

    lines = ["# Run summary", ""]
    if "baseline" in present:
        b = json.loads(present["baseline"].read_text())
        lines += [
            "## Baseline",
            "",
            f"- detector: {b['metadata']['detector']}",
            f"- mAP50: {b['map50']:.6f}",
            f"- mAP50-95: {b['map50_95']:.6f}",
            f"- image-level TP: {b['tp_count']}, FN: {b['fn_count']}",
            "",
        ]
    if "global_sweep" in present:
        g = json.loads(present["global_sweep"].read_text())
        pts = g["points"]
        lines += [
            "## Global sanity check (noise overlay)",
            "",
            f"- levels evaluated: {len(pts)}",
            f"- unevaluated levels: {len(g['unevaluated_levels'])}",
        ]
        if pts:
            last = pts[-1]
            lines.append(
                f"- terminal loss at a={last['noise_level']}: "
                f"{last['loss_percent']:.2f}%"
            )
        lines.append("")
    if "local_report" in present:
        r = json.loads(present["local_report"].read_text())
        share = r["middle_horizontal_share"]
        share_text = "undefined" if share is None else f"{share * 100:.2f}%"
        lines += [
            "## Local deception test (patch injection)",
            "",
            f"- E[alpha]: {r['expected_alpha']:.6e}",
            f"- E[beta]: {r['expected_beta']:.6e}",
            f"- E[gamma]: {r['expected_gamma']:.6e}",
            f"- TP: {r['tp_count']}, FN: {r['fn_count']}",
            f"- middle-horizontal deception share: {share_text}",
            f"- unevaluated cells: {r['unevaluated_cells']}",
            "- gamma frequency: "
            + ", ".join(f"{e['gamma']:.4f}x{e['count']}" for e in r["gamma_table"]),
            "",
        ]
    meta_source = next(iter(present.values()))
    meta = json.loads(meta_source.read_text()).get("metadata", {})
    lines += ["## Conventions", ""]
    for key, value in sorted(meta.get("conventions", CONVENTIONS).items()):
        lines.append(f"- {key}: {value}")
    if "seed" in meta:
        lines.append(f"- run seed: {meta['seed']}")
    lines.append("")

    out_path = Path(args.out) / "summary.md" if args.out else run_dir / "summary.md"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines), encoding="utf-8")
    print(f"wrote {out_path}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warp",
        description="Adversarial robustness harness for image-based detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="run config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="run seed override")
        p.add_argument("--detector", default=None,
                       help="detector: command line, http(s) URL, or scripted:<rules.json>")

    p = sub.add_parser("baseline", help="clean-image outcomes, mAP, annotation heatmap")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("global-sweep", help="mAP loss across noise levels")
    common(p)
    p.set_defaults(func=cmd_global_sweep)

    p = sub.add_parser("local-sweep", help="grid patch injection sweep")
    common(p)
    p.set_defaults(func=cmd_local_sweep)

    p = sub.add_parser("augment", help="emit an augmented dataset variant")
    common(p)
    p.add_argument("variant", nargs="?", default=None,
                   choices=("gaussian_overlay", "cloud_patch", "mosaic", "crop2x2"),
                   help="augmentation variant (may instead come from config)")
    p.add_argument("--noise-range", nargs=2, type=float, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--zone", choices=("middle_horizontal", "sky_upper"), default=None)
    p.add_argument("--target-size", nargs=2, type=int, default=None,
                   metavar=("W", "H"))
    p.add_argument("--per-image", type=int, default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--run", default=None, help="run directory to summarize")
    p.add_argument("--config", default=None, help="config JSON with run_dir")
    p.add_argument("--out", default=None, help="directory for summary.md")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ManifestError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, ProtocolError, CheckpointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except WarpError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

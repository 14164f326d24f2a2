"""Experiment orchestration: the global noise-level sweep and the 625-slot
local injection sweep, with checkpointing and resume.

Both sweeps are deterministic for scripted detectors and a fixed run seed:
noise seeds derive from sha256(run seed, image id, level index), results
reduce in fixed image order, and checkpoints store finished work so a resumed
run reproduces an uninterrupted one bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .gateway import DetectorClient, ProtocolError, ResponseCache, TransportError, \
    cached_detect, image_digest
from .metrics import GridSweepResult, iou, map_percentage_loss, map_scores
from .model import WarpError
from .perturb import GridSchedule, NoiseOverlayParams, PatchSpec, global_overlay, \
    inject_patch

DEFAULT_A_START = 0.0
DEFAULT_A_END = 0.4
DEFAULT_A_STEP = 0.001


class CheckpointError(WarpError):
    """Checkpoint incompatible with the requested run."""


def derive_seed(run_seed: int, image_id: str, level_index: int) -> int:
    """Stable per-(image, level) noise seed; independent of process hashing."""
    digest = hashlib.sha256(f"{run_seed}:{image_id}:{level_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class GlobalSweepConfig:
    a_start: float = DEFAULT_A_START
    a_end: float = DEFAULT_A_END
    a_step: float = DEFAULT_A_STEP
    seed: int = 0
    repeats: int = 1  # noise realizations per (image, level); mAP averaged

    def __post_init__(self):
        if self.a_step <= 0:
            raise ValueError(f"a_step must be positive: {self.a_step}")
        if self.a_start > self.a_end:
            raise ValueError(f"a_start {self.a_start} exceeds a_end {self.a_end}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1: {self.repeats}")

    def levels(self) -> list[float]:
        """Inclusive endpoints: the default 0.0..0.4 by 0.001 gives 401 levels."""
        n = int(round((self.a_end - self.a_start) / self.a_step)) + 1
        out = []
        for i in range(n):
            a = round(self.a_start + i * self.a_step, 9)
            if a > self.a_end + 1e-12:
                break
            out.append(a)
        return out

    def to_dict(self) -> dict:
        return {
            "a_start": self.a_start,
            "a_end": self.a_end,
            "a_step": self.a_step,
            "seed": self.seed,
            "repeats": self.repeats,
        }


@dataclass(frozen=True)
class LocalSweepConfig:
    grid: GridSchedule = field(default_factory=GridSchedule)
    iou_threshold: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "grid_rows": self.grid.rows,
            "grid_cols": self.grid.cols,
            "iou_threshold": self.iou_threshold,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SweepPoint:
    noise_level: float
    map_original: float
    map_after: float

    @property
    def loss_percent(self) -> float:
        return map_percentage_loss(self.map_original, self.map_after)

    @property
    def signed_change_percent(self) -> float:
        """Relative change as printed by the loss formula before the sign
        convention flip; negative when precision drops."""
        return -self.loss_percent

    def to_dict(self) -> dict:
        return {
            "noise_level": self.noise_level,
            "map_original": self.map_original,
            "map_after": self.map_after,
            "loss_percent": self.loss_percent,
            "signed_change_percent": self.signed_change_percent,
        }


def dataset_fingerprint(images) -> str:
    h = hashlib.sha256()
    for image in images:
        h.update(image.image_id.encode())
        h.update(image_digest(image).encode())
    return h.hexdigest()


def _run_digest(kind: str, config_dict: dict, images, detector_name: str,
                extra: str = "") -> str:
    payload = json.dumps(
        {
            "kind": kind,
            "config": config_dict,
            "dataset": dataset_fingerprint(images),
            "detector": detector_name,
            "extra": extra,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


class Checkpoint:
    """Atomic JSON checkpoint: config digest plus completed work and results."""

    def __init__(self, path, digest: str):
        self.path = Path(path) if path is not None else None
        self.digest = digest
        self.state: dict = {"config_digest": digest, "completed": {}}

    def load(self) -> bool:
        """Load existing state; False when starting fresh."""
        if self.path is None or not self.path.is_file():
            return False
        try:
            raw = json.loads(self.path.read_text())
        except json.JSONDecodeError as e:
            raise CheckpointError(f"checkpoint {self.path} is corrupt: {e}") from e
        if raw.get("config_digest") != self.digest:
            raise CheckpointError(
                "checkpoint was written by a different run configuration; "
                "delete it or start a fresh output directory"
            )
        self.state = raw
        return True

    def flush(self) -> None:
        if self.path is None:
            return
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.state, sort_keys=True))
        tmp.replace(self.path)


def baseline_outcomes(images, client: DetectorClient, cache: ResponseCache | None = None):
    """Clean-image outcomes keyed by image id (no metric computation)."""
    cache = cache if cache is not None else ResponseCache()
    return {image.image_id: cached_detect(client, image, cache) for image in images}


def compute_baseline(images, client: DetectorClient, cache: ResponseCache | None = None):
    """Clean-image outcomes and the resulting mAP scores.

    Returns (outcomes keyed by image id, MAPScores).
    """
    outcomes = baseline_outcomes(images, client, cache)
    scores = map_scores(
        {i: list(o.detections) for i, o in outcomes.items()},
        {im.image_id: list(im.annotations) for im in images},
    )
    return outcomes, scores


@dataclass(frozen=True)
class GlobalSweepOutcome:
    points: tuple[SweepPoint, ...]
    unevaluated_levels: tuple[float, ...]
    map_original: float


def run_global_sweep(
    images,
    client: DetectorClient,
    config: GlobalSweepConfig,
    map_original: float | None = None,
    cache: ResponseCache | None = None,
    checkpoint_path=None,
    progress=None,
) -> GlobalSweepOutcome:
    """Evaluate mAP loss at every noise level.

    Each (image, level) pair gets a fresh seeded noise field. A detector
    failure marks the level unevaluated and the sweep continues.
    """
    images = list(images)
    if not images:
        raise ValueError("global sweep needs at least one image")
    cache = cache if cache is not None else ResponseCache()
    gts = {im.image_id: list(im.annotations) for im in images}

    if map_original is None:
        _, baseline_scores = compute_baseline(images, client, cache)
        map_original = baseline_scores.map50_95
    if map_original <= 0.0:
        raise ValueError(
            "baseline mAP50-95 is zero; the percentage loss is undefined, "
            "so the global sweep cannot run (check detector and dataset)"
        )

    digest = _run_digest(
        "global", config.to_dict(), images, client.handle.name or client.handle.transport
    )
    checkpoint = Checkpoint(checkpoint_path, digest)
    checkpoint.load()
    done: dict = checkpoint.state["completed"]

    points: list[SweepPoint] = []
    unevaluated: list[float] = []
    for index, level in enumerate(config.levels()):
        key = str(index)
        if key in done:
            entry = done[key]
            if entry.get("unevaluated"):
                unevaluated.append(level)
            else:
                points.append(SweepPoint(level, map_original, entry["map_after"]))
            continue
        try:
            rep_maps = []
            for rep in range(config.repeats):
                detections = {}
                for image in images:
                    params = NoiseOverlayParams(
                        noise_level=level,
                        seed=derive_seed(
                            config.seed, image.image_id,
                            index * config.repeats + rep,
                        ),
                    )
                    perturbed = global_overlay(image, params)
                    outcome = cached_detect(client, perturbed, cache)
                    detections[image.image_id] = list(outcome.detections)
                rep_maps.append(map_scores(detections, gts).map50_95)
            map_after = sum(rep_maps) / len(rep_maps)
        except (TransportError, ProtocolError):
            unevaluated.append(level)
            done[key] = {"unevaluated": True}
            checkpoint.flush()
            continue
        points.append(SweepPoint(level, map_original, map_after))
        done[key] = {"map_after": map_after}
        checkpoint.flush()
        if progress is not None:
            progress(index, level)
    return GlobalSweepOutcome(tuple(points), tuple(unevaluated), map_original)


def _result_to_dict(result: GridSweepResult) -> dict:
    return {
        "image_id": result.image_id,
        "original_class": result.original_class,
        "flipped": [int(v) for v in result.flipped],
        "deceived": [int(v) for v in result.deceived],
        "unevaluated": list(result.unevaluated),
    }


def _result_from_dict(raw: dict) -> GridSweepResult:
    return GridSweepResult(
        image_id=raw["image_id"],
        original_class=raw["original_class"],
        flipped=tuple(bool(v) for v in raw["flipped"]),
        deceived=tuple(bool(v) for v in raw["deceived"]),
        unevaluated=tuple(raw["unevaluated"]),
    )


def run_local_sweep(
    images,
    client: DetectorClient,
    patch: PatchSpec,
    config: LocalSweepConfig | None = None,
    baseline=None,
    cache: ResponseCache | None = None,
    checkpoint_path=None,
    progress=None,
) -> list[GridSweepResult]:
    """Inject the patch at every grid slot of every image and record flips
    and deceptions against the slot's clipped patch box.

    Failed detector calls leave their slot unevaluated: indicators stay
    False and the slot index is reported, the 625 denominator is unchanged.
    """
    images = list(images)
    if not images:
        raise ValueError("local sweep needs at least one image")
    config = config or LocalSweepConfig()
    cache = cache if cache is not None else ResponseCache()

    if baseline is None:
        baseline = baseline_outcomes(images, client, cache)

    digest = _run_digest(
        "local",
        config.to_dict(),
        images,
        client.handle.name or client.handle.transport,
        extra=patch.digest(),
    )
    checkpoint = Checkpoint(checkpoint_path, digest)
    checkpoint.load()
    done: dict = checkpoint.state["completed"]

    missing = [im.image_id for im in images if im.image_id not in baseline]
    if missing:
        raise ValueError(
            f"baseline has no outcome for {missing[:5]}; rerun the baseline "
            "against this dataset"
        )

    results: list[GridSweepResult] = []
    for image in images:
        if image.image_id in done:
            results.append(_result_from_dict(done[image.image_id]))
            continue
        base_class = baseline[image.image_id].original_class
        flipped: list[bool] = []
        deceived: list[bool] = []
        unevaluated: list[int] = []
        for slot_index in range(config.grid.slot_count):
            row, col = divmod(slot_index, config.grid.cols)
            perturbed, patch_box = inject_patch(image, patch, (row, col), config.grid)
            try:
                outcome = cached_detect(client, perturbed, cache)
            except (TransportError, ProtocolError):
                flipped.append(False)
                deceived.append(False)
                unevaluated.append(slot_index)
                continue
            flipped.append(outcome.original_class != base_class)
            deceived.append(
                any(
                    iou(d.box, patch_box) >= config.iou_threshold
                    for d in outcome.detections
                )
            )
        result = GridSweepResult(
            image_id=image.image_id,
            original_class=base_class,
            flipped=tuple(flipped),
            deceived=tuple(deceived),
            unevaluated=tuple(unevaluated),
        )
        results.append(result)
        done[image.image_id] = _result_to_dict(result)
        checkpoint.flush()
        if progress is not None:
            progress(image.image_id)
    return results

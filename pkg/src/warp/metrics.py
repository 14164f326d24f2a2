"""Detection metrics: IoU, PR curves, AP/mAP, precision loss, flip and deception rates.

AP integrates the raw precision-recall points with the trapezoid rule plus a
recall-0 anchor carrying the first precision value (no interpolation to a
fixed grid). Matching is greedy in descending confidence: each detection takes
the unmatched same-class ground truth with the highest IoU at or above the
threshold, ties broken by lower ground-truth index.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import FN, TP, BoundingBox, GroundTruthAnnotation

MAP_50_95_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 when disjoint."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.width * a.height + b.width * b.height - inter
    return inter / union


def iou_many(boxes_a, boxes_b) -> np.ndarray:
    """Pairwise IoU matrix for two box sequences."""
    if not boxes_a or not boxes_b:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = np.array([b.as_tuple() for b in boxes_a], dtype=np.float64)
    b = np.array([b.as_tuple() for b in boxes_b], dtype=np.float64)
    return kernels.iou_matrix(a, b)


@dataclass(frozen=True)
class PRCurve:
    """(recall, precision) per ranking prefix, plus the ground-truth count."""

    points: tuple[tuple[float, float], ...]
    n_ground_truth: int

    def __post_init__(self):
        recalls = [r for r, _ in self.points]
        if any(r2 < r1 for r1, r2 in zip(recalls, recalls[1:])):
            raise ValueError("recall must be non-decreasing along the curve")


@dataclass(frozen=True)
class APResult:
    value: float
    iou_threshold: float
    class_label: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError(f"AP outside [0, 1]: {self.value}")


def _match_ranked(ranked, gts_by_image, iou_threshold):
    """Greedy TP/FP flags for pooled detections ranked by confidence.

    ranked: sequence of (image_id, Detection); gts_by_image: image_id -> list
    of boxes. Each ground truth matches at most once.
    """
    matched: dict[str, set[int]] = defaultdict(set)
    flags = []
    for image_id, det in ranked:
        gts = gts_by_image.get(image_id, [])
        best_iou = 0.0
        best_idx = -1
        for idx, gt_box in enumerate(gts):
            if idx in matched[image_id]:
                continue
            v = iou(det.box, gt_box)
            if v >= iou_threshold and v > best_iou:
                best_iou = v
                best_idx = idx
        if best_idx >= 0:
            matched[image_id].add(best_idx)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _rank(pooled):
    """Stable descending-confidence order over (image_id, Detection) pairs."""
    return sorted(enumerate(pooled), key=lambda t: (-t[1][1].confidence, t[0]))


def _pr_points(pooled, gts_by_image, iou_threshold):
    ranked = [pair for _, pair in _rank(pooled)]
    n_gt = sum(len(v) for v in gts_by_image.values())
    flags = _match_ranked(ranked, gts_by_image, iou_threshold)
    points = []
    tp = 0
    for k, flag in enumerate(flags, start=1):
        tp += int(flag)
        precision = tp / k
        recall = tp / n_gt if n_gt > 0 else 0.0
        points.append((recall, precision))
    return points, n_gt


def pr_curve(detections, ground_truths, iou_threshold: float) -> PRCurve:
    """PR curve for one class over a single detection pool.

    ``detections`` and ``ground_truths`` may be plain sequences (one image) or
    sequences of (image_id, item) pairs for a multi-image pool.
    """
    pooled = [d if isinstance(d, tuple) else ("", d) for d in detections]
    gts_by_image: dict[str, list[BoundingBox]] = defaultdict(list)
    for g in ground_truths:
        image_id, gt = g if isinstance(g, tuple) else ("", g)
        gts_by_image[image_id].append(gt.box if isinstance(gt, GroundTruthAnnotation) else gt)
    points, n_gt = _pr_points(pooled, dict(gts_by_image), iou_threshold)
    return PRCurve(tuple(points), n_gt)


def average_precision(curve: PRCurve, iou_threshold: float = 0.5,
                      class_label: int | None = None) -> APResult:
    """Trapezoid integral of precision over recall with a recall-0 anchor."""
    if not curve.points:
        return APResult(0.0, iou_threshold, class_label)
    pts = [(0.0, curve.points[0][1])] + list(curve.points)
    area = 0.0
    for (r1, p1), (r2, p2) in zip(pts, pts[1:]):
        area += (r2 - r1) * (p1 + p2) / 2.0
    return APResult(area, iou_threshold, class_label)


@dataclass(frozen=True)
class MAPScores:
    """mAP50, mAP50-95 and the per-class/per-threshold AP breakdown."""

    map50: float
    map50_95: float
    per_threshold: dict[float, float] = field(default_factory=dict)
    per_class: dict[int, dict[float, float]] = field(default_factory=dict)
    excluded_classes: tuple[int, ...] = ()


def map_scores(detections_by_image, gts_by_image, thresholds=None) -> MAPScores:
    """mAP over classes and IoU thresholds for a whole image set.

    detections_by_image: image_id -> sequence of Detection.
    gts_by_image: image_id -> sequence of GroundTruthAnnotation.
    Classes with no ground truth anywhere are excluded from the class mean
    and reported in ``excluded_classes``.
    """
    thresholds = tuple(thresholds) if thresholds is not None else MAP_50_95_THRESHOLDS
    gt_classes = sorted({g.class_label for gts in gts_by_image.values() for g in gts})
    det_classes = {d.class_label for dets in detections_by_image.values() for d in dets}
    excluded = tuple(sorted(det_classes - set(gt_classes)))
    if not gt_classes:
        raise ValueError("no ground-truth annotations in the evaluation set")

    per_class: dict[int, dict[float, float]] = {}
    for cls in gt_classes:
        pooled = [
            (image_id, d)
            for image_id, dets in sorted(detections_by_image.items())
            for d in dets
            if d.class_label == cls
        ]
        cls_gts = {
            image_id: [g.box for g in gts if g.class_label == cls]
            for image_id, gts in gts_by_image.items()
        }
        per_class[cls] = {}
        for thr in thresholds:
            points, n_gt = _pr_points(pooled, cls_gts, thr)
            ap = average_precision(PRCurve(tuple(points), n_gt), thr, cls)
            per_class[cls][thr] = ap.value

    per_threshold = {
        thr: sum(per_class[c][thr] for c in gt_classes) / len(gt_classes)
        for thr in thresholds
    }
    if 0.5 not in per_threshold:
        ap50 = []
        for cls in gt_classes:
            pooled = [
                (image_id, d)
                for image_id, dets in sorted(detections_by_image.items())
                for d in dets
                if d.class_label == cls
            ]
            cls_gts = {
                image_id: [g.box for g in gts if g.class_label == cls]
                for image_id, gts in gts_by_image.items()
            }
            points, n_gt = _pr_points(pooled, cls_gts, 0.5)
            ap50.append(average_precision(PRCurve(tuple(points), n_gt), 0.5, cls).value)
        map50 = sum(ap50) / len(gt_classes)
    else:
        map50 = per_threshold[0.5]
    map50_95 = sum(per_threshold.values()) / len(per_threshold)
    return MAPScores(map50, map50_95, per_threshold, per_class, excluded)


def map_percentage_loss(map_original: float, map_after: float) -> float:
    """Relative precision loss in percent, positive when precision drops.

    The signed relative change ``(after - original) / original * 100`` is the
    negation of this value; reports store both.
    """
    if map_original <= 0.0:
        raise ValueError("mAP percentage loss undefined for mAP_original <= 0")
    return (map_original - map_after) / map_original * 100.0


@dataclass(frozen=True)
class GridSweepResult:
    """Per-image outcome of the 625-slot injection sweep.

    ``flipped`` / ``deceived`` are row-major per-slot indicator tuples;
    ``unevaluated`` marks slots whose detector call failed (counted as
    non-events, denominator unchanged).
    """

    image_id: str
    original_class: str
    flipped: tuple[bool, ...]
    deceived: tuple[bool, ...]
    unevaluated: tuple[int, ...] = ()

    def __post_init__(self):
        if self.original_class not in (TP, FN):
            raise ValueError(f"original_class must be TP or FN: {self.original_class}")
        if len(self.flipped) != len(self.deceived):
            raise ValueError("flip and deception indicator lengths differ")

    @property
    def slot_count(self) -> int:
        return len(self.flipped)

    @property
    def deception_count(self) -> int:
        return sum(self.deceived)

    @property
    def gamma(self) -> float:
        return self.deception_count / self.slot_count

    @property
    def alpha(self) -> float:
        if self.original_class != TP:
            return 0.0
        return sum(self.flipped) / self.slot_count

    @property
    def beta(self) -> float:
        if self.original_class != FN:
            return 0.0
        return sum(self.flipped) / self.slot_count


def flip_probabilities(result: GridSweepResult, expected_slots: int = 625) -> tuple[float, float]:
    """(alpha, beta) for one image; exactly one of the pair can be nonzero."""
    if result.slot_count != expected_slots:
        raise ValueError(
            f"{result.image_id}: expected {expected_slots} slot records, "
            f"got {result.slot_count}"
        )
    return result.alpha, result.beta


def expected_flip_probabilities(results) -> tuple[float, float]:
    """Mean alpha and beta over all images; non-applicable classes count as 0."""
    results = list(results)
    if not results:
        raise ValueError("no sweep results to average")
    e_alpha = sum(r.alpha for r in results) / len(results)
    e_beta = sum(r.beta for r in results) / len(results)
    return e_alpha, e_beta


def deception_rate(slot_detections, patch_boxes, iou_threshold: float = 0.5) -> float:
    """Fraction of slots where some detection overlaps the slot's patch box.

    slot_detections: per-slot sequences of Detection from the perturbed image;
    patch_boxes: that slot's clipped patch box. A slot counts at most once no
    matter how many detections overlap.
    """
    slot_detections = list(slot_detections)
    patch_boxes = list(patch_boxes)
    if len(slot_detections) != len(patch_boxes):
        raise ValueError("slot detections and patch boxes must align")
    deceived = 0
    for dets, patch_box in zip(slot_detections, patch_boxes):
        if any(iou(d.box, patch_box) >= iou_threshold for d in dets):
            deceived += 1
    return deceived / len(patch_boxes)


def expectation_from_frequency_table(table) -> float:
    """Mean of a value -> count table: sum(value * count) / sum(count)."""
    total = sum(table.values())
    if total <= 0:
        raise ValueError("frequency table is empty")
    return sum(value * count for value, count in table.items()) / total


def expected_deception_rate(gammas) -> tuple[float, dict[float, int]]:
    """Mean deception rate plus the frequency table of observed values."""
    gammas = list(gammas)
    if not gammas:
        raise ValueError("no deception rates to average")
    table = dict(sorted(Counter(gammas).items()))
    return sum(gammas) / len(gammas), table


@dataclass(frozen=True)
class DeceptionMap:
    """Per-slot cumulative deception counts over the whole image set."""

    counts: np.ndarray
    middle_rows: tuple[int, ...]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def middle_horizontal_share(self) -> float | None:
        """Share of deceptions in the central row band; None when no deceptions."""
        total = self.total
        if total == 0:
            return None
        band = int(self.counts[list(self.middle_rows), :].sum())
        return band / total


def middle_band_rows(rows: int) -> tuple[int, ...]:
    """Central fifth of the grid rows (rows 10-14 for the 25-row default)."""
    band = max(1, rows // 5)
    start = (rows - band) // 2
    return tuple(range(start, start + band))


def cumulative_deception_map(results, rows: int = 25, cols: int = 25) -> DeceptionMap:
    """Sum per-slot deceived indicators across images into a rows x cols map."""
    counts = np.zeros((rows, cols), dtype=np.int64)
    for r in results:
        if r.slot_count != rows * cols:
            raise ValueError(
                f"{r.image_id}: slot count {r.slot_count} does not match "
                f"{rows}x{cols} grid"
            )
        grid = np.array(r.deceived, dtype=np.int64).reshape(rows, cols)
        counts += grid
    return DeceptionMap(counts, middle_band_rows(rows))


@dataclass(frozen=True)
class RobustnessReport:
    """Aggregate of one local injection sweep over a test set."""

    expected_alpha: float
    expected_beta: float
    expected_gamma: float
    tp_count: int
    fn_count: int
    gamma_table: dict[float, int]
    deception_map: DeceptionMap
    unevaluated_cells: int
    metadata: dict = field(default_factory=dict)

    @property
    def image_count(self) -> int:
        return self.tp_count + self.fn_count

    def __post_init__(self):
        if sum(self.gamma_table.values()) != self.image_count:
            raise ValueError("gamma frequency table does not cover every image")


def build_robustness_report(results, rows: int = 25, cols: int = 25,
                            metadata: dict | None = None) -> RobustnessReport:
    """Aggregate per-image grid sweep results into one report."""
    results = list(results)
    e_alpha, e_beta = expected_flip_probabilities(results)
    e_gamma, table = expected_deception_rate(r.gamma for r in results)
    return RobustnessReport(
        expected_alpha=e_alpha,
        expected_beta=e_beta,
        expected_gamma=e_gamma,
        tp_count=sum(1 for r in results if r.original_class == TP),
        fn_count=sum(1 for r in results if r.original_class == FN),
        gamma_table=table,
        deception_map=cumulative_deception_map(results, rows, cols),
        unevaluated_cells=sum(len(r.unevaluated) for r in results),
        metadata=dict(metadata or {}),
    )

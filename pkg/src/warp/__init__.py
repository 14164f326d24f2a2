"""Model-agnostic adversarial robustness harness for image-based detectors."""

from .model import (
    FN,
    TP,
    BoundingBox,
    Detection,
    EvalOutcome,
    GroundTruthAnnotation,
    ImageRecord,
    WarpError,
    box_area,
    classify_image_outcome,
)

__version__ = "0.1.0"

__all__ = [
    "FN",
    "TP",
    "BoundingBox",
    "Detection",
    "EvalOutcome",
    "GroundTruthAnnotation",
    "ImageRecord",
    "WarpError",
    "box_area",
    "classify_image_outcome",
    "__version__",
]

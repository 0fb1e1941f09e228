"""Rotated table-detection dataset toolkit: oriented-box geometry, annotation
formats, bounded image rotation and angle-aware AP evaluation."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    AffineMap,
    Point,
    Quad,
    angle_diff,
    apply_affine,
    clip_convex,
    quad_angle,
    rotated_iou,
    signed_area,
)
from .annot import (  # noqa: E402
    Detection,
    ImageAnnotation,
    Instance,
    emit_dota_line,
    obb_to_hbb,
    parse_dota_line,
    parse_icdar_xml,
    reorder_start,
    validate,
)
from .augment import (  # noqa: E402
    GenerationConfig,
    RotationSpec,
    adapt_bounds,
    draw_angle,
    generate_dataset,
    rotate_bounded,
    rotate_original,
    rotation_matrix,
)
from .metrics import EvalConfig, ap_11point, evaluate, match_detections, pr_curve  # noqa: E402

__all__ = [
    "__version__",
    "noqa",
    "E402",
    "AffineMap",
    "Point",
    "Quad",
    "angle_diff",
    "apply_affine",
    "clip_convex",
    "quad_angle",
    "rotated_iou",
    "signed_area",
    "noqa",
    "E402",
    "Detection",
    "ImageAnnotation",
    "Instance",
    "emit_dota_line",
    "obb_to_hbb",
    "parse_dota_line",
    "parse_icdar_xml",
    "reorder_start",
    "validate",
    "noqa",
    "E402",
    "GenerationConfig",
    "RotationSpec",
    "adapt_bounds",
    "draw_angle",
    "generate_dataset",
    "rotate_bounded",
    "rotate_original",
    "rotation_matrix",
    "EvalConfig",
    "ap_11point",
    "evaluate",
    "match_detections",
    "pr_curve",
]

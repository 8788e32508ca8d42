"""Few-shot detection prompt optimization for multimodal LLMs."""

from ._detpo import (
    BoundingBox,
    ContractViolation,
    CoordinateSpace,
    CornerOrder,
    Detection,
    Error,
    GroundTruthBox,
    ImageError,
    TemplateError,
    average_precision,
    coco_map,
    convert,
    draw_boxes,
    extract_definition,
    fn_severity,
    fp_severity,
    greedy_match,
    iou,
    parse_detections,
    per_image_f1,
    render_template,
    stroke_width,
    vqa_score,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ContractViolation",
    "CoordinateSpace",
    "CornerOrder",
    "Detection",
    "Error",
    "GroundTruthBox",
    "ImageError",
    "TemplateError",
    "average_precision",
    "coco_map",
    "convert",
    "draw_boxes",
    "extract_definition",
    "fn_severity",
    "fp_severity",
    "greedy_match",
    "iou",
    "parse_detections",
    "per_image_f1",
    "render_template",
    "stroke_width",
    "vqa_score",
]

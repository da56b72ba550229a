from ._accel import USE_NUMBA, backend_name
from .boxes import (
    anchor_count,
    assign_fpn_level,
    clip_boxes,
    decode_boxes,
    encode_boxes,
    level_anchors,
    pairwise_iou,
)
from .nms import nms_class_agnostic, nms_numba, nms_numpy
from .roi_align import roi_align, roi_align_numba, roi_align_numpy

__all__ = [
    "USE_NUMBA", "backend_name", "anchor_count", "assign_fpn_level", "clip_boxes", "decode_boxes",
    "encode_boxes", "level_anchors", "pairwise_iou", "nms_class_agnostic", "nms_numba", "nms_numpy",
    "roi_align", "roi_align_numba", "roi_align_numpy",
]

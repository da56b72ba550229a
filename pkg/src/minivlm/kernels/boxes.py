"""Box geometry: anchors, delta coding, IoU and pyramid level assignment.

Boxes are corner form ``(x1, y1, x2, y2)`` in pixels with the half-open
convention, so width is ``x2 - x1``.
"""
from __future__ import annotations

import math

import numpy as np

# exp() guard for width/height deltas, as in Detectron
DELTA_CLAMP = math.log(1000.0 / 16)

CANONICAL_BOX = 224.0
CANONICAL_LEVEL = 4  # log2 of the stride a canonical box maps to


def box_areas(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = box_areas(a)[:, None] + box_areas(b)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def level_anchors(stride: int, feat_h: int, feat_w: int, scales, ratios) -> np.ndarray:
    """Anchors for one level, ordered (y, x, anchor) to match an (A, H, W) head layout transposed."""
    base = []
    for r in ratios:
        for s in scales:
            size = s * stride
            w = size / math.sqrt(r)
            h = size * math.sqrt(r)
            base.append((-w / 2, -h / 2, w / 2, h / 2))
    base = np.asarray(base, dtype=np.float64)  # (A, 4)
    cy = (np.arange(feat_h) + 0.5) * stride
    cx = (np.arange(feat_w) + 0.5) * stride
    shifts = np.stack(np.broadcast_arrays(cx[None, :], cy[:, None], cx[None, :], cy[:, None]), axis=-1)
    return (shifts[:, :, None, :] + base[None, None]).reshape(-1, 4)


def anchor_count(image_hw, strides, num_anchors: int) -> int:
    h, w = image_hw
    return sum(-(-h // s) * -(-w // s) * num_anchors for s in strides)


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    wa = anchors[:, 2] - anchors[:, 0]
    ha = anchors[:, 3] - anchors[:, 1]
    cxa = anchors[:, 0] + 0.5 * wa
    cya = anchors[:, 1] + 0.5 * ha
    dx, dy = deltas[:, 0], deltas[:, 1]
    dw = np.minimum(deltas[:, 2], DELTA_CLAMP)
    dh = np.minimum(deltas[:, 3], DELTA_CLAMP)
    cx = dx * wa + cxa
    cy = dy * ha + cya
    w = np.exp(dw) * wa
    h = np.exp(dh) * ha
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def encode_boxes(anchors: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    anchors = np.asarray(anchors, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    wa = anchors[:, 2] - anchors[:, 0]
    ha = anchors[:, 3] - anchors[:, 1]
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    dx = (boxes[:, 0] + 0.5 * w - anchors[:, 0] - 0.5 * wa) / wa
    dy = (boxes[:, 1] + 0.5 * h - anchors[:, 1] - 0.5 * ha) / ha
    return np.stack([dx, dy, np.log(w / wa), np.log(h / ha)], axis=1)


def clip_boxes(boxes: np.ndarray, image_wh) -> np.ndarray:
    w, h = image_wh
    out = np.array(boxes, dtype=np.float64, copy=True)
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, w)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, h)
    return out


def assign_fpn_level(boxes, strides=(4, 8, 16, 32, 64)) -> np.ndarray:
    """Pyramid stride per box: ``2**floor(4 + log2(sqrt(area) / 224))`` clamped to ``strides``.

    A 224x224 box lands on stride 16.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    area = box_areas(boxes)
    if (area <= 0).any():
        raise ValueError("degenerate box: zero or negative area")
    lo, hi = int(math.log2(min(strides))), int(math.log2(max(strides)))
    k = np.floor(CANONICAL_LEVEL + np.log2(np.sqrt(area) / CANONICAL_BOX))
    k = np.clip(k, lo, hi).astype(np.int64)
    return (2 ** k).astype(np.int64)

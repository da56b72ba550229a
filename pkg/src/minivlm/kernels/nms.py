"""Greedy class-agnostic non-maximum suppression."""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


def _validate(boxes, scores):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ValueError(f"boxes must be (N, 4), got {boxes.shape}")
    if scores.shape != (boxes.shape[0],):
        raise ValueError("scores must be (N,) matching boxes")
    if not (np.isfinite(boxes).all() and np.isfinite(scores).all()):
        raise ValueError("boxes and scores must be finite")
    if (boxes[:, 2] < boxes[:, 0]).any() or (boxes[:, 3] < boxes[:, 1]).any():
        raise ValueError("malformed boxes: expected x1 <= x2 and y1 <= y2")
    return boxes, scores


def score_order(scores: np.ndarray) -> np.ndarray:
    """Descending score, ties broken by lower original index."""
    return np.argsort(-scores, kind="stable")


def nms_numpy(boxes, scores, iou_threshold: float = 0.5, topk: int | None = None) -> np.ndarray:
    boxes, scores = _validate(boxes, scores)
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    limit = boxes.shape[0] if topk is None else int(topk)
    x1, y1, x2, y2 = boxes.T
    areas = (x2 - x1) * (y2 - y1)
    order = score_order(scores)
    keep = []
    while order.size and len(keep) < limit:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        w = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        h = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = w * h
        union = areas[i] + areas[rest] - inter
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        order = rest[iou <= iou_threshold]
    return np.asarray(keep, dtype=np.int64)


@njit
def _nms_loop(boxes, order, iou_threshold, limit):
    n = order.shape[0]
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    suppressed = np.zeros(n, dtype=np.bool_)
    keep = np.empty(min(n, limit), dtype=np.int64)
    count = 0
    for a in range(n):
        if count >= limit:
            break
        if suppressed[a]:
            continue
        i = order[a]
        keep[count] = i
        count += 1
        for b in range(a + 1, n):
            if suppressed[b]:
                continue
            j = order[b]
            w = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            h = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            if w <= 0.0 or h <= 0.0:
                continue
            inter = w * h
            union = areas[i] + areas[j] - inter
            if union > 0.0 and inter / union > iou_threshold:
                suppressed[b] = True
    return keep[:count]


def nms_numba(boxes, scores, iou_threshold: float = 0.5, topk: int | None = None) -> np.ndarray:
    boxes, scores = _validate(boxes, scores)
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    limit = boxes.shape[0] if topk is None else int(topk)
    if boxes.shape[0] == 0 or limit <= 0:
        return np.zeros(0, dtype=np.int64)
    return _nms_loop(boxes, score_order(scores), float(iou_threshold), limit)


def nms_class_agnostic(boxes, scores, iou_threshold: float = 0.5, topk: int | None = None) -> np.ndarray:
    """Indices of kept boxes in descending score order.

    One greedy pass over all boxes regardless of class; a box is suppressed
    when its IoU with an already kept box exceeds ``iou_threshold``.
    """
    fn = nms_numba if USE_NUMBA else nms_numpy
    return fn(boxes, scores, iou_threshold, topk)

"""Reference implementations used only by the tests.

Each one follows the textbook definition directly and shares no code with
the package.
"""
from __future__ import annotations

import math

import numpy as np
import torch


def brute_force_nms(boxes, scores, thr, topk=None):
    """Keep a box iff no higher-ranked kept box overlaps it by IoU > thr; plain Python floats."""
    boxes = [tuple(map(float, b)) for b in boxes]
    order = sorted(range(len(boxes)), key=lambda i: (-float(scores[i]), i))

    def iou(a, b):
        w = min(a[2], b[2]) - max(a[0], b[0])
        h = min(a[3], b[3]) - max(a[1], b[1])
        if w <= 0 or h <= 0:
            return 0.0
        inter = w * h
        union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
        return inter / union if union > 0 else 0.0

    kept = []
    for i in order:
        if all(iou(boxes[i], boxes[k]) <= thr for k in kept):
            kept.append(i)
    return kept[:topk] if topk is not None else kept


def dense_bilinear(fmap, y, x):
    """Bilinear value at (y, x) as a tent-kernel sum over every cell.

    Outside [-1, size] the sample is zero; inside, coordinates clamp to the
    cell-centre range, so edge samples replicate the border.
    """
    C, H, W = fmap.shape
    if y < -1.0 or y > H or x < -1.0 or x > W:
        return np.zeros(C)
    y = min(max(y, 0.0), H - 1.0)
    x = min(max(x, 0.0), W - 1.0)
    wy = np.maximum(0.0, 1.0 - np.abs(np.arange(H) - y))
    wx = np.maximum(0.0, 1.0 - np.abs(np.arange(W) - x))
    return np.einsum("chw,h,w->c", fmap, wy, wx)


def dense_roi_align(fmap, box, scale, out, ratio):
    """Average of ratio x ratio bilinear samples per bin; half-pixel aligned box."""
    fmap = np.asarray(fmap, dtype=np.float64)
    x1, y1, x2, y2 = (float(v) * scale - 0.5 for v in box)
    bh, bw = (y2 - y1) / out, (x2 - x1) / out
    res = np.zeros((fmap.shape[0], out, out))
    for py in range(out):
        for px in range(out):
            acc = np.zeros(fmap.shape[0])
            for iy in range(ratio):
                for ix in range(ratio):
                    y = y1 + py * bh + (iy + 0.5) * bh / ratio
                    x = x1 + px * bw + (ix + 0.5) * bw / ratio
                    acc += dense_bilinear(fmap, y, x)
            res[:, py, px] = acc / (ratio * ratio)
    return res


def finite_difference_check(loss_fn, tensors: dict, h=1e-6, max_entries=None, seed=0):
    """Central differences vs autograd for each named tensor.

    Returns {name: relative error} with error = ||fd - ag|| / max(||fd||, ||ag||).
    With ``max_entries`` only that many randomly chosen elements per tensor are
    perturbed.
    """
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(tensors.values()), allow_unused=True)
    rng = np.random.default_rng(seed)
    errors = {}
    for (name, t), g in zip(tensors.items(), grads):
        g = torch.zeros_like(t) if g is None else g
        flat, gflat = t.data.view(-1), g.reshape(-1)
        idx = np.arange(flat.numel())
        if max_entries is not None and idx.size > max_entries:
            idx = rng.choice(idx.size, max_entries, replace=False)
        fd = np.empty(idx.size)
        with torch.no_grad():
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                fd[k] = (up - down) / (2 * h)
        ag = gflat[torch.as_tensor(idx)].detach().numpy()
        denom = max(np.linalg.norm(fd), np.linalg.norm(ag), 1e-300)
        errors[name] = float(np.linalg.norm(fd - ag) / denom)
    return errors


def manual_cross_entropy(logits, label):
    m = max(logits)
    lse = m + math.log(sum(math.exp(v - m) for v in logits))
    return lse - logits[label]

"""Quantisation-free RoIAlign over a single (C, H, W) feature map.

Box coordinates are image pixels; ``spatial_scale`` maps them onto the
feature grid and a half-cell offset puts cell centres on integer
coordinates. Each bin averages ``sampling_ratio**2`` bilinear samples placed
at the centres of a regular sub-grid.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit


def _check(features, boxes, output_size, sampling_ratio):
    features = np.ascontiguousarray(features)
    if features.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got {features.shape}")
    if not np.issubdtype(features.dtype, np.floating):
        features = features.astype(np.float64)
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    if ((boxes[:, 2] - boxes[:, 0]) <= 0).any() or ((boxes[:, 3] - boxes[:, 1]) <= 0).any():
        raise ValueError("degenerate box: RoIAlign needs x2 > x1 and y2 > y1")
    if output_size < 1 or sampling_ratio < 1:
        raise ValueError("output_size and sampling_ratio must be >= 1")
    return features, boxes


def _sample_coords(boxes, spatial_scale, output_size, sampling_ratio):
    """Sample coordinates on the feature grid, shape (N, out, S) for y and x."""
    b = boxes * spatial_scale - 0.5
    steps = (np.arange(output_size)[:, None] + (np.arange(sampling_ratio)[None, :] + 0.5) / sampling_ratio)
    bin_h = (b[:, 3] - b[:, 1]) / output_size
    bin_w = (b[:, 2] - b[:, 0]) / output_size
    ys = b[:, 1, None, None] + steps[None] * bin_h[:, None, None]
    xs = b[:, 0, None, None] + steps[None] * bin_w[:, None, None]
    return ys, xs


def _bilinear_weights(coord, size):
    """Return (low, high, w_low, w_high, valid) for coordinates along one axis."""
    valid = (coord >= -1.0) & (coord <= size)
    c = np.clip(coord, 0.0, None)
    low = np.floor(c).astype(np.int64)
    at_edge = low >= size - 1
    low = np.where(at_edge, size - 1, low)
    high = np.where(at_edge, size - 1, low + 1)
    c = np.where(at_edge, low.astype(c.dtype), c)
    frac = c - low
    return low, high, 1.0 - frac, frac, valid


def roi_align_numpy(features, boxes, spatial_scale: float, output_size: int = 4,
                    sampling_ratio: int = 2) -> np.ndarray:
    features, boxes = _check(features, boxes, output_size, sampling_ratio)
    C, H, W = features.shape
    n = boxes.shape[0]
    if n == 0:
        return np.zeros((0, C, output_size, output_size), dtype=features.dtype)
    ys, xs = _sample_coords(boxes, spatial_scale, output_size, sampling_ratio)
    yl, yh, wyl, wyh, vy = _bilinear_weights(ys, H)  # (N, out, S)
    xl, xh, wxl, wxh, vx = _bilinear_weights(xs, W)
    # broadcast to (N, out_y, S_y, out_x, S_x)
    Y = lambda a: a[:, :, :, None, None]
    X = lambda a: a[:, None, None, :, :]
    valid = Y(vy) & X(vx)
    acc = (features[:, Y(yl), X(xl)] * (Y(wyl) * X(wxl))
           + features[:, Y(yl), X(xh)] * (Y(wyl) * X(wxh))
           + features[:, Y(yh), X(xl)] * (Y(wyh) * X(wxl))
           + features[:, Y(yh), X(xh)] * (Y(wyh) * X(wxh)))
    acc = np.where(valid, acc, 0.0)
    out = acc.mean(axis=(3, 5))  # (C, N, out, out)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3)).astype(features.dtype, copy=False)


@njit
def _roi_align_loop(features, boxes, spatial_scale, output_size, sampling_ratio, out):
    C, H, W = features.shape
    count = sampling_ratio * sampling_ratio
    for n in range(boxes.shape[0]):
        x0 = boxes[n, 0] * spatial_scale - 0.5
        y0 = boxes[n, 1] * spatial_scale - 0.5
        bin_w = (boxes[n, 2] * spatial_scale - 0.5 - x0) / output_size
        bin_h = (boxes[n, 3] * spatial_scale - 0.5 - y0) / output_size
        for ph in range(output_size):
            for pw in range(output_size):
                for iy in range(sampling_ratio):
                    y = y0 + (ph + (iy + 0.5) / sampling_ratio) * bin_h
                    for ix in range(sampling_ratio):
                        x = x0 + (pw + (ix + 0.5) / sampling_ratio) * bin_w
                        if y < -1.0 or y > H or x < -1.0 or x > W:
                            continue
                        yy = max(y, 0.0)
                        xx = max(x, 0.0)
                        y_low = int(yy)
                        x_low = int(xx)
                        if y_low >= H - 1:
                            y_low = H - 1
                            y_high = H - 1
                            yy = float(y_low)
                        else:
                            y_high = y_low + 1
                        if x_low >= W - 1:
                            x_low = W - 1
                            x_high = W - 1
                            xx = float(x_low)
                        else:
                            x_high = x_low + 1
                        ly = yy - y_low
                        lx = xx - x_low
                        hy = 1.0 - ly
                        hx = 1.0 - lx
                        w1 = hy * hx / count
                        w2 = hy * lx / count
                        w3 = ly * hx / count
                        w4 = ly * lx / count
                        for c in range(C):
                            out[n, c, ph, pw] += (w1 * features[c, y_low, x_low] + w2 * features[c, y_low, x_high]
                                                  + w3 * features[c, y_high, x_low] + w4 * features[c, y_high, x_high])
    return out


def roi_align_numba(features, boxes, spatial_scale: float, output_size: int = 4,
                    sampling_ratio: int = 2) -> np.ndarray:
    features, boxes = _check(features, boxes, output_size, sampling_ratio)
    C = features.shape[0]
    out = np.zeros((boxes.shape[0], C, output_size, output_size), dtype=features.dtype)
    if boxes.shape[0] == 0:
        return out
    return _roi_align_loop(features, boxes, float(spatial_scale), int(output_size), int(sampling_ratio), out)


def roi_align(features, boxes, spatial_scale: float, output_size: int = 4, sampling_ratio: int = 2) -> np.ndarray:
    """Pool ``boxes`` (N, 4, image pixels) from ``features`` (C, H, W) into (N, C, out, out)."""
    fn = roi_align_numba if USE_NUMBA else roi_align_numpy
    return fn(features, boxes, spatial_scale, output_size, sampling_ratio)

"""Inverted-bottleneck (MBConv) backbone with EfficientNet width/depth scaling."""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from ..configs import PYRAMID_STRIDES, DetectorConfig


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, squeezed: int):
        super().__init__()
        self.reduce = nn.Conv2d(channels, squeezed, 1)
        self.expand = nn.Conv2d(squeezed, channels, 1)

    def forward(self, x):
        s = F.adaptive_avg_pool2d(x, 1)
        s = self.expand(F.silu(self.reduce(s)))
        return x * torch.sigmoid(s)


class MBConv(nn.Module):
    def __init__(self, cin: int, cout: int, expand: int, kernel: int, stride: int, se_ratio: float):
        super().__init__()
        mid = cin * expand
        self.use_residual = stride == 1 and cin == cout
        if expand != 1:
            self.expand_conv = nn.Conv2d(cin, mid, 1, bias=False)
            self.expand_bn = nn.BatchNorm2d(mid)
        else:
            self.expand_conv = None
        self.dw = nn.Conv2d(mid, mid, kernel, stride, padding=kernel // 2, groups=mid, bias=False)
        self.dw_bn = nn.BatchNorm2d(mid)
        self.se = SqueezeExcite(mid, max(1, int(cin * se_ratio))) if se_ratio > 0 else None
        self.project = nn.Conv2d(mid, cout, 1, bias=False)
        self.project_bn = nn.BatchNorm2d(cout)

    def forward(self, x):
        h = x
        if self.expand_conv is not None:
            h = F.silu(self.expand_bn(self.expand_conv(h)))
        h = F.silu(self.dw_bn(self.dw(h)))
        if self.se is not None:
            h = self.se(h)
        h = self.project_bn(self.project(h))
        return h + x if self.use_residual else h


class EfficientBackbone(nn.Module):
    """Returns the stride 4/8/16/32 feature maps."""

    def __init__(self, cfg: DetectorConfig):
        super().__init__()
        self.cfg = cfg
        stem = cfg.stem_out()
        self.stem = nn.Conv2d(3, stem, 3, 2, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(stem)
        self.stages = nn.ModuleList()
        self.stage_strides = []
        stride = 2
        for expand, k, s, cin, cout, reps in cfg.scaled_stages():
            blocks = [MBConv(cin if i == 0 else cout, cout, expand, k, s if i == 0 else 1, cfg.se_ratio)
                      for i in range(reps)]
            self.stages.append(nn.Sequential(*blocks))
            stride *= s
            self.stage_strides.append(stride)

    def forward(self, image: torch.Tensor) -> dict[int, torch.Tensor]:
        x = F.silu(self.stem_bn(self.stem(image)))
        out = {}
        for stage, stride in zip(self.stages, self.stage_strides):
            x = stage(x)
            if stride in PYRAMID_STRIDES:
                out[stride] = x
        return out

"""Bidirectional feature pyramid with fast normalised fusion."""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from ..configs import FUSED_STRIDES, PYRAMID_STRIDES, DetectorConfig
from ..cost_model import bifpn_nodes

FUSION_EPS = 1e-4


class FusionNode(nn.Module):
    """``conv(swish(sum_i w_i x_i / (sum_i w_i + eps)))`` with ``w = relu(raw)``."""

    def __init__(self, num_inputs: int, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(num_inputs))
        self.dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels, bias=False)
        self.pw = nn.Conv2d(channels, channels, 1)
        self.bn = nn.BatchNorm2d(channels)

    def fuse(self, inputs: list[torch.Tensor]) -> torch.Tensor:
        if len(inputs) != self.weight.numel():
            raise ValueError(f"node expects {self.weight.numel()} inputs, got {len(inputs)}")
        w = F.relu(self.weight)
        w = w / (w.sum() + FUSION_EPS)
        return sum(wi * x for wi, x in zip(w, inputs))

    def output_conv(self, x: torch.Tensor) -> torch.Tensor:
        return self.bn(self.pw(self.dw(F.silu(x))))

    def forward(self, inputs: list[torch.Tensor]) -> torch.Tensor:
        return self.output_conv(self.fuse(inputs))


def _up(x, like):
    return F.interpolate(x, size=like.shape[-2:], mode="nearest")


def _down(x):
    return F.max_pool2d(x, 3, 2, padding=1)


class BiFPNLayer(nn.Module):
    def __init__(self, channels: int, num_levels: int = len(FUSED_STRIDES)):
        super().__init__()
        self.layout = bifpn_nodes(num_levels)
        self.nodes = nn.ModuleList(FusionNode(n, channels) for _, n in self.layout)

    def forward(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        n = len(feats)
        td = [None] * n
        td[n - 1] = feats[n - 1]
        out = [None] * n
        nodes = iter(self.nodes)
        for lvl in range(n - 2, -1, -1):
            node = next(nodes)
            td[lvl] = node([feats[lvl], _up(td[lvl + 1], feats[lvl])])
        out[0] = td[0]
        for lvl in range(1, n - 1):
            node = next(nodes)
            out[lvl] = node([feats[lvl], td[lvl], _down(out[lvl - 1])])
        node = next(nodes)
        out[n - 1] = node([feats[n - 1], _down(out[n - 2])])
        return out


class BiFPN(nn.Module):
    """Maps the stride 4..32 backbone maps to a uniform-width stride 4..64 pyramid."""

    def __init__(self, cfg: DetectorConfig):
        super().__init__()
        ch = cfg.bifpn_channels
        self.lateral = nn.ModuleDict({
            str(s): nn.Sequential(nn.Conv2d(c, ch, 1), nn.BatchNorm2d(ch))
            for s, c in cfg.pyramid_channels().items()
        })
        self.layers = nn.ModuleList(BiFPNLayer(ch) for _ in range(cfg.bifpn_repeats))

    def forward(self, pyramid: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
        missing = [s for s in PYRAMID_STRIDES if s not in pyramid]
        if missing:
            raise ValueError(f"pyramid is missing stride level(s) {missing}")
        feats = [self.lateral[str(s)](pyramid[s]) for s in PYRAMID_STRIDES]
        feats.append(_down(feats[-1]))
        for layer in self.layers:
            feats = layer(feats)
        return dict(zip(FUSED_STRIDES, feats))

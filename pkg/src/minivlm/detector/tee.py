"""The two-stage efficient region-feature extractor.

backbone -> BiFPN -> two 1x1-conv RPN -> class-agnostic NMS -> pyramid level
assignment -> 4x4 RoIAlign -> two-linear box head. The region feature is the
activation of the second linear layer; tags are the argmax class names.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..configs import FUSED_STRIDES, DetectorConfig
from ..kernels import assign_fpn_level, clip_boxes, decode_boxes, level_anchors, nms_class_agnostic, roi_align
from .backbone import EfficientBackbone
from .bifpn import BiFPN
from .regions import RegionSet

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class RPNHead(nn.Module):
    """Exactly two learnable layers: box regression and objectness, both 1x1."""

    def __init__(self, channels: int, num_anchors: int):
        super().__init__()
        self.num_anchors = num_anchors
        self.bbox = nn.Conv2d(channels, 4 * num_anchors, 1)
        self.objectness = nn.Conv2d(channels, num_anchors, 1)

    def forward(self, x):
        return self.bbox(x), self.objectness(x)


class BoxHead(nn.Module):
    """Two linear layers over the flattened pooled map, then class and attribute classifiers."""

    def __init__(self, in_channels: int, roi_size: int, feature_dim: int, num_classes: int, num_attributes: int):
        super().__init__()
        self.in_shape = (in_channels, roi_size, roi_size)
        self.fc1 = nn.Linear(in_channels * roi_size * roi_size, feature_dim)
        self.fc2 = nn.Linear(feature_dim, feature_dim)
        self.cls = nn.Linear(feature_dim, num_classes + 1)
        self.attr = nn.Linear(feature_dim, num_attributes + 1)

    def forward(self, pooled: torch.Tensor):
        if tuple(pooled.shape[1:]) != self.in_shape:
            raise ValueError(f"pooled input must be (N, {self.in_shape}), got {tuple(pooled.shape)}")
        feature = F.relu(self.fc2(F.relu(self.fc1(pooled.flatten(1)))))
        return feature, self.cls(feature), self.attr(feature)


class TEEDetector(nn.Module):
    def __init__(self, cfg: DetectorConfig, class_names: Sequence[str] | None = None):
        super().__init__()
        self.cfg = cfg
        self.backbone = EfficientBackbone(cfg)
        self.bifpn = BiFPN(cfg)
        self.rpn = RPNHead(cfg.bifpn_channels, cfg.num_anchors)
        self.box_head = BoxHead(cfg.bifpn_channels, cfg.roi_size, cfg.feature_dim, cfg.num_classes,
                                cfg.num_attributes)
        if class_names is None:
            class_names = [f"class_{i}" for i in range(cfg.num_classes)]
        if len(class_names) != cfg.num_classes:
            raise ValueError(f"expected {cfg.num_classes} class names, got {len(class_names)}")
        self.class_names = list(class_names)

    # -- stages -----------------------------------------------------------

    def forward_backbone(self, image: torch.Tensor) -> dict[int, torch.Tensor]:
        s = self.cfg.image_size
        if image.dim() != 4 or tuple(image.shape[1:]) != (3, s, s):
            raise ValueError(f"image must be (B, 3, {s}, {s}), got {tuple(image.shape)}")
        return self.backbone(image)

    def bifpn_fuse(self, pyramid: dict[int, torch.Tensor]) -> dict[int, torch.Tensor]:
        return self.bifpn(pyramid)

    def rpn_outputs(self, fused: dict[int, torch.Tensor]):
        """Per-level raw head outputs reshaped to (B, H*W*A, 4) deltas and (B, H*W*A) logits."""
        deltas, logits = [], []
        a = self.cfg.num_anchors
        for s in FUSED_STRIDES:
            d, o = self.rpn(fused[s])
            b, _, h, w = o.shape
            deltas.append(d.view(b, a, 4, h, w).permute(0, 3, 4, 1, 2).reshape(b, -1, 4))
            logits.append(o.permute(0, 2, 3, 1).reshape(b, -1))
        return torch.cat(deltas, 1), torch.cat(logits, 1)

    def anchors(self, fused: dict[int, torch.Tensor]) -> np.ndarray:
        return np.concatenate([
            level_anchors(s, fused[s].shape[-2], fused[s].shape[-1], self.cfg.anchor_scales, self.cfg.anchor_ratios)
            for s in FUSED_STRIDES])

    def rpn_propose(self, fused: dict[int, torch.Tensor], index: int = 0):
        """Decode all anchors for one image: (boxes clipped to the input, objectness probabilities)."""
        deltas, logits = self.rpn_outputs(fused)
        size = self.cfg.image_size
        boxes = clip_boxes(decode_boxes(self.anchors(fused), deltas[index].detach().double().numpy()), (size, size))
        return boxes, torch.sigmoid(logits[index]).detach().double().numpy()

    def select_proposals(self, boxes: np.ndarray, scores: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        valid = np.flatnonzero(((boxes[:, 2] - boxes[:, 0]) > 1e-3) & ((boxes[:, 3] - boxes[:, 1]) > 1e-3))
        top = valid[np.argsort(-scores[valid], kind="stable")[: cfg.pre_nms_topk]]
        keep = nms_class_agnostic(boxes[top], scores[top], cfg.nms_iou, cfg.num_proposals)
        return top[keep]

    def pool(self, fused: dict[int, torch.Tensor], boxes: np.ndarray, index: int = 0) -> torch.Tensor:
        """RoIAlign every box from its assigned level; returns (N, C, S, S)."""
        cfg = self.cfg
        c = cfg.bifpn_channels
        first = next(iter(fused.values()))
        out = np.zeros((len(boxes), c, cfg.roi_size, cfg.roi_size),
                       dtype=np.float64 if first.dtype == torch.float64 else np.float32)
        if len(boxes) == 0:
            return torch.from_numpy(out)
        levels = assign_fpn_level(boxes, FUSED_STRIDES)
        for s in FUSED_STRIDES:
            sel = np.flatnonzero(levels == s)
            if sel.size:
                fmap = fused[s][index].detach().numpy()
                out[sel] = roi_align(fmap, boxes[sel], 1.0 / s, cfg.roi_size, cfg.sampling_ratio)
        return torch.from_numpy(out)

    # -- end to end -------------------------------------------------------

    @torch.no_grad()
    def extract_regions(self, image: torch.Tensor, image_id: str = "image",
                        original_size: tuple[int, int] | None = None,
                        max_regions: int | None = None) -> RegionSet:
        """Detect regions for one preprocessed image ``(3, S, S)`` or ``(1, 3, S, S)``.

        Boxes are rescaled to ``original_size`` (W, H) when given.
        """
        cfg = self.cfg
        k = cfg.max_regions if max_regions is None else int(max_regions)
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.shape[0] != 1:
            raise ValueError("extract_regions takes a single image")
        fused = self.bifpn_fuse(self.forward_backbone(image))
        boxes, obj = self.rpn_propose(fused)
        keep = self.select_proposals(boxes, obj)
        props = boxes[keep]
        pooled = self.pool(fused, props).to(image.dtype)
        feats, cls_logits, attr_logits = self.box_head(pooled)
        probs = torch.softmax(cls_logits.double(), -1)[:, 1:]
        score, cls = probs.max(-1)
        score, cls = score.numpy(), cls.numpy()
        attr = attr_logits[:, 1:].argmax(-1).numpy() if len(props) else np.zeros(0, dtype=np.int64)

        s = cfg.image_size
        w, h = original_size if original_size is not None else (s, s)
        props = props * np.array([w / s, h / s, w / s, h / s])
        props = clip_boxes(props, (w, h)).astype(np.float32)
        ok = (score >= cfg.score_floor) & (props[:, 2] > props[:, 0]) & (props[:, 3] > props[:, 1])
        idx = np.flatnonzero(ok)
        idx = idx[np.argsort(-score[idx], kind="stable")][:k]
        feats = feats.detach().numpy()
        rs = RegionSet(image_id, (w, h), props[idx], score[idx], cls[idx],
                       [self.class_names[c] for c in cls[idx]],
                       feats[idx].reshape(len(idx), cfg.feature_dim), attribute_ids=attr[idx])
        rs.validate(k)
        return rs


def preprocess_image(image, size: int, dtype=torch.float32) -> tuple[torch.Tensor, tuple[int, int]]:
    """uint8 HxWx3 array or PIL image -> normalised (3, size, size) tensor plus original (W, H)."""
    from PIL import Image

    if not isinstance(image, Image.Image):
        arr = np.asarray(image)
        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=2)
        if arr.dtype != np.uint8:
            arr = np.clip(arr * (255.0 if arr.max() <= 1.0 else 1.0), 0, 255).astype(np.uint8)
        image = Image.fromarray(arr[..., :3])
    image = image.convert("RGB")
    orig = image.size
    arr = np.asarray(image.resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    arr = (arr - np.array(IMAGENET_MEAN)) / np.array(IMAGENET_STD)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy()).to(dtype), orig


def build_detector(cfg: DetectorConfig, seed: int | None = 0, class_names=None) -> TEEDetector:
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        model = TEEDetector(cfg, class_names)
    return model.eval()

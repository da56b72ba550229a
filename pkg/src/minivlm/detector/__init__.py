from .backbone import EfficientBackbone, MBConv
from .bifpn import BiFPN, FusionNode
from .regions import RegionSet, iter_regions, read_regions, write_regions
from .tee import BoxHead, RPNHead, TEEDetector, build_detector, preprocess_image


def forward_backbone(image, model: TEEDetector):
    return model.forward_backbone(image)


def bifpn_fuse(pyramid, model: TEEDetector):
    return model.bifpn_fuse(pyramid)


def rpn_propose(pyramid, model: TEEDetector, index: int = 0):
    return model.rpn_propose(pyramid, index)


def extract_regions(image, model: TEEDetector, max_regions: int = 50, **kwargs):
    return model.extract_regions(image, max_regions=max_regions, **kwargs)


__all__ = [
    "EfficientBackbone", "MBConv", "BiFPN", "FusionNode", "RegionSet", "iter_regions", "read_regions",
    "write_regions", "BoxHead", "RPNHead", "TEEDetector", "build_detector", "preprocess_image",
    "forward_backbone", "bifpn_fuse", "rpn_propose", "extract_regions",
]

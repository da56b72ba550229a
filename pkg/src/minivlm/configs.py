"""Declarative architecture configs and the named preset registry.

Both the live networks and the analytical cost model are built from these
objects, so any field that changes the layer inventory lives here.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    pass


# (expand_ratio, kernel, stride, in_channels, out_channels, repeats)
Stage = tuple[int, int, int, int, int, int]

EFFICIENTNET_B0_STAGES: tuple[Stage, ...] = (
    (1, 3, 1, 32, 16, 1),
    (6, 3, 2, 16, 24, 2),
    (6, 5, 2, 24, 40, 2),
    (6, 3, 2, 40, 80, 3),
    (6, 5, 1, 80, 112, 3),
    (6, 5, 2, 112, 192, 4),
    (6, 3, 1, 192, 320, 1),
)

PYRAMID_STRIDES = (4, 8, 16, 32)
FUSED_STRIDES = (4, 8, 16, 32, 64)


def round_filters(channels: int, width_mult: float, divisor: int = 8) -> int:
    """EfficientNet channel rounding: scale, snap to ``divisor``, never drop >10%."""
    if width_mult == 1.0:
        return channels
    scaled = channels * width_mult
    new = max(divisor, int(scaled + divisor / 2) // divisor * divisor)
    if new < 0.9 * scaled:
        new += divisor
    return int(new)


def round_repeats(repeats: int, depth_mult: float) -> int:
    return int(math.ceil(depth_mult * repeats))


@dataclass(frozen=True)
class DetectorConfig:
    """Two-stage efficient extractor: backbone, BiFPN, RPN, RoIAlign and box head."""

    name: str = "custom"
    width_mult: float = 1.0
    depth_mult: float = 1.0
    stem_channels: int = 32
    stages: tuple[Stage, ...] = EFFICIENTNET_B0_STAGES
    se_ratio: float = 0.25
    bifpn_channels: int = 64
    bifpn_repeats: int = 3
    image_size: int = 576
    anchor_scales: tuple[float, ...] = (8.0,)
    anchor_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    nms_iou: float = 0.5
    score_floor: float = 0.05
    pre_nms_topk: int = 1000
    num_proposals: int = 300
    max_regions: int = 50
    feature_dim: int = 1024
    roi_size: int = 4
    sampling_ratio: int = 2
    num_classes: int = 1600
    num_attributes: int = 400

    def __post_init__(self):
        if self.image_size <= 0 or self.image_size % 64:
            raise ConfigError(f"image_size must be a positive multiple of 64, got {self.image_size}")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.roi_size < 1 or self.sampling_ratio < 1:
            raise ConfigError("roi_size and sampling_ratio must be >= 1")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError("nms_iou must lie in (0, 1)")
        if self.max_regions < 0 or self.num_proposals < 1 or self.pre_nms_topk < 1:
            raise ConfigError("region budgets must be positive")
        if self.num_classes < 1 or self.num_attributes < 1:
            raise ConfigError("class and attribute counts must be positive")
        if self.bifpn_channels < 1 or self.bifpn_repeats < 1:
            raise ConfigError("BiFPN channels and repeats must be positive")
        if not self.anchor_scales or not self.anchor_ratios:
            raise ConfigError("anchor scheme needs at least one scale and one ratio")
        object.__setattr__(self, "stages", tuple(tuple(int(v) for v in s) for s in self.stages))
        object.__setattr__(self, "anchor_scales", tuple(float(s) for s in self.anchor_scales))
        object.__setattr__(self, "anchor_ratios", tuple(float(r) for r in self.anchor_ratios))
        strides = {s for s, _ in self.stage_taps()}
        if not set(PYRAMID_STRIDES) <= strides or max(strides) != 32:
            raise ConfigError(f"backbone stages must produce strides {PYRAMID_STRIDES}, got {sorted(strides)}")

    @property
    def num_anchors(self) -> int:
        return len(self.anchor_scales) * len(self.anchor_ratios)

    def scaled_stages(self) -> list[Stage]:
        out = []
        for expand, k, stride, cin, cout, reps in self.stages:
            out.append((
                expand, k, stride,
                round_filters(cin, self.width_mult),
                round_filters(cout, self.width_mult),
                round_repeats(reps, self.depth_mult),
            ))
        return out

    def stem_out(self) -> int:
        return round_filters(self.stem_channels, self.width_mult)

    def stage_taps(self) -> list[tuple[int, int]]:
        """(stride, channels) of the last stage output at each backbone stride."""
        stride = 2
        taps: dict[int, int] = {}
        for expand, k, s, cin, cout, reps in self.scaled_stages():
            stride *= s
            taps[stride] = cout
        return sorted(taps.items())

    def pyramid_channels(self) -> dict[int, int]:
        return {s: c for s, c in self.stage_taps() if s in PYRAMID_STRIDES}


@dataclass(frozen=True)
class TransformerConfig:
    """BERT-style fusion encoder; ``num_segments`` = text, visual, tags."""

    name: str = "custom"
    num_layers: int = 12
    hidden_size: int = 384
    intermediate_size: int = 1536
    num_heads: int = 12
    vocab_size: int = 30522
    max_positions: int = 512
    num_segments: int = 3
    region_feature_dim: int = 1024
    box_dim: int = 6
    layer_norm_eps: float = 1e-12
    dropout: float = 0.1
    init_std: float = 0.02

    def __post_init__(self):
        for f in ("num_layers", "hidden_size", "intermediate_size", "num_heads", "vocab_size",
                  "max_positions", "num_segments", "region_feature_dim", "box_dim"):
            if getattr(self, f) <= 0:
                raise ConfigError(f"{f} must be positive")
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


TRANSFORMER_PRESETS: dict[str, TransformerConfig] = {
    "bert-base": TransformerConfig("bert-base", 12, 768, 3072, 12),
    "bert-8": TransformerConfig("bert-8", 8, 768, 3072, 12),
    "tinybert-6": TransformerConfig("tinybert-6", 6, 768, 3072, 12),
    "bert-4": TransformerConfig("bert-4", 4, 768, 3072, 12),
    "minilm": TransformerConfig("minilm", 12, 384, 1536, 12),
    "tinybert-4": TransformerConfig("tinybert-4", 4, 312, 1200, 12),
    "toy": TransformerConfig("toy", 2, 32, 64, 4, vocab_size=128, max_positions=64,
                             region_feature_dim=32),
}

# EfficientNet-B{X} multipliers with EfficientDet-D{X} BiFPN width/depth.
_TEE_SCALING = {
    0: (1.0, 1.0, 64, 3),
    1: (1.0, 1.1, 88, 4),
    2: (1.1, 1.2, 112, 5),
    3: (1.2, 1.4, 160, 6),
}
TEE_BASE_RESOLUTION = 576
TEE_RESOLUTION_STEP = 128


def tee_config(x: int, **overrides: Any) -> DetectorConfig:
    w, d, ch, reps = _TEE_SCALING[x]
    kw = dict(name=f"tee-{x}", width_mult=w, depth_mult=d, bifpn_channels=ch, bifpn_repeats=reps,
              image_size=TEE_BASE_RESOLUTION + TEE_RESOLUTION_STEP * x)
    kw.update(overrides)
    return DetectorConfig(**kw)


TOY_STAGES: tuple[Stage, ...] = (
    (1, 3, 1, 8, 8, 1),
    (2, 3, 2, 8, 8, 1),
    (2, 3, 2, 8, 16, 1),
    (2, 5, 2, 16, 16, 2),
    (2, 3, 2, 16, 24, 1),
)

DETECTOR_PRESETS: dict[str, DetectorConfig] = {
    **{f"tee-{x}": tee_config(x) for x in range(4)},
    "tee-toy": DetectorConfig(
        name="tee-toy", stem_channels=8, stages=TOY_STAGES, bifpn_channels=8, bifpn_repeats=1,
        image_size=64, pre_nms_topk=200, num_proposals=24, max_regions=10, feature_dim=32,
        num_classes=12, num_attributes=5,
    ),
}


def get_preset(name: str) -> DetectorConfig | TransformerConfig:
    key = name.lower()
    if key in TRANSFORMER_PRESETS:
        return TRANSFORMER_PRESETS[key]
    if key in DETECTOR_PRESETS:
        return DETECTOR_PRESETS[key]
    known = sorted([*TRANSFORMER_PRESETS, *DETECTOR_PRESETS])
    raise KeyError(f"unknown preset {name!r}; known presets: {', '.join(known)}")


def _build(cls, data: Mapping[str, Any]):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[f.name] = value
    return cls(**kwargs)


def config_from_dict(data: Mapping[str, Any]) -> DetectorConfig | TransformerConfig:
    """Build a config from a mapping of the form ``{family: ..., preset: ..., <fields>}``.

    ``preset`` seeds the defaults and the remaining keys override it.
    """
    data = dict(data)
    family = data.pop("family", None)
    preset = data.pop("preset", None)
    if preset is not None:
        base = get_preset(preset)
        fam = "detector" if isinstance(base, DetectorConfig) else "transformer"
        if family is not None and family != fam:
            raise ConfigError(f"preset {preset!r} is a {fam} config, not {family}")
        merged = {**dataclasses.asdict(base), **data}
        return _build(type(base), merged)
    if family == "detector":
        return _build(DetectorConfig, data)
    if family == "transformer":
        return _build(TransformerConfig, data)
    raise ConfigError("config needs 'family: detector|transformer' or a 'preset'")


def load_config(path: str | Path) -> DetectorConfig | TransformerConfig:
    """Load a YAML architecture file. A bare preset name is accepted too."""
    p = Path(path)
    if not p.exists():
        return get_preset(str(path))
    with open(p) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: expected a mapping at top level")
    return config_from_dict(data)


def config_to_dict(config: DetectorConfig | TransformerConfig) -> dict[str, Any]:
    d = dataclasses.asdict(config)
    d["family"] = "detector" if isinstance(config, DetectorConfig) else "transformer"

    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        return v

    return {k: plain(v) for k, v in d.items()}

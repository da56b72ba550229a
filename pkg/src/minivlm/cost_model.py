"""Closed-form parameter and FLOP accounting.

Convention: one FLOP is one multiply-accumulate. Only matmul/conv multiplies
are counted; activations, softmax, normalisation arithmetic, pooling and
resampling are free. Parameters include biases and norm affine terms.

Architectures are first expanded into a flat list of ``(component, LayerSpec)``
pairs, then every layer is counted independently, so report totals are exactly
the sum of the per-layer counts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .configs import (
    FUSED_STRIDES,
    PYRAMID_STRIDES,
    DetectorConfig,
    TransformerConfig,
)

# kind -> (required shape params, optional count params with defaults)
_SCHEMA: dict[str, tuple[tuple[str, ...], dict[str, int]]] = {
    "standard-conv": (("in_channels", "out_channels", "kernel", "out_h", "out_w"), {}),
    "depthwise-conv": (("channels", "kernel", "out_h", "out_w"), {}),
    "pointwise-conv": (("in_channels", "out_channels", "out_h", "out_w"), {}),
    "linear": (("in_features", "out_features"), {"rows": 1}),
    "embedding": (("num_embeddings", "dim"), {}),
    "attention-block": (("hidden", "heads", "seq"), {}),
    "ffn-block": (("hidden", "intermediate", "seq"), {}),
    "norm": (("channels",), {}),
    "roi-align": (("channels", "out_size"), {"rois": 0}),
    "nms": ((), {"boxes": 0}),
    "scalar-weights": (("count",), {}),
}
_BIASED = {"standard-conv", "depthwise-conv", "pointwise-conv", "linear"}

LAYER_KINDS = tuple(_SCHEMA)


class LayerSpecError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    shape: Mapping[str, int]
    bias: bool = False

    def __post_init__(self):
        if self.kind not in _SCHEMA:
            raise LayerSpecError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")
        required, optional = _SCHEMA[self.kind]
        given = dict(self.shape)
        missing = [k for k in required if k not in given]
        if missing:
            raise LayerSpecError(f"{self.kind}: missing shape parameter(s) {missing}")
        extra = set(given) - set(required) - set(optional)
        if extra:
            raise LayerSpecError(f"{self.kind}: unexpected shape parameter(s) {sorted(extra)}")
        for k in required:
            v = given[k]
            if isinstance(v, bool) or int(v) != v or v <= 0:
                raise LayerSpecError(f"{self.kind}: {k} must be a positive integer, got {v!r}")
        for k in optional:
            v = given.setdefault(k, optional[k])
            if isinstance(v, bool) or int(v) != v or v < 0:
                raise LayerSpecError(f"{self.kind}: {k} must be a non-negative integer, got {v!r}")
        if self.bias and self.kind not in _BIASED:
            raise LayerSpecError(f"{self.kind} layers carry no bias")
        if self.kind == "attention-block" and given["hidden"] % given["heads"]:
            raise LayerSpecError("attention-block: hidden must be divisible by heads")
        object.__setattr__(self, "shape", {k: int(v) for k, v in given.items()})

    def __getitem__(self, key: str) -> int:
        return self.shape[key]


def layer(kind: str, bias: bool = False, **shape: int) -> LayerSpec:
    return LayerSpec(kind, shape, bias)


def count_layer(spec: LayerSpec) -> tuple[int, int]:
    """Return ``(params, flops)`` for a single layer."""
    s, b = spec.shape, int(spec.bias)
    k = spec.kind
    if k == "standard-conv":
        w = s["in_channels"] * s["out_channels"] * s["kernel"] ** 2
        return w + b * s["out_channels"], w * s["out_h"] * s["out_w"]
    if k == "depthwise-conv":
        w = s["channels"] * s["kernel"] ** 2
        return w + b * s["channels"], w * s["out_h"] * s["out_w"]
    if k == "pointwise-conv":
        w = s["in_channels"] * s["out_channels"]
        return w + b * s["out_channels"], w * s["out_h"] * s["out_w"]
    if k == "linear":
        w = s["in_features"] * s["out_features"]
        return w + b * s["out_features"], w * s["rows"]
    if k == "embedding":
        return s["num_embeddings"] * s["dim"], 0
    if k == "attention-block":
        d, n = s["hidden"], s["seq"]
        # q/k/v/out projections, then QK^T and attention-weighted V
        return 4 * (d * d + d), 4 * n * d * d + 2 * n * n * d
    if k == "ffn-block":
        d, i, n = s["hidden"], s["intermediate"], s["seq"]
        return 2 * d * i + i + d, 2 * n * d * i
    if k == "norm":
        return 2 * s["channels"], 0
    if k == "scalar-weights":
        return s["count"], 0
    return 0, 0  # roi-align, nms: elementwise/bookkeeping only


@dataclass(frozen=True)
class CostReport:
    name: str
    components: tuple[tuple[str, int, int], ...]
    input_spec: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for cname, p, f in self.components:
            if p < 0 or f < 0:
                raise ValueError(f"negative count in component {cname!r}")

    @property
    def params(self) -> int:
        return sum(p for _, p, _ in self.components)

    @property
    def flops(self) -> int:
        return sum(f for _, _, f in self.components)

    @property
    def totals(self) -> tuple[int, int]:
        return self.params, self.flops

    def component(self, name: str) -> tuple[int, int]:
        for cname, p, f in self.components:
            if cname == name:
                return p, f
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input": dict(self.input_spec),
            "components": [{"name": n, "params": p, "flops": f} for n, p, f in self.components],
            "totals": {"params": self.params, "flops": self.flops},
        }

    def format_table(self) -> str:
        lines = [f"{self.name}", f"{'component':<16}{'params (M)':>14}{'FLOPs (B)':>14}"]
        for n, p, f in self.components:
            lines.append(f"{n:<16}{p / 1e6:>14.4f}{f / 1e9:>14.4f}")
        lines.append(f"{'total':<16}{self.params / 1e6:>14.4f}{self.flops / 1e9:>14.4f}")
        return "\n".join(lines)


def report_from_layers(name: str, layers: Iterable[tuple[str, LayerSpec]],
                       input_spec: Mapping[str, int] | None = None) -> CostReport:
    order: list[str] = []
    acc: dict[str, list[int]] = {}
    for comp, spec in layers:
        p, f = count_layer(spec)
        if comp not in acc:
            order.append(comp)
            acc[comp] = [0, 0]
        acc[comp][0] += p
        acc[comp][1] += f
    return CostReport(name, tuple((c, acc[c][0], acc[c][1]) for c in order), dict(input_spec or {}))


# ---------------------------------------------------------------------------
# transformer family


def transformer_layers(cfg: TransformerConfig, num_regions: int, num_text_tokens: int
                       ) -> list[tuple[str, LayerSpec]]:
    """Layer inventory of the pre-training model: encoder plus pooler, ITM and MLM heads.

    The vocabulary decoder is untied from the word embedding and runs on
    text positions only.
    """
    if num_regions < 0 or num_text_tokens < 0 or num_regions + num_text_tokens == 0:
        raise ValueError("transformer input needs a non-negative region/token count with a positive total")
    d, n = cfg.hidden_size, num_regions + num_text_tokens
    out: list[tuple[str, LayerSpec]] = [
        ("embedding", layer("embedding", num_embeddings=cfg.vocab_size, dim=d)),
        ("embedding", layer("embedding", num_embeddings=cfg.max_positions, dim=d)),
        ("embedding", layer("embedding", num_embeddings=cfg.num_segments, dim=d)),
        ("embedding", layer("norm", channels=d)),
        ("embedding", layer("linear", bias=True, in_features=cfg.region_feature_dim + cfg.box_dim,
                            out_features=d, rows=num_regions)),
    ]
    for _ in range(cfg.num_layers):
        out += [
            ("encoder", layer("attention-block", hidden=d, heads=cfg.num_heads, seq=n)),
            ("encoder", layer("norm", channels=d)),
            ("encoder", layer("ffn-block", hidden=d, intermediate=cfg.intermediate_size, seq=n)),
            ("encoder", layer("norm", channels=d)),
        ]
    out += [
        ("pooler", layer("linear", bias=True, in_features=d, out_features=d, rows=1)),
        ("pooler", layer("linear", bias=True, in_features=d, out_features=2, rows=1)),
        ("decoder", layer("linear", bias=True, in_features=d, out_features=d, rows=num_text_tokens)),
        ("decoder", layer("norm", channels=d)),
        ("decoder", layer("linear", bias=True, in_features=d, out_features=cfg.vocab_size,
                          rows=num_text_tokens)),
    ]
    return out


# ---------------------------------------------------------------------------
# detector family


def _conv_out(size: int, stride: int) -> int:
    return -(-size // stride)


def mbconv_layers(cin: int, cout: int, expand: int, kernel: int, stride: int, se_ratio: float,
                  in_hw: tuple[int, int]) -> tuple[list[LayerSpec], tuple[int, int]]:
    h, w = in_hw
    oh, ow = _conv_out(h, stride), _conv_out(w, stride)
    mid = cin * expand
    specs: list[LayerSpec] = []
    if expand != 1:
        specs += [layer("pointwise-conv", in_channels=cin, out_channels=mid, out_h=h, out_w=w),
                  layer("norm", channels=mid)]
    specs += [layer("depthwise-conv", channels=mid, kernel=kernel, out_h=oh, out_w=ow),
              layer("norm", channels=mid)]
    if se_ratio > 0:
        se = max(1, int(cin * se_ratio))
        specs += [layer("pointwise-conv", bias=True, in_channels=mid, out_channels=se, out_h=1, out_w=1),
                  layer("pointwise-conv", bias=True, in_channels=se, out_channels=mid, out_h=1, out_w=1)]
    specs += [layer("pointwise-conv", in_channels=mid, out_channels=cout, out_h=oh, out_w=ow),
              layer("norm", channels=cout)]
    return specs, (oh, ow)


# fusion node layout for five levels, P2..P6 (strides 4..64): (level, n_inputs)
def bifpn_nodes(num_levels: int = 5) -> list[tuple[int, int]]:
    top_down = [(lvl, 2) for lvl in range(num_levels - 2, -1, -1)]
    bottom_up = [(lvl, 3) for lvl in range(1, num_levels - 1)] + [(num_levels - 1, 2)]
    return top_down + bottom_up


def detector_layers(cfg: DetectorConfig, image_hw: tuple[int, int] | None = None,
                    num_rois: int | None = None) -> list[tuple[str, LayerSpec]]:
    h, w = image_hw or (cfg.image_size, cfg.image_size)
    rois = cfg.num_proposals if num_rois is None else num_rois
    out: list[tuple[str, LayerSpec]] = []

    stem = cfg.stem_out()
    h, w = _conv_out(h, 2), _conv_out(w, 2)
    out += [("backbone", layer("standard-conv", in_channels=3, out_channels=stem, kernel=3, out_h=h, out_w=w)),
            ("backbone", layer("norm", channels=stem))]
    sizes = {2: (h, w)}
    stride = 2
    for expand, k, s, cin, cout, reps in cfg.scaled_stages():
        for i in range(reps):
            specs, (h, w) = mbconv_layers(cin if i == 0 else cout, cout, expand, k, s if i == 0 else 1,
                                          cfg.se_ratio, (h, w))
            out += [("backbone", sp) for sp in specs]
        stride *= s
        sizes[stride] = (h, w)

    ch = cfg.bifpn_channels
    for s, c in cfg.pyramid_channels().items():
        fh, fw = sizes[s]
        out += [("bifpn", layer("pointwise-conv", bias=True, in_channels=c, out_channels=ch, out_h=fh, out_w=fw)),
                ("bifpn", layer("norm", channels=ch))]
    sh, sw = sizes[32]
    sizes[64] = (_conv_out(sh, 2), _conv_out(sw, 2))
    for _ in range(cfg.bifpn_repeats):
        for lvl, n_in in bifpn_nodes(len(FUSED_STRIDES)):
            fh, fw = sizes[FUSED_STRIDES[lvl]]
            out += [("bifpn", layer("scalar-weights", count=n_in)),
                    ("bifpn", layer("depthwise-conv", channels=ch, kernel=3, out_h=fh, out_w=fw)),
                    ("bifpn", layer("pointwise-conv", bias=True, in_channels=ch, out_channels=ch, out_h=fh, out_w=fw)),
                    ("bifpn", layer("norm", channels=ch))]

    # the two RPN convs are shared across levels: one flattened map of all positions
    positions = sum(sizes[s][0] * sizes[s][1] for s in FUSED_STRIDES)
    a = cfg.num_anchors
    out += [("rpn", layer("pointwise-conv", bias=True, in_channels=ch, out_channels=4 * a, out_h=positions, out_w=1)),
            ("rpn", layer("pointwise-conv", bias=True, in_channels=ch, out_channels=a, out_h=positions, out_w=1)),
            ("rpn", layer("nms", boxes=min(cfg.pre_nms_topk, positions * a)))]

    f = cfg.feature_dim
    out += [("box_head", layer("roi-align", channels=ch, out_size=cfg.roi_size, rois=rois)),
            ("box_head", layer("linear", bias=True, in_features=ch * cfg.roi_size ** 2, out_features=f, rows=rois)),
            ("box_head", layer("linear", bias=True, in_features=f, out_features=f, rows=rois)),
            ("box_head", layer("linear", bias=True, in_features=f, out_features=cfg.num_classes + 1, rows=rois)),
            ("attribute_head", layer("linear", bias=True, in_features=f, out_features=cfg.num_attributes + 1,
                                     rows=rois))]
    return out


# ---------------------------------------------------------------------------
# ResNet-101 C4 Faster R-CNN baseline (cost-only reconstruction)


@dataclass(frozen=True)
class FasterRCNNC4Config:
    """Cost-only description of the bottom-up-attention R101 Faster R-CNN.

    Caffe-style bottlenecks (stride on the first 1x1), res5 as the per-RoI box
    head on 14x14 pooled features, class-specific box regression.
    """

    name: str = "r101-f"
    blocks: tuple[int, int, int, int] = (3, 4, 23, 3)
    image_hw: tuple[int, int] = (600, 800)
    num_proposals: int = 1000
    pool_size: int = 14
    rpn_channels: int = 512
    num_anchors: int = 12
    num_classes: int = 1600
    num_attributes: int = 400
    class_embed_dim: int = 256
    attr_hidden: int = 512


def _bottleneck(cin, mid, cout, stride, hw, downsample):
    h, w = hw
    oh, ow = _conv_out(h, stride), _conv_out(w, stride)
    specs = [layer("pointwise-conv", in_channels=cin, out_channels=mid, out_h=oh, out_w=ow),
             layer("norm", channels=mid),
             layer("standard-conv", in_channels=mid, out_channels=mid, kernel=3, out_h=oh, out_w=ow),
             layer("norm", channels=mid),
             layer("pointwise-conv", in_channels=mid, out_channels=cout, out_h=oh, out_w=ow),
             layer("norm", channels=cout)]
    if downsample:
        specs += [layer("pointwise-conv", in_channels=cin, out_channels=cout, out_h=oh, out_w=ow),
                  layer("norm", channels=cout)]
    return specs, (oh, ow)


def _res_stage(n, cin, mid, cout, stride, hw):
    specs = []
    for i in range(n):
        s, hw = _bottleneck(cin if i == 0 else cout, mid, cout, stride if i == 0 else 1, hw, i == 0)
        specs += s
    return specs, hw


def faster_rcnn_layers(cfg: FasterRCNNC4Config, num_rois: int | None = None) -> list[tuple[str, LayerSpec]]:
    rois = cfg.num_proposals if num_rois is None else num_rois
    h, w = cfg.image_hw
    h, w = _conv_out(h, 2), _conv_out(w, 2)
    out = [("backbone", layer("standard-conv", in_channels=3, out_channels=64, kernel=7, out_h=h, out_w=w)),
           ("backbone", layer("norm", channels=64))]
    hw = (_conv_out(h, 2), _conv_out(w, 2))  # max pool
    cin = 64
    for n, mid, cout, stride in zip(cfg.blocks[:3], (64, 128, 256), (256, 512, 1024), (1, 2, 2)):
        specs, hw = _res_stage(n, cin, mid, cout, stride, hw)
        out += [("backbone", s) for s in specs]
        cin = cout
    a, rc = cfg.num_anchors, cfg.rpn_channels
    out += [("rpn", layer("standard-conv", bias=True, in_channels=cin, out_channels=rc, kernel=3,
                          out_h=hw[0], out_w=hw[1])),
            ("rpn", layer("pointwise-conv", bias=True, in_channels=rc, out_channels=2 * a, out_h=hw[0], out_w=hw[1])),
            ("rpn", layer("pointwise-conv", bias=True, in_channels=rc, out_channels=4 * a, out_h=hw[0], out_w=hw[1])),
            ("rpn", layer("nms", boxes=hw[0] * hw[1] * a))]
    # res5 per RoI: replicate the per-RoI layers ``rois`` times via the flattened width
    p = cfg.pool_size
    specs, _ = _res_stage(cfg.blocks[3], cin, 512, 2048, 2, (p, p * max(rois, 1)))
    if rois == 0:
        specs = [s if s.kind == "norm" else LayerSpec(s.kind, {**s.shape, "out_w": 1}, s.bias) for s in specs]
    out += [("box_head", layer("roi-align", channels=cin, out_size=p, rois=rois))]
    out += [("box_head", s) for s in specs]
    c = cfg.num_classes + 1
    out += [("box_head", layer("linear", bias=True, in_features=2048, out_features=c, rows=rois)),
            ("box_head", layer("linear", bias=True, in_features=2048, out_features=4 * c, rows=rois)),
            ("attribute_head", layer("embedding", num_embeddings=c, dim=cfg.class_embed_dim)),
            ("attribute_head", layer("linear", bias=True, in_features=2048 + cfg.class_embed_dim,
                                     out_features=cfg.attr_hidden, rows=rois)),
            ("attribute_head", layer("linear", bias=True, in_features=cfg.attr_hidden,
                                     out_features=cfg.num_attributes + 1, rows=rois))]
    return out


R101_F = FasterRCNNC4Config()

# Grid-feature extractors are carried as reference figures only.
GRID_REFERENCE = {
    "grid-r50": (23_500_000, 37_800_000_000),
    "grid-x101": (86_900_000, 161_200_000_000),
}


def reference_report(name: str) -> CostReport:
    p, f = GRID_REFERENCE[name]
    return CostReport(name, (("total", p, f),), {})


def expand_arch(config, input_spec=None) -> list[tuple[str, LayerSpec]]:
    if isinstance(config, TransformerConfig):
        if input_spec is None:
            input_spec = (50, 35)
        if not (isinstance(input_spec, Sequence) and len(input_spec) == 2):
            raise ValueError("transformer configs take (num_regions, num_text_tokens)")
        return transformer_layers(config, int(input_spec[0]), int(input_spec[1]))
    if isinstance(config, DetectorConfig):
        if input_spec is None:
            return detector_layers(config)
        if isinstance(input_spec, int):
            return detector_layers(config, (input_spec, input_spec))
        if isinstance(input_spec, Sequence) and len(input_spec) == 2:
            return detector_layers(config, (int(input_spec[0]), int(input_spec[1])))
        raise ValueError("detector configs take an image size: int or (height, width)")
    if isinstance(config, FasterRCNNC4Config):
        if input_spec is not None:
            raise ValueError("the R101-F reconstruction has a fixed input size")
        return faster_rcnn_layers(config)
    raise TypeError(f"unsupported config type {type(config).__name__}")


def count_arch(config, input_spec=None) -> CostReport:
    """Cost report for a detector, transformer or R101-F config.

    ``input_spec`` is an image size (int or ``(h, w)``) for detectors and
    ``(num_regions, num_text_tokens)`` for transformers.
    """
    layers = expand_arch(config, input_spec)
    if isinstance(config, TransformerConfig):
        r, t = (50, 35) if input_spec is None else input_spec
        spec = {"regions": int(r), "tokens": int(t)}
    elif isinstance(config, DetectorConfig):
        size = input_spec if input_spec is not None else config.image_size
        hh, ww = (size, size) if isinstance(size, int) else size
        spec = {"height": int(hh), "width": int(ww), "rois": config.num_proposals}
    else:
        spec = {"height": config.image_hw[0], "width": config.image_hw[1], "rois": config.num_proposals}
    return report_from_layers(config.name, layers, spec)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    params: int
    flops: int
    params_ratio: float
    flops_ratio: float


@dataclass(frozen=True)
class ComparisonTable:
    baseline: str
    rows: tuple[ComparisonRow, ...]

    def row(self, name: str) -> ComparisonRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"baseline": self.baseline,
                "rows": [r.__dict__.copy() for r in self.rows]}

    def format_table(self) -> str:
        lines = [f"{'model':<14}{'params (M)':>12}{'FLOPs (B)':>12}{'params/base':>13}{'FLOPs/base':>12}"]
        for r in self.rows:
            lines.append(f"{r.name:<14}{r.params / 1e6:>12.2f}{r.flops / 1e9:>12.2f}"
                         f"{r.params_ratio:>13.1%}{r.flops_ratio:>12.1%}")
        lines.append(f"baseline: {self.baseline}")
        return "\n".join(lines)


def compare(reports: Sequence[CostReport], baseline: str | int = -1) -> ComparisonTable:
    """Tabulate reports with ratios against ``baseline`` (name or index, default last)."""
    if len(reports) < 2:
        raise ValueError("compare needs at least two reports")
    if isinstance(baseline, str):
        matches = [r for r in reports if r.name == baseline]
        if not matches:
            raise KeyError(f"baseline {baseline!r} not among {[r.name for r in reports]}")
        base = matches[0]
    else:
        base = reports[baseline]
    rows = tuple(ComparisonRow(r.name, r.params, r.flops, r.params / base.params,
                               r.flops / base.flops if base.flops else float("nan"))
                 for r in reports)
    return ComparisonTable(base.name, rows)

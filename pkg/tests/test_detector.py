import dataclasses

import numpy as np
import pytest
import torch

from minivlm.configs import FUSED_STRIDES, get_preset, tee_config
from minivlm.cost_model import count_arch
from minivlm.detector import (BiFPN, BoxHead, FusionNode, RegionSet, build_detector, extract_regions,
                              preprocess_image, read_regions, write_regions)
from minivlm.detector.bifpn import FUSION_EPS
from minivlm.flops import count_macs

from oracles import finite_difference_check

TOY = get_preset("tee-toy")


@pytest.fixture(scope="module")
def toy_det():
    return build_detector(TOY, seed=0)


@pytest.fixture(scope="module")
def toy_det64():
    return build_detector(TOY, seed=0).double()


def test_backbone_level_shapes():
    det = build_detector(dataclasses.replace(TOY, image_size=256))
    maps = det.forward_backbone(torch.zeros(1, 3, 256, 256))
    assert {s: tuple(m.shape[-2:]) for s, m in maps.items()} == {4: (64, 64), 8: (32, 32), 16: (16, 16), 32: (8, 8)}


def test_backbone_rejects_wrong_size(toy_det):
    with pytest.raises(ValueError):
        toy_det.forward_backbone(torch.zeros(1, 3, 32, 32))


def test_zero_image_with_zero_affine_gives_zero_maps():
    det = build_detector(TOY)
    with torch.no_grad():
        for m in det.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.bias.zero_()
    maps = det.forward_backbone(torch.zeros(1, 3, 64, 64))
    assert all(float(m.detach().abs().max()) == 0.0 for m in maps.values())


def test_fusion_node_equal_inputs():
    node = FusionNode(3, 4)
    x = torch.randn(1, 4, 5, 5)
    torch.testing.assert_close(node.fuse([x, x, x]), x * 3 / (3 + FUSION_EPS))


def test_fusion_node_zero_weight_edge_is_ignored():
    node = FusionNode(2, 4)
    with torch.no_grad():
        node.weight.copy_(torch.tensor([1.0, -2.0]))  # relu clips the second edge to 0
    a, b = torch.randn(1, 4, 3, 3), torch.randn(1, 4, 3, 3)
    torch.testing.assert_close(node.fuse([a, b]), a / (1 + FUSION_EPS))
    with pytest.raises(ValueError):
        node.fuse([a])


def test_bifpn_missing_level(toy_det):
    maps = toy_det.forward_backbone(torch.zeros(1, 3, 64, 64))
    del maps[16]
    with pytest.raises(ValueError, match="missing"):
        toy_det.bifpn_fuse(maps)


def test_bifpn_output_levels(toy_det):
    fused = toy_det.bifpn_fuse(toy_det.forward_backbone(torch.zeros(1, 3, 64, 64)))
    assert list(fused) == list(FUSED_STRIDES)
    assert all(f.shape[1] == TOY.bifpn_channels and f.shape[-1] == max(1, 64 // s) for s, f in fused.items())


def test_rpn_zero_deltas_reproduce_anchors(toy_det):
    det = build_detector(TOY)
    with torch.no_grad():
        det.rpn.bbox.weight.zero_()
        det.rpn.bbox.bias.zero_()
    fused = det.bifpn_fuse(det.forward_backbone(torch.randn(1, 3, 64, 64)))
    boxes, scores = det.rpn_propose(fused)
    anchors = np.clip(det.anchors(fused), 0, 64)
    np.testing.assert_allclose(boxes, anchors, atol=1e-9)
    assert ((0 <= scores) & (scores <= 1)).all()


def test_box_head_zero_input_is_bias_path():
    head = BoxHead(4, 2, 6, 3, 2).double()
    feature, cls, attr = head(torch.zeros(2, 4, 2, 2, dtype=torch.float64))
    f1 = torch.relu(head.fc1.bias)
    expect = torch.relu(head.fc2.weight @ f1 + head.fc2.bias)
    torch.testing.assert_close(feature, expect.expand(2, -1))
    torch.testing.assert_close(cls, (head.cls.weight @ expect + head.cls.bias).expand(2, -1))
    assert attr.shape == (2, 3)


def test_box_head_default_dims():
    head = build_detector(tee_config(0), seed=None).box_head
    assert (head.fc2.out_features, head.cls.out_features, head.attr.out_features) == (1024, 1601, 401)


def test_gradients_bifpn_weights(toy_det64):
    det = toy_det64
    gen = torch.Generator().manual_seed(0)
    # random pyramid: untrained backbone maps are too flat to exercise the fusion weights
    maps = {s: torch.randn(1, c, 64 // s, 64 // s, dtype=torch.float64, generator=gen)
            for s, c in TOY.pyramid_channels().items()}
    probe = {s: torch.randn(f.shape, dtype=torch.float64, generator=gen) for s, f in det.bifpn_fuse(maps).items()}

    def loss():
        return sum((probe[s] * f).sum() for s, f in det.bifpn_fuse(maps).items())

    weights = {f"node{i}": m.weight for i, m in enumerate(det.bifpn.modules()) if isinstance(m, FusionNode)}
    assert len(weights) == 8 * TOY.bifpn_repeats
    assert max(finite_difference_check(loss, weights).values()) < 1e-4


def test_gradients_box_head():
    head = BoxHead(3, 2, 5, 4, 2).double()
    pooled = torch.randn(3, 3, 2, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(1))

    def loss():
        f, c, a = head(pooled)
        return (f.sin().sum() + torch.log_softmax(c, -1)[:, 1].sum() + a.pow(2).sum())

    params = dict(head.named_parameters())
    assert max(finite_difference_check(loss, params).values()) < 1e-4


def test_gradients_backbone_subset(toy_det64):
    det = toy_det64
    img = torch.randn(1, 3, 64, 64, dtype=torch.float64, generator=torch.Generator().manual_seed(2))

    def loss():
        return sum(m.tanh().sum() for m in det.forward_backbone(img).values())

    params = {"stem": det.backbone.stem.weight, "last_stage": next(det.backbone.stages[-1].parameters())}
    assert max(finite_difference_check(loss, params, max_entries=20).values()) < 1e-4


@pytest.mark.parametrize("name", ["tee-toy", "tee-0"])
def test_live_matches_cost_model(name):
    cfg = get_preset(name)
    det = build_detector(cfg, seed=None)
    s = cfg.image_size

    def run():
        fused = det.bifpn_fuse(det.forward_backbone(torch.zeros(1, 3, s, s)))
        det.rpn_outputs(fused)
        det.box_head(torch.zeros(cfg.num_proposals, cfg.bifpn_channels, cfg.roi_size, cfg.roi_size))

    rep = count_arch(cfg)
    assert sum(p.numel() for p in det.parameters()) == rep.params
    assert count_macs(det, run) == rep.flops


def _toy_image(seed=0, size=(50, 40)):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)


def test_extract_regions_contract_and_determinism(toy_det):
    det = build_detector(dataclasses.replace(TOY, score_floor=0.0))
    img, orig = preprocess_image(_toy_image(), 64)
    a = extract_regions(img, det, max_regions=10, image_id="x", original_size=orig)
    b = extract_regions(img, det, max_regions=10, image_id="x", original_size=orig)
    assert 0 < len(a) <= 10 and a.image_size == (50, 40)
    a.validate(10)
    assert a.features.shape == (len(a), TOY.feature_dim)
    assert a.to_bytes() == b.to_bytes()


def test_extract_regions_can_be_empty():
    det = build_detector(dataclasses.replace(TOY, score_floor=0.999))
    rs = extract_regions(preprocess_image(_toy_image(), 64)[0], det)
    assert len(rs) == 0 and rs.features.shape == (0, TOY.feature_dim)


def _regions(image_id, n, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    boxes = np.c_[rng.uniform(0, 10, (n, 2)), rng.uniform(11, 20, (n, 2))]
    return RegionSet(image_id, (20, 20), boxes, np.sort(rng.random(n))[::-1], rng.integers(0, 5, n),
                     [f"tag {i}" for i in range(n)], rng.normal(size=(n, dim)))


def test_region_store_round_trip_bit_exact(tmp_path):
    sets = [_regions("a", 3), _regions("b", 0), _regions("ünï", 5, seed=1)]
    path = tmp_path / "r.bin"
    assert write_regions(path, sets) == 3
    back = read_regions(path)
    for rs in sets:
        got = back[rs.image_id]
        assert got.to_bytes() == rs.to_bytes() and got.tags == rs.tags


def test_region_store_truncated(tmp_path):
    path = tmp_path / "r.bin"
    write_regions(path, [_regions("a", 3)])
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ValueError, match="truncated"):
        read_regions(path)
    path.write_bytes(data[:2])
    with pytest.raises(ValueError, match="truncated"):
        read_regions(path)


def test_regionset_validation():
    rs = _regions("a", 2)
    rs.validate()
    with pytest.raises(ValueError):
        rs.validate(max_regions=1)
    bad = RegionSet("b", (10, 10), [[0, 0, 20, 5]], [0.5], [0], ["x"], np.zeros((1, 2)))
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        RegionSet("c", (10, 10), [[0, 0, 2, 2]], [0.5], [0], [], np.zeros((1, 2)))

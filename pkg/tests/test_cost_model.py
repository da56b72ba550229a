import dataclasses

import pytest
from hypothesis import given, strategies as st

from minivlm.configs import DETECTOR_PRESETS, TRANSFORMER_PRESETS, get_preset
from minivlm.cost_model import (_BIASED, R101_F, CostReport, LayerSpec, compare, count_arch, count_layer, expand_arch, layer,
                                report_from_layers)


def test_linear_example():
    assert count_layer(layer("linear", bias=True, in_features=1024, out_features=1024)) == (1_049_600, 1_048_576)


def test_pointwise_example():
    p, _ = count_layer(layer("pointwise-conv", bias=True, in_channels=64, out_channels=64, out_h=1, out_w=1))
    assert p == 4_160


def test_attention_block_matches_enumeration():
    # 55,683,840 enumerated multiply by multiply: four n x d x d projections plus
    # per-head score and weighted-value products (enumerated independently)
    p, f = count_layer(layer("attention-block", hidden=384, heads=12, seq=85))
    assert f == 55_683_840
    assert p == 4 * (384 * 384 + 384)


def test_layerspec_rejects_bad_shapes():
    with pytest.raises(ValueError, match="unknown"):
        layer("maxout", channels=3)
    with pytest.raises(ValueError):
        layer("linear", in_features=4)  # missing out_features
    with pytest.raises(ValueError):
        layer("linear", in_features=4, out_features=4, kernel=3)  # extra
    with pytest.raises(ValueError):
        layer("norm", channels=0)
    with pytest.raises(ValueError):
        layer("norm", channels=2.5)


def test_norm_and_embedding_have_no_flops():
    assert count_layer(layer("norm", channels=384)) == (768, 0)
    assert count_layer(layer("embedding", num_embeddings=30522, dim=384)) == (30522 * 384, 0)


@pytest.mark.parametrize("name,params,flops", [("minilm", 45.7e6, 2.3e9), ("bert-base", 134.3e6, 8.2e9)])
def test_transformer_examples(name, params, flops):
    rep = count_arch(get_preset(name), (50, 35))
    assert rep.params == pytest.approx(params, rel=0.03)
    assert rep.flops == pytest.approx(flops, rel=0.15)
    assert [c for c, _, _ in rep.components] == ["embedding", "encoder", "pooler", "decoder"]


def test_tee0_example_and_components():
    rep = count_arch(get_preset("tee-0"))
    assert [c for c, _, _ in rep.components] == ["backbone", "bifpn", "rpn", "box_head", "attribute_head"]
    rpn_p, _ = rep.component("rpn")
    assert rpn_p == 975  # two 1x1 convs, 64 -> 12 and 64 -> 3, with biases


def test_totals_are_sums():
    for cfg in [*TRANSFORMER_PRESETS.values(), *DETECTOR_PRESETS.values(), R101_F]:
        rep = count_arch(cfg)
        assert rep.params == sum(p for _, p, _ in rep.components)
        assert rep.flops == sum(f for _, _, f in rep.components)
        layers = expand_arch(cfg)
        assert rep.params == sum(count_layer(s)[0] for _, s in layers)
        assert rep.flops == sum(count_layer(s)[1] for _, s in layers)


def test_incompatible_input_spec():
    with pytest.raises(ValueError):
        count_arch(get_preset("minilm"), 576)
    with pytest.raises(ValueError):
        count_arch(get_preset("tee-0"), (50, 35, 1))
    with pytest.raises(ValueError):
        count_arch(R101_F, 512)


def test_compare_examples():
    tee, r101 = count_arch(get_preset("tee-0")), count_arch(R101_F)
    t = compare([tee, r101], baseline="r101-f")
    assert 0.10 < t.row("tee-0").params_ratio < 0.14
    assert t.row("tee-0").flops_ratio < 0.02
    same = compare([tee, tee])
    assert all(r.params_ratio == 1.0 and r.flops_ratio == 1.0 for r in same.rows)
    mini, base = count_arch(get_preset("minilm")), count_arch(get_preset("bert-base"))
    row = compare([mini, base]).row("minilm")
    assert row.params_ratio == pytest.approx(0.340, abs=0.005)
    assert row.flops_ratio == pytest.approx(0.28, abs=0.01)
    with pytest.raises(ValueError):
        compare([])
    with pytest.raises(KeyError):
        compare([tee, r101], baseline="nope")


def test_report_rejects_negative():
    with pytest.raises(ValueError):
        CostReport("x", (("a", -1, 0),))


def test_report_formats():
    rep = count_arch(get_preset("toy"))
    d = rep.to_dict()
    assert d["totals"]["params"] == rep.params and "total" in rep.format_table()


# -- properties ---------------------------------------------------------------

_SHAPES = {
    "standard-conv": dict(in_channels=3, out_channels=4, kernel=3, out_h=5, out_w=6),
    "depthwise-conv": dict(channels=4, kernel=3, out_h=5, out_w=6),
    "pointwise-conv": dict(in_channels=3, out_channels=4, out_h=5, out_w=6),
    "linear": dict(in_features=7, out_features=5, rows=3),
    "embedding": dict(num_embeddings=10, dim=4),
    "attention-block": dict(hidden=8, heads=2, seq=5),
    "ffn-block": dict(hidden=8, intermediate=16, seq=5),
    "norm": dict(channels=6),
}


@given(kind=st.sampled_from(sorted(_SHAPES)), bump=st.integers(1, 50), data=st.data(), bias=st.booleans())
def test_monotone_in_every_shape_parameter(kind, bump, data, bias):
    shape = dict(_SHAPES[kind])
    bias = bias and kind in _BIASED
    key = data.draw(st.sampled_from(sorted(shape)))
    if kind == "attention-block" and key in ("heads", "hidden"):
        bump *= shape["heads"]  # hidden stays divisible by heads
        key = "hidden"
    p0, f0 = count_layer(LayerSpec(kind, shape, bias))
    shape[key] += bump
    p1, f1 = count_layer(LayerSpec(kind, shape, bias))
    assert p1 >= p0 and f1 >= f0


@given(r=st.integers(0, 100), t=st.integers(1, 100))
def test_doubling_sequence_increases_flops_only(r, t):
    cfg = get_preset("minilm")
    a, b = count_arch(cfg, (r, t)), count_arch(cfg, (2 * r, 2 * t))
    assert b.flops > a.flops and b.params == a.params


@given(hidden=st.sampled_from([4, 8, 12]), layers=st.integers(1, 3), seq=st.integers(1, 20))
def test_additivity_random_transformers(hidden, layers, seq):
    cfg = dataclasses.replace(get_preset("toy"), hidden_size=hidden, num_layers=layers, num_heads=2)
    rep = count_arch(cfg, (seq, seq))
    assert rep.params == sum(count_layer(s)[0] for _, s in expand_arch(cfg, (seq, seq)))

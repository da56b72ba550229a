import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from minivlm.checkpoint import load_checkpoint, load_into, read_manifest, save_checkpoint
from minivlm.configs import TRANSFORMER_PRESETS, get_preset
from minivlm.cost_model import count_arch
from minivlm.detector import RegionSet
from minivlm.flops import count_macs
from minivlm.fusion import (TAG_SEGMENT, TEXT_SEGMENT, FusionBatch, SpecialTokens, WhitespaceTokenizer, assemble_input,
                            attention_mask_for_task, build_transformer, collate, count_parameters,
                            encode_box_positions, forward)

from conftest import GRAD_CFG, make_regions
from oracles import finite_difference_check

SP = SpecialTokens()


@pytest.fixture(scope="module")
def toy_model():
    return build_transformer(get_preset("toy"), seed=0, dtype=torch.float64)


@pytest.fixture(scope="module")
def grad_model():
    return build_transformer(GRAD_CFG, seed=0, dtype=torch.float64)


# -- inputs -------------------------------------------------------------------

def test_box_encoding_example():
    enc = encode_box_positions([[10, 20, 50, 60]], (100, 200))
    np.testing.assert_allclose(enc, [[0.1, 0.1, 0.5, 0.3, 0.4, 0.2]])
    np.testing.assert_allclose(encode_box_positions([[0, 0, 100, 200]], (100, 200)), [[0, 0, 1, 1, 1, 1]])
    with pytest.raises(ValueError):
        encode_box_positions([[5, 5, 5, 9]], (10, 10))


def test_layout_and_segments():
    rs = make_regions(3, 4)
    x = assemble_input(rs, [20, 21], [10, 11, 12], "vqa", SP)
    assert x.input_ids.tolist() == [SP.cls, 10, 11, 12, SP.sep, 20, 21, SP.sep]
    assert x.segment_ids.tolist() == [TEXT_SEGMENT] * 5 + [TAG_SEGMENT] * 3
    assert x.position_ids.tolist() == list(range(8))
    assert x.sentence_span == (1, 4) and x.tag_span == (5, 7)
    assert x.region_inputs.shape == (3, 4 + 6) and x.total_len == 11
    np.testing.assert_allclose(x.region_inputs[:, 4:].double().numpy(),
                               encode_box_positions(rs.boxes, rs.image_size), atol=1e-6)


def test_empty_sentence_and_no_regions():
    x = assemble_input(RegionSet.empty("e", (10, 10), 4), [], [], "vqa", SP)
    assert x.input_ids.tolist() == [SP.cls, SP.sep, SP.sep]
    assert x.region_inputs.shape == (0, 10) and x.total_len == 3
    with pytest.raises(ValueError):
        assemble_input(None, [], [], "vqa", SP)


def test_length_for_default_budget():
    x = assemble_input(make_regions(50, 4), [], list(range(10, 42)), "vqa", SP)
    assert x.text_len == 35 and x.total_len == 85


def test_truncation_order():
    rs = make_regions(4, 4)
    x = assemble_input(rs, [20, 21, 22], [10, 11, 12, 13], "vqa", SP, max_length=4 + 3 + 5)
    assert x.truncated == {"sentence": 2}
    assert x.input_ids.tolist() == [SP.cls, 10, 11, SP.sep, 20, 21, 22, SP.sep]
    x = assemble_input(rs, [20, 21, 22], [10, 11, 12, 13], "vqa", SP, max_length=4 + 3 + 1)
    assert x.truncated == {"sentence": 4, "tags": 2}
    assert x.total_len == 8
    with pytest.raises(ValueError, match="budget"):
        assemble_input(rs, [], [], "vqa", SP, max_length=6)


def test_unknown_task():
    with pytest.raises(ValueError):
        assemble_input(make_regions(1, 4), [], [], "dance", SP)


def test_mask_examples():
    full = attention_mask_for_task("vqa", 3, 2)
    assert full.shape == (5, 5) and bool((full == 1).all())
    cap = attention_mask_for_task("caption", 3, 2)
    assert cap.tolist() == [
        [1, 0, 0, 1, 1],
        [1, 1, 0, 1, 1],
        [1, 1, 1, 1, 1],
        [0, 0, 0, 1, 1],
        [0, 0, 0, 1, 1],
    ]


def test_collate_padding():
    a = assemble_input(make_regions(2, 4), [], [10], "vqa", SP)
    b = assemble_input(make_regions(3, 4, seed=1), [20], [10, 11, 12], "vqa", SP)
    batch = collate([a, b])
    assert batch.input_ids.shape == (2, 7) and batch.region_inputs.shape == (2, 3, 10)
    assert batch.text_valid[0].tolist() == [True] * 4 + [False] * 3
    assert batch.region_valid[0].tolist() == [True, True, False]
    m = batch.attention_mask[0]
    pad = 4
    assert m[pad].tolist() == [i == pad for i in range(10)]
    assert not m[:4, 4:7].any() and not m[:4, 9].any()


# -- model --------------------------------------------------------------------

def _input(seed=0, k=4, task="vqa", n_text=5, dim=32):
    rng = np.random.default_rng(seed)
    return assemble_input(make_regions(k, dim, seed), rng.integers(5, 60, 2).tolist(),
                          rng.integers(5, 60, n_text).tolist(), task, SP, dtype=torch.float64)


def test_output_shapes(toy_model):
    out = forward(_input(), toy_model)
    assert out.hidden.shape == (1, 10 + 4, 32)
    assert out.itm_logits.shape == (1, 2) and out.mlm_logits.shape == (1, 10, 128)
    assert forward(_input(), toy_model, with_vocab=False).mlm_logits is None


def test_mask_shape_checked(toy_model):
    batch = collate([_input()])
    batch.attention_mask = batch.attention_mask[:, :-1, :-1]
    with pytest.raises(ValueError, match="does not match"):
        toy_model(batch)
    batch = collate([_input()])
    batch.attention_mask[0, 3] = False
    with pytest.raises(ValueError, match="at least one"):
        toy_model(batch)


def test_masked_key_perturbation_has_no_effect(toy_model):
    # in caption mode the context never sees the caption, so caption token changes leave it fixed
    x = _input(task="caption")
    y = _input(task="caption")
    y.input_ids[1:4] = torch.tensor([7, 8, 9])
    hx, hy = toy_model(x).hidden, toy_model(y).hidden
    t = x.caption_len
    torch.testing.assert_close(hx[0, t:], hy[0, t:], rtol=0, atol=1e-12)


def test_caption_causal_through_network(toy_model):
    x = _input(task="caption", n_text=6)
    y = _input(task="caption", n_text=6)
    y.input_ids[5:7] = torch.tensor([50, 51])  # change the last two caption tokens
    hx, hy = toy_model(x).hidden, toy_model(y).hidden
    torch.testing.assert_close(hx[0, :5], hy[0, :5], rtol=0, atol=1e-12)
    assert not torch.allclose(hx[0, 5], hy[0, 5])


@given(seed=st.integers(0, 1000))
def test_region_permutation_equivariance(seed):
    model = build_transformer(get_preset("toy"), seed=0, dtype=torch.float64)
    x = _input(seed)
    perm = torch.from_numpy(np.random.default_rng(seed).permutation(x.num_regions))
    y = _input(seed)
    y.region_inputs = x.region_inputs[perm]
    hx, hy = model(x).hidden[0], model(y).hidden[0]
    t = x.text_len
    torch.testing.assert_close(hx[:t], hy[:t], rtol=0, atol=1e-10)
    torch.testing.assert_close(hx[t:][perm], hy[t:], rtol=0, atol=1e-10)


def test_attention_rows_sum_to_one(toy_model):
    toy_model.keep_attention(True)
    try:
        batch = collate([_input(0, k=2), _input(1, k=4, task="caption", n_text=3)])
        toy_model(batch)
        for probs in toy_model.attention_probs():
            torch.testing.assert_close(probs.sum(-1), torch.ones(probs.shape[:-1], dtype=probs.dtype))
            assert (probs[~batch.attention_mask[:, None].expand_as(probs)] == 0).all()
    finally:
        toy_model.keep_attention(False)


def test_batched_equals_single(toy_model):
    a, b = _input(0, k=2), _input(1, k=4, n_text=3)
    out = toy_model(collate([a, b]))
    single = toy_model(a)
    torch.testing.assert_close(out.itm_logits[0], single.itm_logits[0], rtol=0, atol=1e-10)


def test_deterministic_build_and_forward():
    cfg = get_preset("toy")
    m1, m2 = build_transformer(cfg, seed=3), build_transformer(cfg, seed=3)
    x = _input()
    x.region_inputs = x.region_inputs.float()
    assert torch.equal(m1(x).mlm_logits, m2(x).mlm_logits)
    assert not torch.equal(build_transformer(cfg, seed=4).pooler.weight, m1.pooler.weight)


def test_init_statistics():
    m = build_transformer(TRANSFORMER_PRESETS["minilm"], seed=0)
    w = m.embeddings.word.weight
    assert float(w.detach().abs().max()) <= 0.04 + 1e-7
    # a N(0, 0.02) truncated at 2 sigma has std 0.02 * 0.8796
    assert float(w.detach().std()) == pytest.approx(0.02 * 0.8796, rel=0.01)
    assert float(m.pooler.bias.detach().abs().max()) == 0.0


def test_gradients_match_finite_differences(grad_model):
    rng = np.random.default_rng(0)
    x = assemble_input(make_regions(3, 4), [6, 7], rng.integers(5, 20, 4).tolist(), "pretrain-mlm", SP,
                       dtype=torch.float64)
    target = torch.from_numpy(rng.integers(0, 20, x.text_len))

    def loss():
        out = grad_model(x)
        return (torch.nn.functional.cross_entropy(out.mlm_logits[0], target)
                + torch.log_softmax(out.itm_logits, -1)[0, 1])

    params = dict(grad_model.named_parameters())
    # softmax is shift invariant, so key biases get an exactly zero gradient
    key_bias = [n for n in params if n.endswith("key.bias")]
    for n in key_bias:
        assert float(torch.autograd.grad(loss(), params[n])[0].abs().max()) < 1e-12
        del params[n]
    errors = finite_difference_check(loss, params, max_entries=12)
    assert max(errors.values()) < 1e-4, {k: v for k, v in errors.items() if v >= 1e-4}


def _batch(cfg, regions, tokens, dtype=torch.float32):
    n = regions + tokens
    return FusionBatch(
        input_ids=torch.full((1, tokens), 5), segment_ids=torch.zeros(1, tokens, dtype=torch.long),
        position_ids=torch.arange(tokens)[None], text_valid=torch.ones(1, tokens, dtype=torch.bool),
        region_inputs=torch.zeros(1, regions, cfg.region_feature_dim + 6, dtype=dtype),
        region_valid=torch.ones(1, regions, dtype=torch.bool), attention_mask=torch.ones(1, n, n, dtype=torch.bool))


@pytest.mark.parametrize("name", list(TRANSFORMER_PRESETS))
def test_live_matches_cost_model(name):
    cfg = TRANSFORMER_PRESETS[name]
    model = build_transformer(cfg, seed=None)
    rep = count_arch(cfg, (50, 35))
    assert count_parameters(model) == rep.params
    assert count_macs(model, model, _batch(cfg, 50, 35)) == rep.flops


# -- persistence --------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, toy_model):
    path = save_checkpoint(toy_model, tmp_path / "m.npz", meta={"note": "x"})
    state = load_checkpoint(path)
    assert all(torch.equal(state[k], v) for k, v in toy_model.state_dict().items())
    assert read_manifest(path)["meta"] == {"note": "x"}
    fresh = build_transformer(get_preset("toy"), seed=9, dtype=torch.float64)
    load_into(fresh, path)
    x = _input()
    assert torch.equal(fresh(x).mlm_logits, toy_model(x).mlm_logits)


def test_checkpoint_rejects_tampering(tmp_path):
    path = save_checkpoint({"a": torch.zeros(2)}, tmp_path / "m.npz")
    np.savez(tmp_path / "bad.npz", a=np.zeros(2))
    with pytest.raises(ValueError, match="manifest"):
        load_checkpoint(tmp_path / "bad.npz")
    with np.load(path) as z:
        arrays = dict(z)
    arrays["a"] = np.zeros(3)
    np.savez(tmp_path / "shape.npz", **arrays)
    with pytest.raises(ValueError, match="does not match"):
        load_checkpoint(tmp_path / "shape.npz")


def test_tokenizer_round_trip(tmp_path):
    tok = WhitespaceTokenizer.from_corpus(["A dog runs.", "a cat sits"])
    ids = tok.encode("a dog sits, quietly")
    assert ids[-1] == tok.specials.unk
    assert tok.decode(ids) == "a dog sits [UNK] [UNK]"
    tok.save(tmp_path / "v.txt")
    back = WhitespaceTokenizer.load(tmp_path / "v.txt")
    assert back.vocab == tok.vocab
    (tmp_path / "bad.txt").write_text("x\ny\n")
    with pytest.raises(ValueError):
        WhitespaceTokenizer.load(tmp_path / "bad.txt")

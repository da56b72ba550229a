import logging
import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy import stats

from minivlm.configs import get_preset
from minivlm.detector import RegionSet
from minivlm.fusion import SpecialTokens, build_transformer
from minivlm.pretrain import (IGNORE_INDEX, NoMaskedPositionsWarning, PretrainRecord, StubTeacher, Tag,
                              compute_losses, evaluate_loss, fixed_batches, ingest_distilled, itm_corrupt, itm_loss,
                              make_optimizer, make_pretrain_batch, mask_tokens, mlm_loss, pretrain_step, read_corpus,
                              synthetic_corpus, train, write_corpus)

from oracles import manual_cross_entropy

SP = SpecialTokens()


# -- masking ------------------------------------------------------------------

def test_mask_rate_zero_and_one():
    ids = torch.tensor([[SP.cls, 10, 11, SP.sep, 12, SP.sep, SP.pad]])
    none = mask_tokens(ids, 0.0, 0)
    assert none.num_masked == 0 and torch.equal(none.input_ids, ids)
    assert (none.labels == IGNORE_INDEX).all()
    every = mask_tokens(ids, 1.0, 0)
    assert every.input_ids.tolist() == [[SP.cls, SP.mask, SP.mask, SP.sep, SP.mask, SP.sep, SP.pad]]
    assert every.labels.tolist() == [[-100, 10, 11, -100, 12, -100, -100]]
    with pytest.raises(ValueError):
        mask_tokens(ids, 1.5, 0)


def test_mask_rate_binomial():
    n = 100_000
    ids = torch.full((n,), 50)
    k = mask_tokens(ids, 0.15, 7).num_masked
    lo, hi = stats.binom.ppf([0.0005, 0.9995], n, 0.15)
    assert lo <= k <= hi


def test_mask_eligibility_and_determinism():
    ids = torch.arange(10, 30)[None]
    eligible = torch.zeros_like(ids, dtype=torch.bool)
    eligible[0, :5] = True
    m = mask_tokens(ids, 1.0, 0, eligible)
    assert m.positions[0].tolist() == [True] * 5 + [False] * 15
    a, b = mask_tokens(ids, 0.5, 3), mask_tokens(ids, 0.5, 3)
    assert torch.equal(a.input_ids, b.input_ids)


def test_bert_strategy_split():
    n = 60_000
    ids = torch.full((n,), 50)
    m = mask_tokens(ids, 1.0, 1, strategy="bert", vocab_size=1000)
    out = m.input_ids
    frac_mask = float((out == SP.mask).double().mean())
    frac_keep = float((out == 50).double().mean())  # includes random draws of id 50 (p = 0.1/1000)
    assert abs(frac_mask - 0.8) < 0.01 and abs(frac_keep - 0.1) < 0.01
    assert (m.labels == 50).all()
    with pytest.raises(ValueError):
        mask_tokens(ids, 0.1, 1, strategy="bert")


# -- losses -------------------------------------------------------------------

def test_mlm_uniform_logits():
    v = 30522
    logits = torch.zeros(1, 3, v, dtype=torch.float64)
    labels = torch.tensor([[IGNORE_INDEX, 7, 9]])
    assert float(mlm_loss(logits, labels)) == pytest.approx(math.log(v), abs=1e-9)
    assert math.log(v) == pytest.approx(10.326, abs=1e-3)


def test_mlm_confident_and_hand_case():
    logits = torch.full((1, 2, 5), -50.0, dtype=torch.float64)
    logits[0, 0, 3] = logits[0, 1, 1] = 50.0
    assert float(mlm_loss(logits, torch.tensor([[3, 1]]))) < 1e-12
    rows = [[2.0, 0.0, -1.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]]
    labels = [0, IGNORE_INDEX, 1]
    expect = (manual_cross_entropy(rows[0], 0) + manual_cross_entropy(rows[2], 1)) / 2
    got = mlm_loss(torch.tensor([rows], dtype=torch.float64), torch.tensor([labels]))
    assert float(got) == pytest.approx(expect, abs=1e-12)


def test_mlm_no_masks_warns():
    logits = torch.randn(1, 3, 5, requires_grad=True)
    with pytest.warns(NoMaskedPositionsWarning):
        loss = mlm_loss(logits, torch.full((1, 3), IGNORE_INDEX))
    assert loss.item() == 0.0
    loss.backward()
    assert (logits.grad == 0).all()


def test_itm_loss_cases():
    assert float(itm_loss(torch.zeros(4, 2, dtype=torch.float64), [1, 0, 1, 1])) == pytest.approx(math.log(2))
    sep = torch.tensor([[-40.0, 40.0], [40.0, -40.0]], dtype=torch.float64)
    assert float(itm_loss(sep, [1, 0])) < 1e-12
    rows = [[0.3, -0.2], [1.0, 2.0], [-1.5, 0.5]]
    labels = [0, 1, 0]
    expect = sum(manual_cross_entropy(r, y) for r, y in zip(rows, labels)) / 3
    assert float(itm_loss(torch.tensor(rows, dtype=torch.float64), labels)) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(ValueError):
        itm_loss(torch.zeros(2, 3), [0, 1])


# -- ITM corruption -----------------------------------------------------------

def _records(n):
    return [PretrainRecord(f"r{i}", f"img{i}", f"caption {i}", "ground-truth", (Tag(f"t{i}", "detector-predicted"),))
            for i in range(n)]


def test_corrupt_prob_zero_and_one():
    recs = _records(5)
    out, labels = itm_corrupt(recs, 0.0, 0)
    assert out == recs and labels.tolist() == [1] * 5
    out, labels = itm_corrupt(_records(2), 1.0, 0)
    assert [r.caption for r in out] == ["caption 1", "caption 0"]
    assert [r.tag_names for r in out] == [["t0"], ["t1"]] and labels.tolist() == [0, 0]
    with pytest.raises(ValueError):
        itm_corrupt(_records(1), 0.5, 0)


def test_corrupt_statistics():
    recs = _records(8)
    rng = np.random.default_rng(0)
    total, n, partners = 0, 0, np.zeros((8, 8))
    for _ in range(1250):
        out, labels = itm_corrupt(recs, 0.5, rng)
        total += int((labels == 0).sum())
        n += len(labels)
        for i, (r, lab) in enumerate(zip(out, labels)):
            if lab == 0:
                j = int(r.caption.split()[-1])
                assert j != i
                partners[i, j] += 1
    lo, hi = stats.binom.ppf([0.0005, 0.9995], n, 0.5)
    assert lo <= total <= hi
    # partners uniform over the other 7 records
    off = partners[~np.eye(8, dtype=bool)].reshape(8, 7)
    assert stats.chisquare(off.ravel()).pvalue > 1e-4


@given(n=st.integers(2, 12), seed=st.integers(0, 10_000))
def test_corrupt_never_keeps_own_caption(n, seed):
    out, labels = itm_corrupt(_records(n), 1.0, seed)
    assert all(r.caption != f"caption {i}" for i, r in enumerate(out)) and not labels.any()


# -- corpus ingestion -----------------------------------------------------------

def _features():
    rs = RegionSet("a", (10, 10), [[0, 0, 5, 5], [1, 1, 9, 9]], [0.9, 0.4], [1, 2], ["dog", "ball"], np.zeros((2, 3)))
    return {"a": rs, "b": RegionSet.empty("b", (10, 10), 3)}


def test_ingest_empty_source():
    assert list(ingest_distilled([], _features())) == []


def test_ingest_with_stub_teacher_and_tags():
    recs = list(ingest_distilled([{"image_id": "a", "verified_tags": ["frisbee", "dog"]}], _features(),
                                 StubTeacher()))
    assert len(recs) == 1
    r = recs[0]
    assert r.caption == "an image of dog and ball" and r.caption_source == "teacher"
    assert [(t.name, t.provenance) for t in r.tags] == [
        ("frisbee", "human-verified"), ("dog", "human-verified"), ("ball", "detector-predicted")]


def test_ingest_skips_missing(caplog):
    source = [{"image_id": "zzz", "caption": "x"}, {"image_id": "b", "caption": "  "}, {"image_id": "a", "caption": "hi"}]
    with caplog.at_level(logging.WARNING):
        recs = list(ingest_distilled(source, _features()))
    assert [r.image_id for r in recs] == ["a"] and recs[0].caption_source == "ground-truth"
    assert "zzz" in caplog.text and "empty caption" in caplog.text


def test_reingest_is_byte_identical(tmp_path):
    source = [{"image_id": "a", "caption": "a dog"}, {"image_id": "b", "caption": "nothing ünïcode"}]
    p1, p2 = tmp_path / "1.jsonl", tmp_path / "2.jsonl"
    write_corpus(p1, ingest_distilled(source, _features()))
    write_corpus(p2, ingest_distilled(source, _features()))
    assert p1.read_bytes() == p2.read_bytes()
    assert read_corpus(p1) == list(ingest_distilled(source, _features()))


# -- training -----------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return synthetic_corpus(32, seed=0)


def _batch(corpus, seed=0, **kw):
    records, feats, tok = corpus
    return make_pretrain_batch(records[:8], feats, tok, get_preset("toy"), np.random.default_rng(seed), **kw)


def test_batch_masks_only_text(corpus):
    pb = _batch(corpus, mask_rate=1.0)
    ids = pb.batch.input_ids
    # specials and padding are never selected
    assert not (pb.masked.positions & ~pb.batch.text_valid).any()
    assert (ids[pb.masked.positions] == SP.mask).all()
    assert pb.itm_labels.shape == (8,)
    no_tags = _batch(corpus, mask_rate=1.0, mask_tags=False)
    assert no_tags.masked.num_masked < pb.masked.num_masked


def test_zero_lr_leaves_weights(corpus):
    model = build_transformer(get_preset("toy"), seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    opt, sched = make_optimizer(model, lr=0.0, total_steps=3)
    m = pretrain_step(_batch(corpus), model, opt, sched)
    assert m["lr"] == 0.0
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_zero_itm_weight_gives_no_itm_gradient(corpus):
    model = build_transformer(get_preset("toy"), seed=0)
    losses = compute_losses(model, _batch(corpus), (1.0, 0.0))
    losses["total"].backward()
    assert "itm" not in losses and model.itm_head.weight.grad is None
    assert model.mlm_decoder.weight.grad is not None
    model.zero_grad(set_to_none=True)
    compute_losses(model, _batch(corpus), (0.0, 1.0))["total"].backward()
    assert model.mlm_decoder.weight.grad is None and model.itm_head.weight.grad is not None


def test_nan_loss_raises(corpus):
    model = build_transformer(get_preset("toy"), seed=0)
    with torch.no_grad():
        model.itm_head.bias.fill_(float("nan"))
    opt, sched = make_optimizer(model, total_steps=1)
    with pytest.raises(FloatingPointError):
        pretrain_step(_batch(corpus), model, opt, sched)


def test_schedule_decays_linearly():
    model = torch.nn.Linear(2, 2)
    opt, sched = make_optimizer(model, lr=1.0, total_steps=4)
    lrs = []
    for _ in range(4):
        lrs.append(opt.param_groups[0]["lr"])
        opt.step()
        sched.step()
    assert lrs == [1.0, 0.75, 0.5, 0.25]


def test_training_reduces_loss_and_is_deterministic():
    records, feats, tok = synthetic_corpus(64, seed=0)
    cfg = get_preset("toy")
    held = fixed_batches(records, feats, tok, cfg, 16, seed=99)
    before = evaluate_loss(build_transformer(cfg, seed=0), held)
    model, hist = train(records, feats, tok, cfg, steps=200, seed=0, lr=1e-4)
    after = evaluate_loss(model, held)
    assert len(hist) == 200 and all(math.isfinite(h["total"]) for h in hist)
    assert after < before
    again, _ = train(records, feats, tok, cfg, steps=5, seed=0, lr=1e-4)
    again2, _ = train(records, feats, tok, cfg, steps=5, seed=0, lr=1e-4)
    assert all(torch.equal(a, b) for a, b in zip(again.state_dict().values(), again2.state_dict().values()))

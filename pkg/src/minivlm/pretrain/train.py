"""Batch construction, the optimizer step and a small training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from ..configs import TransformerConfig
from ..detector.regions import RegionSet
from ..fusion.inputs import FusionBatch, assemble_input, collate
from ..fusion.model import FusionTransformer, build_transformer
from ..fusion.tokenizer import Tokenizer, WhitespaceTokenizer
from .corpus import PretrainRecord, Tag, ingest_distilled
from .objectives import MaskedBatch, as_generator, itm_corrupt, itm_loss, mlm_loss, mask_tokens


@dataclass
class PretrainBatch:
    batch: FusionBatch  # input ids already carry the [MASK] substitutions
    masked: MaskedBatch
    itm_labels: torch.Tensor  # (B,)


def make_pretrain_batch(records: Sequence[PretrainRecord], features: Mapping[str, RegionSet],
                        tokenizer: Tokenizer, cfg: TransformerConfig, rng=None, mask_rate: float = 0.15,
                        corrupt_prob: float = 0.5, mask_tags: bool = True, strategy: str = "mask",
                        dtype=torch.float32) -> PretrainBatch:
    rng = as_generator(rng)
    records, labels = itm_corrupt(records, corrupt_prob, rng)
    sp = tokenizer.specials
    examples = []
    for r in records:
        examples.append(assemble_input(
            features[r.image_id], tokenizer.encode(" ".join(r.tag_names)), tokenizer.encode(r.caption),
            "pretrain-mlm", sp, max_length=cfg.max_positions, feature_dim=cfg.region_feature_dim, dtype=dtype))
    batch = collate(examples, pad_id=sp.pad)
    eligible = torch.zeros_like(batch.input_ids, dtype=torch.bool)
    for i, e in enumerate(examples):
        eligible[i, e.sentence_span[0]:e.sentence_span[1]] = True
        if mask_tags:
            eligible[i, e.tag_span[0]:e.tag_span[1]] = True
    masked = mask_tokens(batch.input_ids, mask_rate, rng, eligible, sp, strategy, tokenizer.vocab_size)
    batch.input_ids = masked.input_ids
    return PretrainBatch(batch, masked, torch.from_numpy(labels))


def compute_losses(model: FusionTransformer, pb: PretrainBatch, loss_weights=(1.0, 1.0)) -> dict[str, torch.Tensor]:
    """Weighted MLM + ITM. A zero weight skips that term entirely."""
    w_mlm, w_itm = loss_weights
    out = model(pb.batch, with_vocab=w_mlm != 0)
    losses: dict[str, torch.Tensor] = {}
    total = out.pooled.new_zeros(())
    if w_mlm != 0:
        losses["mlm"] = mlm_loss(out.mlm_logits, pb.masked)
        total = total + w_mlm * losses["mlm"]
    if w_itm != 0:
        losses["itm"] = itm_loss(out.itm_logits, pb.itm_labels)
        total = total + w_itm * losses["itm"]
    losses["total"] = total
    return losses


def make_optimizer(model: torch.nn.Module, lr: float = 1e-4, weight_decay: float = 0.01, total_steps: int = 1,
                   warmup_steps: int = 0):
    """AdamW with linear warmup then linear decay to zero at ``total_steps``."""
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)

    def factor(step: int) -> float:
        if warmup_steps and step < warmup_steps:
            return (step + 1) / warmup_steps
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup_steps))

    return opt, torch.optim.lr_scheduler.LambdaLR(opt, factor)


def pretrain_step(pb: PretrainBatch, model: FusionTransformer, optimizer, scheduler=None,
                  loss_weights=(1.0, 1.0)) -> dict[str, float]:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    losses = compute_losses(model, pb, loss_weights)
    total = losses["total"]
    if not torch.isfinite(total):
        raise FloatingPointError(f"pre-training loss diverged: {total.item()}")
    total.backward()
    lr = optimizer.param_groups[0]["lr"]
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    metrics = {k: float(v.detach()) for k, v in losses.items()}
    metrics["lr"] = lr
    return metrics


@torch.no_grad()
def evaluate_loss(model: FusionTransformer, batches: Sequence[PretrainBatch], loss_weights=(1.0, 1.0)) -> float:
    was_training = model.training
    model.eval()
    total = sum(float(compute_losses(model, pb, loss_weights)["total"]) * len(pb.batch) for pb in batches)
    model.train(was_training)
    return total / sum(len(pb.batch) for pb in batches)


def fixed_batches(records, features, tokenizer, cfg, batch_size: int, seed: int, **kw) -> list[PretrainBatch]:
    """Deterministic pass over the corpus, used to compare losses before and after training."""
    rng = np.random.default_rng(seed)
    return [make_pretrain_batch(records[i:i + batch_size], features, tokenizer, cfg, rng, **kw)
            for i in range(0, len(records), batch_size) if len(records[i:i + batch_size]) >= 2]


def train(records: Sequence[PretrainRecord], features: Mapping[str, RegionSet], tokenizer: Tokenizer,
          cfg: TransformerConfig, steps: int, seed: int = 0, batch_size: int = 16, lr: float = 1e-4,
          loss_weights=(1.0, 1.0), model: FusionTransformer | None = None, log_every: int = 0,
          logger=None, **batch_kw):
    """Run ``steps`` optimizer steps on random batches; returns (model, per-step metrics)."""
    if len(records) < 2:
        raise ValueError("pre-training needs at least 2 records")
    if tokenizer.vocab_size > cfg.vocab_size:
        raise ValueError(f"tokenizer has {tokenizer.vocab_size} ids but the model only {cfg.vocab_size}")
    rng = np.random.default_rng(seed)
    history = []
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = model if model is not None else build_transformer(cfg, seed=seed)
        opt, sched = make_optimizer(model, lr=lr, total_steps=steps)
        bs = min(batch_size, len(records))
        for step in range(steps):
            idx = rng.choice(len(records), size=bs, replace=False)
            pb = make_pretrain_batch([records[i] for i in idx], features, tokenizer, cfg, rng, **batch_kw)
            m = pretrain_step(pb, model, opt, sched, loss_weights)
            history.append(m)
            if logger is not None and log_every and (step + 1) % log_every == 0:
                logger.info("step %d loss %.4f", step + 1, m["total"])
    model.eval()
    return model, history


# -- synthetic corpus -------------------------------------------------------

_CLASSES = ("dog", "cat", "car", "tree", "person", "horse", "boat", "bird")
_COLOURS = ("red", "blue", "green", "black", "white")
_PLACES = ("street", "park", "beach", "field")


def synthetic_corpus(n: int = 64, feature_dim: int = 32, seed: int = 0, max_regions: int = 4):
    """Records whose captions and tags are tied to the region features.

    Returns (records, features by image id, tokenizer).
    """
    rng = np.random.default_rng(seed)
    protos = rng.normal(size=(len(_CLASSES), feature_dim))
    feats, source = {}, []
    for i in range(n):
        image_id = f"syn{i:04d}"
        k = int(rng.integers(2, max_regions + 1))
        cls = rng.choice(len(_CLASSES), size=k, replace=False)
        xy = rng.uniform(0, 60, size=(k, 2))
        wh = rng.uniform(8, 40, size=(k, 2))
        boxes = np.c_[xy, np.minimum(xy + wh, 100)]
        f = protos[cls] + 0.1 * rng.normal(size=(k, feature_dim))
        scores = np.sort(rng.uniform(0.3, 1.0, k))[::-1]
        feats[image_id] = RegionSet(image_id, (100, 100), boxes, scores, cls, [_CLASSES[c] for c in cls], f)
        colour, place = _COLOURS[rng.integers(len(_COLOURS))], _PLACES[rng.integers(len(_PLACES))]
        caption = f"a {colour} {_CLASSES[cls[0]]} next to a {_CLASSES[cls[1]]} in the {place}"
        source.append({"image_id": image_id, "caption": caption})
    records = list(ingest_distilled(source, feats))
    tok = WhitespaceTokenizer.from_corpus([r.caption for r in records] + list(_CLASSES))
    return records, feats, tok



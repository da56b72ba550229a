"""Greedy caption decoding by repeatedly predicting a trailing [MASK]."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..detector.regions import RegionSet
from ..fusion.inputs import assemble_input, collate
from ..fusion.model import FusionTransformer
from ..fusion.tokenizer import SpecialTokens
from ..pretrain.objectives import mask_tokens, mlm_loss

DEFAULT_MAX_LEN = 20


@dataclass
class CaptionState:
    tokens: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    finished: bool = False
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.max_len < 0:
            raise ValueError("max_len must be non-negative")
        if len(self.tokens) >= self.max_len:
            self.finished = True


def next_token_logits(model: FusionTransformer, regions: RegionSet, tags: Sequence[int], prefix: Sequence[int],
                      specials: SpecialTokens = SpecialTokens()) -> torch.Tensor:
    """Vocabulary logits for the position after ``prefix`` under the caption mask."""
    inp = assemble_input(regions, tags, [*prefix, specials.mask], "caption", specials,
                         max_length=model.cfg.max_positions, feature_dim=model.cfg.region_feature_dim,
                         dtype=model.pooler.weight.dtype)
    if inp.truncated:
        raise ValueError("caption prefix does not fit the position budget")
    out = model(inp)
    return out.mlm_logits[0, 1 + len(prefix)]


@torch.no_grad()
def caption_generate(model: FusionTransformer, regions: RegionSet, tags: Sequence[int] = (),
                     max_len: int = DEFAULT_MAX_LEN, beam: int = 1,
                     specials: SpecialTokens = SpecialTokens()) -> CaptionState:
    """Greedy decoding; stops when ``[SEP]`` is predicted or ``max_len`` tokens exist."""
    if beam != 1:
        raise ValueError("only greedy decoding (beam = 1) is implemented")
    if model.mlm_decoder.out_features == 0:
        raise ValueError("model has an empty vocabulary head")
    was_training = model.training
    model.eval()
    state = CaptionState(max_len=max_len)
    while not state.finished:
        logits = next_token_logits(model, regions, tags, state.tokens, specials)
        logp = torch.log_softmax(logits.double(), -1)
        tok = int(torch.argmax(logits))
        state.log_probs.append(float(logp[tok]))
        if tok == specials.sep:
            state.finished = True
        else:
            state.tokens.append(tok)
            state.finished = len(state.tokens) >= max_len
    model.train(was_training)
    return state


def caption_loss(model: FusionTransformer, regions: Sequence[RegionSet], tags: Sequence[Sequence[int]],
                 captions: Sequence[Sequence[int]], rng=None, rate: float = 0.15,
                 specials: SpecialTokens = SpecialTokens()) -> torch.Tensor:
    """Masked-caption loss under the caption attention mask; only caption tokens are masked."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    examples = [assemble_input(r, t, c, "caption", specials, max_length=model.cfg.max_positions,
                               feature_dim=model.cfg.region_feature_dim, dtype=model.pooler.weight.dtype)
                for r, t, c in zip(regions, tags, captions)]
    batch = collate(examples, specials.pad)
    eligible = torch.zeros_like(batch.input_ids, dtype=torch.bool)
    for i, e in enumerate(examples):
        eligible[i, e.sentence_span[0]:e.sentence_span[1]] = True
    masked = mask_tokens(batch.input_ids, rate, rng, eligible, specials)
    batch.input_ids = masked.input_ids
    return mlm_loss(model(batch).mlm_logits, masked)

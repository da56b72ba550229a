"""VQA, NLVR2 and retrieval heads on the pooled [CLS] representation."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..detector.regions import RegionSet
from ..fusion.inputs import assemble_input
from ..fusion.model import FusionTransformer
from ..fusion.tokenizer import SpecialTokens

NUM_VQA_ANSWERS = 3129


def _pooled(model: FusionTransformer, regions: RegionSet, tags, text, task: str,
            specials: SpecialTokens) -> torch.Tensor:
    inp = assemble_input(regions, tags, text, task, specials, max_length=model.cfg.max_positions,
                         feature_dim=model.cfg.region_feature_dim, dtype=model.pooler.weight.dtype)
    return model(inp, with_vocab=False).pooled


class VQAHead(nn.Module):
    def __init__(self, hidden_size: int, num_answers: int = NUM_VQA_ANSWERS):
        super().__init__()
        self.classifier = nn.Linear(hidden_size, num_answers)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.classifier(pooled)


def vqa_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy summed over answers, averaged over the batch. Targets may be soft."""
    if logits.shape != targets.shape:
        raise ValueError("targets must match logits")
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="sum") / logits.shape[0]


@torch.no_grad()
def vqa_scores(model: FusionTransformer, head: VQAHead, regions: RegionSet, tags: Sequence[int],
               question: Sequence[int], specials: SpecialTokens = SpecialTokens()) -> torch.Tensor:
    model.eval()
    return torch.sigmoid(head(_pooled(model, regions, tags, question, "vqa", specials)))[0]


def vqa_predict(model: FusionTransformer, head: VQAHead, regions: RegionSet, tags: Sequence[int],
                question: Sequence[int], specials: SpecialTokens = SpecialTokens()) -> tuple[int, float]:
    """Argmax over sigmoid answer scores; ties go to the lowest index."""
    scores = vqa_scores(model, head, regions, tags, question, specials)
    idx = int(torch.argmax(scores))  # first maximal index
    return idx, float(scores[idx])


class NLVR2Head(nn.Module):
    def __init__(self, hidden_size: int):
        super().__init__()
        self.classifier = nn.Linear(2 * hidden_size, 1)

    def forward(self, pooled_left: torch.Tensor, pooled_right: torch.Tensor) -> torch.Tensor:
        return self.classifier(torch.cat([pooled_left, pooled_right], -1)).squeeze(-1)


@torch.no_grad()
def nlvr2_predict(model: FusionTransformer, head: NLVR2Head, regions_left: RegionSet, regions_right: RegionSet,
                  description: Sequence[int], tags_left: Sequence[int] = (), tags_right: Sequence[int] = (),
                  specials: SpecialTokens = SpecialTokens()) -> tuple[bool, float]:
    regions_left.validate()
    regions_right.validate()
    model.eval()
    left = _pooled(model, regions_left, tags_left, description, "nlvr2", specials)
    right = _pooled(model, regions_right, tags_right, description, "nlvr2", specials)
    conf = float(torch.sigmoid(head(left, right))[0])
    return conf > 0.5, conf


@torch.no_grad()
def retrieval_score(model: FusionTransformer, regions: RegionSet, tags: Sequence[int], text: Sequence[int],
                    specials: SpecialTokens = SpecialTokens()) -> float:
    """Matched-class probability of the 2-way matching head."""
    model.eval()
    inp = assemble_input(regions, tags, text, "retrieval", specials, max_length=model.cfg.max_positions,
                         feature_dim=model.cfg.region_feature_dim, dtype=model.pooler.weight.dtype)
    return float(torch.softmax(model(inp, with_vocab=False).itm_logits[0].double(), -1)[1])


def score_matrix(model: FusionTransformer, images: Sequence[tuple[RegionSet, Sequence[int]]],
                 texts: Sequence[Sequence[int]], specials: SpecialTokens = SpecialTokens()):
    """(num_images, num_texts) exhaustive pairwise scores."""
    return np.array([[retrieval_score(model, r, t, s, specials) for s in texts] for r, t in images])

"""Masked-token and image-text matching objectives."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..fusion.tokenizer import SpecialTokens

IGNORE_INDEX = -100
MASK_STRATEGIES = ("mask", "bert")


class NoMaskedPositionsWarning(UserWarning):
    pass


def as_generator(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


@dataclass
class MaskedBatch:
    input_ids: torch.Tensor  # same shape as the input, with substitutions
    labels: torch.Tensor  # original id at masked positions, IGNORE_INDEX elsewhere
    positions: torch.Tensor  # bool, True where masked

    @property
    def num_masked(self) -> int:
        return int(self.positions.sum())


def mask_tokens(token_ids, rate: float = 0.15, rng=None, eligible=None,
                specials: SpecialTokens = SpecialTokens(), strategy: str = "mask",
                vocab_size: int | None = None) -> MaskedBatch:
    """Independently mask each eligible position with probability ``rate``.

    Special tokens and padding are never eligible. ``eligible`` narrows the
    set further (e.g. to exclude tag positions). ``strategy="mask"`` always
    substitutes ``[MASK]``; ``"bert"`` uses the 80/10/10 mask/random/keep split
    and needs ``vocab_size``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    if strategy not in MASK_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {MASK_STRATEGIES}")
    if strategy == "bert" and vocab_size is None:
        raise ValueError("the 80/10/10 strategy needs vocab_size")
    rng = as_generator(rng)
    ids = torch.as_tensor(np.asarray(token_ids), dtype=torch.long)
    ok = ~torch.isin(ids, torch.tensor(sorted(specials.all())))
    if eligible is not None:
        ok &= torch.as_tensor(np.asarray(eligible), dtype=torch.bool)
    draws = torch.from_numpy(rng.random(tuple(ids.shape)))
    chosen = ok & (draws < rate)
    out = ids.clone()
    if strategy == "mask":
        out[chosen] = specials.mask
    else:
        kind = torch.from_numpy(rng.random(tuple(ids.shape)))
        rand_ids = torch.from_numpy(rng.integers(0, vocab_size, size=tuple(ids.shape)))
        out[chosen & (kind < 0.8)] = specials.mask
        swap = chosen & (kind >= 0.8) & (kind < 0.9)
        out[swap] = rand_ids[swap]
    labels = torch.full_like(ids, IGNORE_INDEX)
    labels[chosen] = ids[chosen]
    return MaskedBatch(out, labels, chosen)


def mlm_loss(logits: torch.Tensor, masked: MaskedBatch | torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over masked positions; 0 (with a warning) when nothing is masked."""
    labels = masked.labels if isinstance(masked, MaskedBatch) else masked
    if logits.shape[:-1] != labels.shape:
        raise ValueError(f"logits {tuple(logits.shape)} do not cover labels {tuple(labels.shape)}")
    if not (labels != IGNORE_INDEX).any():
        warnings.warn("no masked positions; MLM loss defined as 0", NoMaskedPositionsWarning, stacklevel=2)
        return logits.sum() * 0.0
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE_INDEX)


def itm_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean two-class cross-entropy on the matching head; label 1 = matched."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.dim() != 2 or logits.shape[1] != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError(f"expected (B, 2) logits for {labels.shape[0]} labels, got {tuple(logits.shape)}")
    return F.cross_entropy(logits, labels)


def itm_corrupt(records: Sequence, prob: float = 0.5, rng=None) -> tuple[list, np.ndarray]:
    """Replace captions with ones drawn uniformly from other records.

    Tags stay with their image. Returns the new records and labels
    (1 = original pair, 0 = corrupted).
    """
    n = len(records)
    if n < 2:
        raise ValueError("ITM corruption needs a batch of at least 2 records")
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"corruption probability must lie in [0, 1], got {prob}")
    rng = as_generator(rng)
    corrupt = rng.random(n) < prob
    partner = rng.integers(0, n - 1, size=n)
    partner = partner + (partner >= np.arange(n))
    out = [replace(r, caption=records[j].caption) if c else r for r, c, j in zip(records, corrupt, partner)]
    return out, (~corrupt).astype(np.int64)

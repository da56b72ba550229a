"""Assembling region features, tags and sentence tokens into one sequence.

Layout: ``[CLS] S [SEP] tags [SEP] regions``. Text positions come first and
carry position ids; region positions carry none, so the encoder sees regions
as an unordered set. Segment ids: 0 sentence, 1 regions, 2 tags.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ..detector.regions import RegionSet
from .tokenizer import SpecialTokens

TEXT_SEGMENT, VISUAL_SEGMENT, TAG_SEGMENT = 0, 1, 2

TASKS = ("pretrain-mlm", "pretrain-itm", "caption", "vqa", "nlvr2", "retrieval")


def encode_box_positions(boxes, image_size) -> np.ndarray:
    """(K, 4) corner boxes -> (K, 6): normalised corners, then normalised width and height."""
    w, h = image_size
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    bw, bh = b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]
    if (bw <= 0).any() or (bh <= 0).any():
        raise ValueError("degenerate box in position encoding")
    scale = np.array([w, h, w, h], dtype=np.float64)
    return np.concatenate([b / scale, (bw / w)[:, None], (bh / h)[:, None]], axis=1)


def attention_mask_for_task(task: str, text_len: int, context_len: int) -> torch.Tensor:
    """0/1 mask of shape (N, N), N = text_len + context_len; entry [i, j] = 1 if i may attend j.

    ``text_len`` covers ``[CLS] S [SEP]``; ``context_len`` covers tags, the
    second ``[SEP]`` and the regions. Captioning is a prefix-LM: caption
    positions attend causally among themselves and fully to the context; the
    context attends only within itself. Every other task is bidirectional.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    n = text_len + context_len
    if task != "caption":
        return torch.ones(n, n, dtype=torch.long)
    mask = torch.zeros(n, n, dtype=torch.long)
    mask[:text_len, :text_len] = torch.tril(torch.ones(text_len, text_len, dtype=torch.long))
    mask[:, text_len:] = 1
    return mask


@dataclass
class FusionInput:
    """One example. Region inputs are ``concat(feature, box encoding)``; the model projects them."""

    input_ids: torch.Tensor  # (T,)
    segment_ids: torch.Tensor  # (T,)
    position_ids: torch.Tensor  # (T,)
    region_inputs: torch.Tensor  # (K, D + 6)
    attention_mask: torch.Tensor  # (T + K, T + K)
    task: str
    sentence_span: tuple[int, int]
    tag_span: tuple[int, int]
    truncated: dict = field(default_factory=dict)

    @property
    def text_len(self) -> int:
        return int(self.input_ids.shape[0])

    @property
    def num_regions(self) -> int:
        return int(self.region_inputs.shape[0])

    @property
    def total_len(self) -> int:
        return self.text_len + self.num_regions

    @property
    def caption_len(self) -> int:
        """Length of the ``[CLS] S [SEP]`` prefix."""
        return self.sentence_span[1] + 1


def assemble_input(regions: RegionSet | None, tags: Sequence[int], sentence: Sequence[int], task: str,
                   specials: SpecialTokens = SpecialTokens(), max_length: int = 512,
                   feature_dim: int | None = None, dtype=torch.float32) -> FusionInput:
    """Build a :class:`FusionInput` from tokenised tags and sentence.

    When the total exceeds ``max_length`` the sentence is cut first, then the
    tags; regions are never dropped.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    k = 0 if regions is None else len(regions)
    sentence, tags = list(sentence), list(tags)
    budget = max_length - k - 3
    if budget < 0:
        raise ValueError(f"{k} regions plus special tokens exceed the length budget {max_length}")
    truncated = {}
    over = len(sentence) + len(tags) - budget
    if over > 0:
        cut = min(over, len(sentence))
        if cut:
            truncated["sentence"] = cut
            sentence = sentence[: len(sentence) - cut]
        over -= cut
        if over > 0:
            truncated["tags"] = over
            tags = tags[: len(tags) - over]

    s = specials
    ids = [s.cls, *sentence, s.sep, *tags, s.sep]
    seg = [TEXT_SEGMENT] * (len(sentence) + 2) + [TAG_SEGMENT] * (len(tags) + 1)
    text_len = len(sentence) + 2

    if regions is None or k == 0:
        dim = (regions.feature_dim if regions is not None else feature_dim)
        if dim is None:
            raise ValueError("feature_dim is needed when there are no regions")
        region_inputs = torch.zeros(0, dim + 6, dtype=dtype)
    else:
        box = encode_box_positions(regions.boxes, regions.image_size)
        region_inputs = torch.from_numpy(np.concatenate([regions.features.astype(np.float64), box], 1)).to(dtype)

    mask = attention_mask_for_task(task, text_len, len(ids) - text_len + k)
    return FusionInput(
        input_ids=torch.tensor(ids, dtype=torch.long),
        segment_ids=torch.tensor(seg, dtype=torch.long),
        position_ids=torch.arange(len(ids), dtype=torch.long),
        region_inputs=region_inputs,
        attention_mask=mask,
        task=task,
        sentence_span=(1, 1 + len(sentence)),
        tag_span=(text_len, text_len + len(tags)),
        truncated=truncated,
    )


@dataclass
class FusionBatch:
    input_ids: torch.Tensor  # (B, T)
    segment_ids: torch.Tensor
    position_ids: torch.Tensor
    text_valid: torch.Tensor  # (B, T) bool
    region_inputs: torch.Tensor  # (B, K, D + 6)
    region_valid: torch.Tensor  # (B, K) bool
    attention_mask: torch.Tensor  # (B, T + K, T + K) bool

    @property
    def text_len(self) -> int:
        return self.input_ids.shape[1]

    def __len__(self) -> int:
        return self.input_ids.shape[0]


def collate(examples: Sequence[FusionInput], pad_id: int = 0) -> FusionBatch:
    """Pad a list of examples into ``[text (T_max)] [regions (K_max)]`` blocks.

    Padding keys are masked out; padding queries attend only to themselves so
    every softmax row stays well defined.
    """
    if not examples:
        raise ValueError("cannot collate an empty batch")
    b = len(examples)
    t_max = max(e.text_len for e in examples)
    k_max = max(e.num_regions for e in examples)
    dim = examples[0].region_inputs.shape[1]
    dtype = examples[0].region_inputs.dtype
    ids = torch.full((b, t_max), pad_id, dtype=torch.long)
    seg = torch.zeros(b, t_max, dtype=torch.long)
    pos = torch.zeros(b, t_max, dtype=torch.long)
    tv = torch.zeros(b, t_max, dtype=torch.bool)
    reg = torch.zeros(b, k_max, dim, dtype=dtype)
    rv = torch.zeros(b, k_max, dtype=torch.bool)
    n = t_max + k_max
    mask = torch.zeros(b, n, n, dtype=torch.bool)
    for i, e in enumerate(examples):
        if e.region_inputs.shape[1] != dim:
            raise ValueError("region input width differs within the batch")
        t, k = e.text_len, e.num_regions
        ids[i, :t] = e.input_ids
        seg[i, :t] = e.segment_ids
        pos[i, :t] = e.position_ids
        tv[i, :t] = True
        reg[i, :k] = e.region_inputs
        rv[i, :k] = True
        where = torch.cat([torch.arange(t), t_max + torch.arange(k)])
        mask[i][where[:, None], where[None, :]] = e.attention_mask.bool()
        pad = torch.cat([torch.arange(t, t_max), t_max + torch.arange(k, k_max)])
        mask[i, pad, pad] = True
    return FusionBatch(ids, seg, pos, tv, reg, rv, mask)

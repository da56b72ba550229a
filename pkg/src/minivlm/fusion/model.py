"""Post-LN transformer over ``[text] [regions]`` with MLM and ITM heads."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from ..configs import TransformerConfig
from .inputs import VISUAL_SEGMENT, FusionBatch, FusionInput, collate


@torch.no_grad()
def truncated_normal_(t: torch.Tensor, std: float, bound: float = 2.0) -> torch.Tensor:
    """In-place N(0, std) truncated to +-bound*std by rejection resampling."""
    flat = t.view(-1).normal_()
    idx = torch.nonzero(flat.abs() > bound).squeeze(1)
    while idx.numel():
        draw = torch.randn(idx.numel(), dtype=t.dtype)
        flat[idx] = draw
        idx = idx[draw.abs() > bound]
    return t.mul_(std)


class Embeddings(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        d = cfg.hidden_size
        self.word = nn.Embedding(cfg.vocab_size, d)
        self.position = nn.Embedding(cfg.max_positions, d)
        self.segment = nn.Embedding(cfg.num_segments, d)
        self.norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.region_proj = nn.Linear(cfg.region_feature_dim + cfg.box_dim, d)
        self.dropout = nn.Dropout(cfg.dropout)
        self.max_positions = cfg.max_positions
        self.vocab_size = cfg.vocab_size

    def forward(self, batch: FusionBatch) -> torch.Tensor:
        if batch.text_len > self.max_positions:
            raise ValueError(f"text length {batch.text_len} exceeds {self.max_positions} positions")
        if batch.input_ids.numel() and int(batch.input_ids.max()) >= self.vocab_size:
            raise ValueError("token id outside the vocabulary")
        text = self.word(batch.input_ids) + self.position(batch.position_ids) + self.segment(batch.segment_ids)
        regions = self.region_proj(batch.region_inputs.to(self.region_proj.weight.dtype))
        regions = regions + self.segment.weight[VISUAL_SEGMENT]
        return self.dropout(self.norm(torch.cat([text, regions], dim=1)))


class SelfAttention(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        d = cfg.hidden_size
        self.heads = cfg.num_heads
        self.head_dim = cfg.head_dim
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.output = nn.Linear(d, d)
        self.dropout = nn.Dropout(cfg.dropout)
        self.keep_probs = False
        self.last_probs: torch.Tensor | None = None

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape

        def split(t):
            return t.view(b, n, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~mask[:, None], float("-inf"))
        probs = torch.softmax(scores, dim=-1)
        if self.keep_probs:
            self.last_probs = probs.detach()
        ctx = (self.dropout(probs) @ v).transpose(1, 2).reshape(b, n, d)
        return self.output(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        d = cfg.hidden_size
        self.attention = SelfAttention(cfg)
        self.attention_norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.ffn_in = nn.Linear(d, cfg.intermediate_size)
        self.ffn_out = nn.Linear(cfg.intermediate_size, d)
        self.ffn_norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        x = self.attention_norm(x + self.dropout(self.attention(x, mask)))
        return self.ffn_norm(x + self.dropout(self.ffn_out(F.gelu(self.ffn_in(x)))))


@dataclass
class FusionOutput:
    hidden: torch.Tensor  # (B, T + K, d)
    pooled: torch.Tensor  # (B, d)
    itm_logits: torch.Tensor  # (B, 2)
    mlm_logits: torch.Tensor | None  # (B, T, V) over text positions


class FusionTransformer(nn.Module):
    """Encoder, pooler, a 2-way matching head and an untied vocabulary head.

    ``forward`` takes a :class:`FusionBatch` or a single :class:`FusionInput`.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_size
        self.embeddings = Embeddings(cfg)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.pooler = nn.Linear(d, d)
        self.itm_head = nn.Linear(d, 2)
        self.mlm_transform = nn.Linear(d, d)
        self.mlm_norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.mlm_decoder = nn.Linear(d, cfg.vocab_size)
        self.init_weights()

    def init_weights(self) -> None:
        self.apply(self._init_weights)

    def _init_weights(self, module: nn.Module) -> None:
        std = self.cfg.init_std
        weight = getattr(module, "weight", None)
        if weight is None or weight.is_meta:
            return
        if isinstance(module, (nn.Linear, nn.Embedding)):
            truncated_normal_(module.weight, std)
            if getattr(module, "bias", None) is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.LayerNorm):
            nn.init.ones_(module.weight)
            nn.init.zeros_(module.bias)

    def encode(self, batch: FusionBatch) -> torch.Tensor:
        n = batch.text_len + batch.region_inputs.shape[1]
        if tuple(batch.attention_mask.shape) != (len(batch), n, n):
            raise ValueError(f"attention mask {tuple(batch.attention_mask.shape)} does not match length {n}")
        mask = batch.attention_mask.bool()
        if not mask.any(-1).all():
            raise ValueError("every position must be allowed to attend at least one key")
        x = self.embeddings(batch)
        for layer in self.layers:
            x = layer(x, mask)
        return x

    def vocab_logits(self, hidden_text: torch.Tensor) -> torch.Tensor:
        return self.mlm_decoder(self.mlm_norm(F.gelu(self.mlm_transform(hidden_text))))

    def forward(self, batch: FusionBatch | FusionInput, with_vocab: bool = True) -> FusionOutput:
        if isinstance(batch, FusionInput):
            batch = collate([batch])
        hidden = self.encode(batch)
        pooled = torch.tanh(self.pooler(hidden[:, 0]))
        mlm = self.vocab_logits(hidden[:, : batch.text_len]) if with_vocab else None
        return FusionOutput(hidden, pooled, self.itm_head(pooled), mlm)

    def keep_attention(self, flag: bool = True) -> None:
        for layer in self.layers:
            layer.attention.keep_probs = flag
            layer.attention.last_probs = None

    def attention_probs(self) -> list[torch.Tensor]:
        return [layer.attention.last_probs for layer in self.layers]


def build_transformer(cfg: TransformerConfig, seed: int | None = 0, dtype=torch.float32) -> FusionTransformer:
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        # meta construction skips torch's default init, which init_weights overwrites anyway
        with torch.device("meta"):
            model = FusionTransformer(cfg)
        model.to_empty(device="cpu")
        model.init_weights()
    return model.to(dtype).eval()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

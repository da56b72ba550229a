from ..configs import TRANSFORMER_PRESETS, TransformerConfig
from .inputs import (TAG_SEGMENT, TASKS, TEXT_SEGMENT, VISUAL_SEGMENT, FusionBatch, FusionInput, assemble_input,
                     attention_mask_for_task, collate, encode_box_positions)
from .model import FusionOutput, FusionTransformer, build_transformer, count_parameters
from .tokenizer import BERT_SPECIALS, HFTokenizerAdapter, SpecialTokens, Tokenizer, WhitespaceTokenizer


def forward(inputs, model: FusionTransformer, with_vocab: bool = True) -> FusionOutput:
    return model(inputs, with_vocab=with_vocab)


__all__ = [
    "TRANSFORMER_PRESETS", "TransformerConfig", "TAG_SEGMENT", "TASKS", "TEXT_SEGMENT", "VISUAL_SEGMENT",
    "FusionBatch", "FusionInput", "assemble_input", "attention_mask_for_task", "collate", "encode_box_positions",
    "FusionOutput", "FusionTransformer", "build_transformer", "count_parameters", "forward", "BERT_SPECIALS",
    "HFTokenizerAdapter", "SpecialTokens", "Tokenizer", "WhitespaceTokenizer",
]

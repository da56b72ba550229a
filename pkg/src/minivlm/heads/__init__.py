from .captioning import CaptionState, caption_generate, caption_loss, next_token_logits
from .classifiers import (NUM_VQA_ANSWERS, NLVR2Head, VQAHead, nlvr2_predict, retrieval_score, score_matrix,
                          vqa_loss, vqa_predict, vqa_scores)
from .metrics import DEFAULT_KS, RetrievalResult, bleu, rank, recall_at_k

__all__ = [
    "CaptionState", "caption_generate", "caption_loss", "next_token_logits", "NUM_VQA_ANSWERS", "NLVR2Head",
    "VQAHead", "nlvr2_predict", "retrieval_score", "score_matrix", "vqa_loss", "vqa_predict", "vqa_scores",
    "DEFAULT_KS", "RetrievalResult", "bleu", "rank", "recall_at_k",
]

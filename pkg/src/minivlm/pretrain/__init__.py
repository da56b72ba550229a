from .corpus import (CAPTION_SOURCES, PROVENANCE, CaptionProvider, DetectorTagger, PretrainRecord, StubTeacher, Tag,
                     TagProvider, ingest_distilled, read_corpus, stable_id, write_corpus)
from .objectives import (IGNORE_INDEX, MaskedBatch, NoMaskedPositionsWarning, itm_corrupt, itm_loss, mask_tokens,
                         mlm_loss)
from .train import (PretrainBatch, compute_losses, evaluate_loss, fixed_batches, make_optimizer, make_pretrain_batch,
                    pretrain_step, synthetic_corpus, train)

__all__ = [
    "CAPTION_SOURCES", "PROVENANCE", "CaptionProvider", "DetectorTagger", "PretrainRecord", "StubTeacher", "Tag",
    "TagProvider", "ingest_distilled", "read_corpus", "stable_id", "write_corpus", "IGNORE_INDEX", "MaskedBatch",
    "NoMaskedPositionsWarning", "itm_corrupt", "itm_loss", "mask_tokens", "mlm_loss", "PretrainBatch",
    "compute_losses", "evaluate_loss", "fixed_batches", "make_optimizer", "make_pretrain_batch", "pretrain_step",
    "synthetic_corpus", "train",
]

"""Retrieval recall and a plain n-gram BLEU (not the official scorer)."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_KS = (1, 5, 10)


def rank(scores) -> np.ndarray:
    """Indices by descending score; equal scores keep index order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


@dataclass
class RetrievalResult:
    query_id: int
    ranked: list[int]
    recalls: dict[int, float]


def _recall(scores: np.ndarray, truth: list[set[int]], ks: Sequence[int]) -> tuple[dict[int, float], list]:
    results = []
    hits = {k: 0 for k in ks}
    for q, row in enumerate(scores):
        order = rank(row)
        first = min(int(np.flatnonzero(order == t)[0]) for t in truth[q])
        rec = {k: float(first < k) for k in ks}
        for k in ks:
            hits[k] += rec[k]
        results.append(RetrievalResult(q, order.tolist(), rec))
    n = len(scores)
    return {k: hits[k] / n for k in ks}, results


def recall_at_k(scores, pairs: Iterable[tuple[int, int]], ks: Sequence[int] = DEFAULT_KS,
                with_rankings: bool = False):
    """R@K in both directions for a (num_images, num_texts) score matrix.

    ``pairs`` lists the true (image, text) matches. ``"i2t"`` ranks texts per
    image (text retrieval); ``"t2i"`` ranks images per text (image retrieval).
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or not s.size or not np.isfinite(s).all():
        raise ValueError("score matrix must be complete, finite and 2-D")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks or ks[0] < 1:
        raise ValueError("K values must be positive")
    ni, nt = s.shape
    texts_of = [set() for _ in range(ni)]
    images_of = [set() for _ in range(nt)]
    for i, t in pairs:
        if not (0 <= i < ni and 0 <= t < nt):
            raise ValueError(f"pair {(i, t)} outside the score matrix")
        texts_of[i].add(t)
        images_of[t].add(i)
    for name, truth in (("image", texts_of), ("text", images_of)):
        missing = [q for q, g in enumerate(truth) if not g]
        if missing:
            raise ValueError(f"{name} queries {missing[:5]} have no ground truth")
    i2t, r_i2t = _recall(s, texts_of, ks)
    t2i, r_t2i = _recall(s.T, images_of, ks)
    out = {"i2t": i2t, "t2i": t2i}
    return (out, {"i2t": r_i2t, "t2i": r_t2i}) if with_rankings else out


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Sentence BLEU with clipped counts, uniform weights and brevity penalty; unsmoothed.

    Smoke-test metric only; not the official captioning scorer.
    """
    if not references:
        raise ValueError("need at least one reference")
    if not candidate:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        total = sum(cand.values())
        if total == 0:
            return 0.0
        best = Counter()
        for ref in references:
            best |= _ngrams(ref, n)
        clipped = sum(min(c, best[g]) for g, c in cand.items())
        if clipped == 0:
            return 0.0
        log_p += math.log(clipped / total) / max_n
    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_p)

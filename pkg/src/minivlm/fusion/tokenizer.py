"""Tokenizer interface plus a whitespace tokenizer for tests and toy corpora.

Any object with ``encode``, ``decode``, ``vocab_size`` and ``specials`` works.
A wordpiece tokenizer over the 30,522 uncased vocabulary can be plugged in via
:class:`HFTokenizerAdapter`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence


@dataclass(frozen=True)
class SpecialTokens:
    pad: int = 0
    unk: int = 1
    cls: int = 2
    sep: int = 3
    mask: int = 4

    def all(self) -> frozenset[int]:
        return frozenset((self.pad, self.unk, self.cls, self.sep, self.mask))


BERT_SPECIALS = SpecialTokens(pad=0, unk=100, cls=101, sep=102, mask=103)


class Tokenizer(Protocol):
    specials: SpecialTokens

    @property
    def vocab_size(self) -> int: ...

    def encode(self, text: str) -> list[int]: ...

    def decode(self, ids: Sequence[int]) -> str: ...


_WORD = re.compile(r"\w+|[^\w\s]")


class WhitespaceTokenizer:
    SPECIAL_NAMES = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")

    def __init__(self, words: Iterable[str] = ()):
        self.vocab = list(self.SPECIAL_NAMES)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        for w in words:
            self.add(w)
        self.specials = SpecialTokens()

    @classmethod
    def from_corpus(cls, texts: Iterable[str]) -> "WhitespaceTokenizer":
        words = sorted({w for t in texts for w in cls.split(t)})
        return cls(words)

    @staticmethod
    def split(text: str) -> list[str]:
        return _WORD.findall(text.lower())

    def add(self, word: str) -> int:
        if word not in self.index:
            self.index[word] = len(self.vocab)
            self.vocab.append(word)
        return self.index[word]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        unk = self.specials.unk
        return [self.index.get(w, unk) for w in self.split(text)]

    def decode(self, ids: Sequence[int]) -> str:
        skip = {self.specials.pad, self.specials.cls, self.specials.sep, self.specials.mask}
        return " ".join(self.vocab[i] for i in ids if i not in skip and 0 <= i < len(self.vocab))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.vocab) + "\n")

    @classmethod
    def load(cls, path) -> "WhitespaceTokenizer":
        with open(path, encoding="utf-8") as fh:
            words = [line.rstrip("\n") for line in fh if line.strip()]
        if tuple(words[:5]) != cls.SPECIAL_NAMES:
            raise ValueError(f"{path}: vocabulary must start with {cls.SPECIAL_NAMES}")
        return cls(words[5:])


class HFTokenizerAdapter:
    """Wrap a Hugging Face BERT tokenizer instance (constructed by the caller)."""

    def __init__(self, hf_tokenizer):
        self.tok = hf_tokenizer
        self.specials = SpecialTokens(
            pad=hf_tokenizer.pad_token_id, unk=hf_tokenizer.unk_token_id, cls=hf_tokenizer.cls_token_id,
            sep=hf_tokenizer.sep_token_id, mask=hf_tokenizer.mask_token_id)

    @property
    def vocab_size(self) -> int:
        return self.tok.vocab_size

    def encode(self, text: str) -> list[int]:
        return list(self.tok.encode(text, add_special_tokens=False))

    def decode(self, ids: Sequence[int]) -> str:
        return self.tok.decode(list(ids), skip_special_tokens=True)

"""Pre-training records and distilled-corpus ingestion.

Captions come from a pluggable teacher; tags from a pluggable tagger. The
corpus is JSON lines with sorted keys, so re-ingesting the same source with
the same providers yields a byte-identical file.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Protocol

from ..detector.regions import RegionSet

log = logging.getLogger(__name__)

PROVENANCE = ("detector-predicted", "teacher-predicted", "human-verified")
CAPTION_SOURCES = ("ground-truth", "teacher")


@dataclass(frozen=True)
class Tag:
    name: str
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown tag provenance {self.provenance!r}")


@dataclass(frozen=True)
class PretrainRecord:
    record_id: str
    image_id: str
    caption: str
    caption_source: str
    tags: tuple[Tag, ...] = ()
    feature_store: str = ""

    def __post_init__(self):
        if not self.caption.strip():
            raise ValueError(f"record {self.record_id}: empty caption")
        if self.caption_source not in CAPTION_SOURCES:
            raise ValueError(f"unknown caption source {self.caption_source!r}")

    @property
    def tag_names(self) -> list[str]:
        return [t.name for t in self.tags]

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "PretrainRecord":
        d = json.loads(line)
        d["tags"] = tuple(Tag(**t) for t in d.get("tags", ()))
        return cls(**d)


def stable_id(image_id: str, caption: str) -> str:
    return hashlib.sha1(f"{image_id}\x00{caption}".encode("utf-8")).hexdigest()[:16]


class CaptionProvider(Protocol):
    def caption(self, image_id: str, regions: RegionSet) -> str: ...


class TagProvider(Protocol):
    def tags(self, image_id: str, regions: RegionSet, verified: Iterable[str] = ()) -> list[Tag]: ...


@dataclass
class StubTeacher:
    """Deterministic stand-in for a large captioning model."""

    text: str | None = None

    def caption(self, image_id: str, regions: RegionSet) -> str:
        if self.text is not None:
            return self.text
        names = list(dict.fromkeys(regions.tags))[:3]
        return "an image of " + (" and ".join(names) if names else "a scene")


@dataclass
class DetectorTagger:
    """Human-verified tags first, then unique detector class names in score order."""

    max_tags: int | None = None

    def tags(self, image_id: str, regions: RegionSet, verified: Iterable[str] = ()) -> list[Tag]:
        out = [Tag(v, "human-verified") for v in dict.fromkeys(verified)]
        seen = {t.name for t in out}
        for name in regions.tags:
            if name not in seen:
                seen.add(name)
                out.append(Tag(name, "detector-predicted"))
        return out[: self.max_tags] if self.max_tags is not None else out


def ingest_distilled(source: Iterable[Mapping], features: Mapping[str, RegionSet],
                     teacher: CaptionProvider | None = None, tagger: TagProvider | None = None,
                     feature_store: str = "") -> Iterator[PretrainRecord]:
    """Turn source items ``{"image_id", "caption"?, "verified_tags"?}`` into records.

    With a teacher every image is pseudo-captioned; without one the source
    caption is used as ground truth. Items lacking features are skipped.
    """
    tagger = tagger if tagger is not None else DetectorTagger()
    for item in source:
        image_id = str(item["image_id"])
        regions = features.get(image_id)
        if regions is None:
            log.warning("skipping %s: no region features", image_id)
            continue
        if teacher is not None:
            caption, src = teacher.caption(image_id, regions), "teacher"
        else:
            caption, src = item.get("caption", ""), "ground-truth"
        if not caption or not caption.strip():
            log.warning("skipping %s: empty caption", image_id)
            continue
        tags = tuple(tagger.tags(image_id, regions, item.get("verified_tags", ())))
        yield PretrainRecord(stable_id(image_id, caption), image_id, caption, src, tags, feature_store)


def write_corpus(path: str | Path, records: Iterable[PretrainRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
            n += 1
    return n


def read_corpus(path: str | Path) -> list[PretrainRecord]:
    with open(path, encoding="utf-8") as fh:
        return [PretrainRecord.from_json(line) for line in fh if line.strip()]

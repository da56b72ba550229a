"""RegionSet container and its binary feature-store format.

Store layout (little endian), one length-prefixed record per image::

    u32 record_length
    u16 id_length, id bytes (utf-8)
    u32 width, u32 height, u32 N, u32 D
    N x packed(f32[4] box, f32 score, u16 class_id, f32[D] feature)

A JSON-lines sidecar (``<store>.tags.jsonl``) holds the tag strings, one line
per record in the same order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

_HEADER = struct.Struct("<IIII")
_LEN = struct.Struct("<I")
_IDLEN = struct.Struct("<H")


def region_dtype(dim: int) -> np.dtype:
    return np.dtype([("box", "<f4", (4,)), ("score", "<f4"), ("class_id", "<u2"), ("feature", "<f4", (dim,))])


@dataclass
class RegionSet:
    image_id: str
    image_size: tuple[int, int]  # (W, H)
    boxes: np.ndarray
    scores: np.ndarray
    class_ids: np.ndarray
    tags: list[str]
    features: np.ndarray
    attribute_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        self.boxes = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)
        n = self.boxes.shape[0]
        self.scores = np.asarray(self.scores, dtype=np.float32).reshape(n)
        self.class_ids = np.asarray(self.class_ids, dtype=np.uint16).reshape(n)
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError("features must be (N, D) matching boxes")
        self.tags = list(self.tags)
        if len(self.tags) != n:
            raise ValueError("one tag per region required")

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def validate(self, max_regions: int | None = None) -> None:
        w, h = self.image_size
        b = self.boxes
        if len(self):
            ok = (0 <= b[:, 0]) & (b[:, 0] < b[:, 2]) & (b[:, 2] <= w) & (0 <= b[:, 1]) & (b[:, 1] < b[:, 3]) & (b[:, 3] <= h)
            if not ok.all():
                raise ValueError(f"{self.image_id}: boxes outside the image or degenerate")
            if ((self.scores < 0) | (self.scores > 1)).any():
                raise ValueError(f"{self.image_id}: scores must lie in [0, 1]")
            if (np.diff(self.scores) > 0).any():
                raise ValueError(f"{self.image_id}: scores must be sorted non-increasing")
        if max_regions is not None and len(self) > max_regions:
            raise ValueError(f"{self.image_id}: {len(self)} regions exceeds the limit {max_regions}")

    @classmethod
    def empty(cls, image_id: str, image_size, feature_dim: int) -> "RegionSet":
        return cls(image_id, image_size, np.zeros((0, 4)), np.zeros(0), np.zeros(0), [],
                   np.zeros((0, feature_dim)))

    def to_bytes(self) -> bytes:
        ident = self.image_id.encode("utf-8")
        rec = np.zeros(len(self), dtype=region_dtype(self.feature_dim))
        rec["box"] = self.boxes
        rec["score"] = self.scores
        rec["class_id"] = self.class_ids
        rec["feature"] = self.features
        body = (_IDLEN.pack(len(ident)) + ident
                + _HEADER.pack(self.image_size[0], self.image_size[1], len(self), self.feature_dim)
                + rec.tobytes())
        return _LEN.pack(len(body)) + body

    @classmethod
    def from_bytes(cls, body: bytes, tags: Sequence[str] | None = None) -> "RegionSet":
        (idlen,) = _IDLEN.unpack_from(body, 0)
        pos = _IDLEN.size
        image_id = body[pos:pos + idlen].decode("utf-8")
        pos += idlen
        w, h, n, d = _HEADER.unpack_from(body, pos)
        pos += _HEADER.size
        rec = np.frombuffer(body, dtype=region_dtype(d), count=n, offset=pos)
        if pos + rec.nbytes != len(body):
            raise ValueError(f"record {image_id!r}: length mismatch")
        return cls(image_id, (w, h), rec["box"].copy(), rec["score"].copy(), rec["class_id"].copy(),
                   list(tags) if tags is not None else [str(c) for c in rec["class_id"]], rec["feature"].copy())


def tags_path(store: str | Path) -> Path:
    p = Path(store)
    return p.with_name(p.name + ".tags.jsonl")


def write_regions(path: str | Path, regions: Iterable[RegionSet]) -> int:
    path = Path(path)
    n = 0
    with open(path, "wb") as fh, open(tags_path(path), "w", encoding="utf-8") as th:
        for rs in regions:
            fh.write(rs.to_bytes())
            th.write(json.dumps({"image_id": rs.image_id, "tags": rs.tags}, ensure_ascii=False) + "\n")
            n += 1
    return n


def iter_regions(path: str | Path) -> Iterator[RegionSet]:
    path = Path(path)
    sidecar = tags_path(path)
    tag_lines = sidecar.open(encoding="utf-8") if sidecar.exists() else None
    try:
        with open(path, "rb") as fh:
            while True:
                head = fh.read(_LEN.size)
                if not head:
                    break
                if len(head) < _LEN.size:
                    raise ValueError(f"{path}: truncated record header")
                (length,) = _LEN.unpack(head)
                body = fh.read(length)
                if len(body) != length:
                    raise ValueError(f"{path}: truncated record")
                tags = None
                if tag_lines is not None:
                    line = json.loads(tag_lines.readline())
                    tags = line["tags"]
                rs = RegionSet.from_bytes(body, tags)
                if tag_lines is not None and line["image_id"] != rs.image_id:
                    raise ValueError(f"{sidecar}: tag sidecar out of step at {rs.image_id!r}")
                yield rs
    finally:
        if tag_lines is not None:
            tag_lines.close()


def read_regions(path: str | Path) -> dict[str, RegionSet]:
    return {rs.image_id: rs for rs in iter_regions(path)}

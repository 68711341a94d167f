"""Shingle-based duplicate detection.

Every document is reduced to hashed windows of ``n`` consecutive lowercased
basic tokens. A corpus-wide multiset of those hashes gives each document a
duplication ratio: the share of its shingles seen at least twice overall.

Shingle hashes are 64-bit; over 10^8 distinct shingles the chance of any
collision is about 2.7e-4 (birthday bound), and a collision can only raise a
ratio, never lower it.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .corpus import Document
from .parallel import ordered_map
from .vocab import CasingMode, basic_tokenize

MASK64 = (1 << 64) - 1
ROLL_BASE = 0x100000001B3  # odd, so multiplication is invertible mod 2^64
MAGIC = b"SHGL"
_HEADER = struct.Struct("<4sIQ")
_ENTRY = struct.Struct("<QQ")


def shingle_tokens(text: str) -> List[str]:
    return [t.lower() for t in basic_tokenize(text, CasingMode.CASED)]


def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


def shingle_hashes(text: str, n: int = 10) -> List[int]:
    """Rolling polynomial hashes of all n-token windows.

    Texts with fewer than ``n`` tokens (but at least one) yield a single
    whole-text shingle; empty texts yield none.
    """
    if n < 1:
        raise ValueError("shingle length must be >= 1")
    hs = [_token_hash(t) for t in shingle_tokens(text)]
    if not hs:
        return []
    if len(hs) < n:
        h = 0
        for x in hs:
            h = (h * ROLL_BASE + x) & MASK64
        return [h]
    top = pow(ROLL_BASE, n - 1, 1 << 64)
    h = 0
    for x in hs[:n]:
        h = (h * ROLL_BASE + x) & MASK64
    out = [h]
    for i in range(n, len(hs)):
        h = ((h - hs[i - n] * top) * ROLL_BASE + hs[i]) & MASK64
        out.append(h)
    return out


@dataclass
class ShingleIndex:
    n: int = 10
    counts: Dict[int, int] = field(default_factory=dict)

    @property
    def total_shingles(self) -> int:
        return sum(self.counts.values())

    def add(self, hashes: Iterable[int]) -> None:
        c = self.counts
        for h in hashes:
            c[h] = c.get(h, 0) + 1

    def merge(self, other: "ShingleIndex") -> None:
        if other.n != self.n:
            raise ValueError("cannot merge indexes with different shingle lengths")
        for h, k in other.counts.items():
            self.counts[h] = self.counts.get(h, 0) + k

    def to_bytes(self) -> bytes:
        items = sorted(self.counts.items())
        parts = [_HEADER.pack(MAGIC, self.n, len(items))]
        parts.extend(_ENTRY.pack(h, k) for h, k in items)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ShingleIndex":
        if len(data) < _HEADER.size:
            raise ValueError("truncated shingle index")
        magic, n, count = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValueError("not a shingle index file")
        if len(data) != _HEADER.size + count * _ENTRY.size:
            raise ValueError("shingle index size does not match its header")
        counts = {h: k for h, k in _ENTRY.iter_unpack(data[_HEADER.size:])}
        return cls(n, counts)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ShingleIndex":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _shard_index(n: int, texts: Sequence[str]) -> ShingleIndex:
    shard = ShingleIndex(n)
    for text in texts:
        shard.add(shingle_hashes(text, n))
    return shard


def build_shingle_index(docs: Iterable[Document], n: int = 10, workers: int = 1, shard_size: int = 256) -> ShingleIndex:
    """Count shingles over all documents, sharding across ``workers``
    processes; merged counts do not depend on the sharding."""
    if n < 1:
        raise ValueError("shingle length must be >= 1")
    texts = [d.text for d in docs]
    shards = [texts[i:i + shard_size] for i in range(0, len(texts), shard_size)]
    index = ShingleIndex(n)
    for shard in ordered_map(_shard_index, shards, workers=workers, shared=n, chunksize=1):
        index.merge(shard)
    return index


def duplication_ratio(doc: Document, index: ShingleIndex, hashes: Optional[Sequence[int]] = None) -> float:
    """Fraction of the document's shingles whose corpus count is >= 2."""
    if hashes is None:
        hashes = shingle_hashes(doc.text, index.n)
    if not hashes:
        return 0.0
    dup = 0
    for h in hashes:
        c = index.counts.get(h, 0)
        if c == 0:
            raise ValueError(f"index mismatch: document {doc.id} has shingles absent from the index")
        if c >= 2:
            dup += 1
    return dup / len(hashes)


class DupGroup(str, Enum):
    NONE = "0%"
    LOW = "(0,10%]"
    MID = "(10,25%)"
    HIGH = "[25,100%]"

    @classmethod
    def of(cls, ratio: float) -> "DupGroup":
        if ratio <= 0.0:
            return cls.NONE
        if ratio <= 0.10:
            return cls.LOW
        if ratio < 0.25:
            return cls.MID
        return cls.HIGH


@dataclass(frozen=True)
class DupReport:
    doc_id: str
    ratio: float
    group: DupGroup

    def to_json(self) -> str:
        return json.dumps({"doc_id": self.doc_id, "ratio": self.ratio, "group": self.group.value},
                          ensure_ascii=False, separators=(",", ":"))


def is_duplicate(ratio: float, threshold: float) -> bool:
    """Inclusive threshold; a document with no duplicated shingle never is."""
    return ratio > 0.0 and ratio >= threshold


def dedup_filter(
    docs: Sequence[Document],
    index: Optional[ShingleIndex],
    threshold: float = 0.25,
    keep_first: bool = False,
    n: int = 10,
) -> Tuple[List[Document], List[DupReport]]:
    """Drop documents whose duplication ratio is >= ``threshold`` (and > 0).

    By default every copy of a duplicated text is scored against the full
    index, so all copies go together. With ``keep_first`` each document is
    scored only against documents that precede it, so the first copy
    survives; ``index`` is ignored in that mode.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    kept: List[Document] = []
    reports: List[DupReport] = []
    if keep_first:
        seen = ShingleIndex(index.n if index is not None else n)
        for doc in docs:
            hashes = shingle_hashes(doc.text, seen.n)
            dup = sum(1 for h in hashes if seen.counts.get(h, 0) >= 1)
            # a shingle repeated within the document also counts
            local = Counter(hashes)
            dup += sum(k - 1 for h, k in local.items() if seen.counts.get(h, 0) == 0)
            ratio = dup / len(hashes) if hashes else 0.0
            seen.add(hashes)
            reports.append(DupReport(doc.id, ratio, DupGroup.of(ratio)))
            if not is_duplicate(ratio, threshold):
                kept.append(doc)
        return kept, reports

    if index is None:
        index = build_shingle_index(docs, n)
    for doc in docs:
        ratio = duplication_ratio(doc, index)
        reports.append(DupReport(doc.id, ratio, DupGroup.of(ratio)))
        if not is_duplicate(ratio, threshold):
            kept.append(doc)
    return kept, reports

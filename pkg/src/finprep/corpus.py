"""Document model, JSON-lines I/O, sentence splitting and corpus statistics."""
from __future__ import annotations

import io
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence

from .vocab import CasingMode, basic_tokenize


class Source(str, Enum):
    NEWS = "news"
    DISCUSSION = "discussion"
    CRAWL = "crawl"
    OTHER = "other"

    @classmethod
    def parse(cls, value) -> "Source":
        try:
            return cls(value)
        except ValueError:
            return cls.OTHER


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    source: Source
    text: str
    timestamp: Optional[str] = None
    label: Optional[str] = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be non-empty")
        object.__setattr__(self, "source", Source.parse(self.source))
        object.__setattr__(self, "meta", dict(self.meta))

    def __hash__(self):
        return hash((self.id, self.source, self.text, self.timestamp, self.label))

    def to_json(self) -> str:
        """Canonical single-line serialization (fixed key order, no ASCII escaping)."""
        record = {"id": self.id, "source": self.source.value, "text": self.text}
        if self.timestamp is not None:
            record["timestamp"] = self.timestamp
        if self.label is not None:
            record["label"] = self.label
        if self.meta:
            record["meta"] = dict(sorted(self.meta.items()))
        return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def _as_text_stream(stream) -> IO[str]:
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", newline="\n")


def document_from_record(record: dict, lineno: int = 0) -> Document:
    for key in ("id", "text"):
        if key not in record:
            raise CorpusError(f"line {lineno}: missing field `{key}`")
    meta = record.get("meta") or {}
    if not isinstance(meta, dict):
        raise CorpusError(f"line {lineno}: `meta` must be an object")
    try:
        return Document(
            id=str(record["id"]),
            source=record.get("source", "other"),
            text=str(record["text"]),
            timestamp=record.get("timestamp"),
            label=record.get("label"),
            meta={str(k): str(v) for k, v in meta.items()},
        )
    except CorpusError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def read_documents(stream) -> Iterator[Document]:
    """Lazily parse one JSON document per line. Blank lines are skipped.

    Accepts a binary or text stream. Unknown ``source`` values map to
    ``other``.
    """
    for lineno, line in enumerate(_as_text_stream(stream), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(record, dict):
            raise CorpusError(f"line {lineno}: expected a JSON object")
        yield document_from_record(record, lineno)


def write_documents(docs: Iterable[Document], sink) -> int:
    n = 0
    for doc in docs:
        line = doc.to_json() + "\n"
        if isinstance(sink, io.TextIOBase):
            sink.write(line)
        else:
            sink.write(line.encode("utf-8"))
        n += 1
    return n


def load_documents(path) -> List[Document]:
    with open(path, "rb") as fh:
        return list(read_documents(fh))


def save_documents(docs: Iterable[Document], path) -> int:
    with open(path, "wb") as fh:
        return write_documents(docs, fh)


# --------------------------------------------------------------------------
# Sentence splitting

FINNISH_ABBREVIATIONS = frozenset(
    {
        "esim.", "mm.", "n.", "ns.", "ym.", "yms.", "jne.", "ks.", "vrt.", "eli.",
        "tms.", "huom.", "engl.", "ruots.", "klo.", "s.", "v.", "t.", "em.", "ko.",
        "os.", "pj.", "prof.", "tri.", "dos.", "toim.", "puh.", "nk.", "ao.", "vs.",
    }
)

_BOUNDARY = re.compile(r"([.!?…]+[\"'”’)\]]*)\s+[\"'“‘(\[]*(\w)")


def split_sentences(text: str, abbreviations: Iterable[str] = FINNISH_ABBREVIATIONS) -> List[str]:
    """Rule-based splitter.

    A boundary is a run of terminators ``. ! ? …`` followed by whitespace and
    an uppercase letter or digit. A period ending a known abbreviation (matched
    case-insensitively against the preceding word) is not a boundary.
    """
    abbrevs = {a.lower() for a in abbreviations}
    sentences: List[str] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        end = m.end(1)
        candidate = text[start:end]
        words = candidate.split()
        nxt = m.group(2)
        if not (nxt.isupper() or nxt.isdigit()):
            continue
        if m.group(1) == "." and words and words[-1].lower() in abbrevs:
            continue
        sentence = candidate.strip()
        if sentence:
            sentences.append(sentence)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# --------------------------------------------------------------------------
# Statistics


@dataclass
class CorpusStats:
    docs: int = 0
    sentences: int = 0
    tokens: int = 0
    chars: int = 0

    def __add__(self, other: "CorpusStats") -> "CorpusStats":
        return CorpusStats(
            self.docs + other.docs,
            self.sentences + other.sentences,
            self.tokens + other.tokens,
            self.chars + other.chars,
        )

    def to_dict(self) -> Dict[str, int]:
        return {"docs": self.docs, "sentences": self.sentences, "tokens": self.tokens, "chars": self.chars}


def document_stats(doc: Document) -> CorpusStats:
    # sentences split at whitespace, so per-sentence token counts add up to
    # the document count; fragments of control characters alone are dropped
    lengths = [len(basic_tokenize(s, CasingMode.CASED)) for s in split_sentences(doc.text)]
    return CorpusStats(
        docs=1,
        sentences=sum(1 for n in lengths if n),
        tokens=sum(lengths),
        chars=len(doc.text),
    )


def corpus_stats(docs: Iterable[Document]) -> Dict[str, CorpusStats]:
    """Per-source rows plus a ``total`` row. All four sources always appear."""
    rows: Dict[str, CorpusStats] = {s.value: CorpusStats() for s in Source}
    for doc in docs:
        rows[doc.source.value] = rows[doc.source.value] + document_stats(doc)
    total = CorpusStats()
    for s in Source:
        total = total + rows[s.value]
    rows["total"] = total
    return rows


def _human(n: int) -> str:
    for div, suffix in ((10**9, "B"), (10**6, "M"), (10**3, "K")):
        if n >= div:
            value = n / div
            return f"{value:.1f}{suffix}" if value < 10 else f"{value:.0f}{suffix}"
    return str(n)


def format_stats_table(rows: Mapping[str, CorpusStats], human: bool = False) -> str:
    """Aligned plain-text table with Docs/Sents/Tokens/Chars columns."""
    fmt = _human if human else str
    header = ["", "Docs", "Sents", "Tokens", "Chars"]
    body = []
    for name, st in rows.items():
        if name == "total":
            continue
        body.append([name.capitalize(), fmt(st.docs), fmt(st.sentences), fmt(st.tokens), fmt(st.chars)])
    t = rows["total"]
    total = ["Total", fmt(t.docs), fmt(t.sentences), fmt(t.tokens), fmt(t.chars)]
    table = [header] + body + [total]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]

    def line(r):
        return "  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]).rstrip()

    rule = "-" * len(line(header))
    return "\n".join([line(header), rule] + [line(r) for r in body] + [rule, line(total)]) + "\n"


# --------------------------------------------------------------------------
# Chronological split


@dataclass(frozen=True)
class SplitSpec:
    train_per_class: int
    dev_per_class: int
    test_per_class: int
    classes: Sequence[str]

    def __post_init__(self):
        if min(self.train_per_class, self.dev_per_class, self.test_per_class) <= 0:
            raise ValueError("split counts must be positive")
        if not self.classes or len(set(self.classes)) != len(self.classes):
            raise ValueError("classes must be non-empty and distinct")


def balanced_chronological_split(docs: Iterable[Document], spec: SplitSpec, seed: int = 0) -> Dict[str, List[Document]]:
    """Per class, the oldest documents go to train, the next to dev, the next
    to test. Ordering is (timestamp, id) and fully deterministic; ``seed`` is
    accepted for interface symmetry but does not affect the result.
    """
    by_class: Dict[str, List[Document]] = defaultdict(list)
    wanted = set(spec.classes)
    for doc in docs:
        if doc.label not in wanted:
            raise CorpusError(f"document {doc.id}: label {doc.label!r} not in split classes")
        if doc.timestamp is None:
            raise CorpusError(f"document {doc.id}: missing timestamp")
        by_class[doc.label].append(doc)

    need = spec.train_per_class + spec.dev_per_class + spec.test_per_class
    out: Dict[str, List[Document]] = {"train": [], "dev": [], "test": []}
    for label in spec.classes:
        members = sorted(by_class.get(label, []), key=lambda d: (d.timestamp, d.id))
        if len(members) < need:
            raise CorpusError(f"insufficient class {label!r}: {len(members)} documents, need {need}")
        a = spec.train_per_class
        b = a + spec.dev_per_class
        out["train"].extend(members[:a])
        out["dev"].extend(members[a:b])
        out["test"].extend(members[b:need])
    return out

"""Masked-LM + next-sentence pretraining example generation.

Randomness comes from numpy's counter-based Philox generator. Each
(document index, duplication pass) pair gets its own substream derived as
``SeedSequence(seed, spawn_key=(doc_index, dup_pass))``, so documents can be
expanded in any order or in parallel and still give identical output.
"""
from __future__ import annotations

import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .parallel import ordered_map
from .vocab import CLS, CONTINUATION, MASK, SEP, SPECIALS, Vocab

MAX_PREDICTIONS = {128: 20, 512: 77}


@dataclass(frozen=True)
class GenConfig:
    max_seq_len: int = 128
    max_predictions: int = 20
    mask_prob: float = 0.15
    random_next_prob: float = 0.5
    mask_token_prob: float = 0.8
    random_replace_prob: float = 0.1
    keep_prob: float = 0.1
    short_seq_prob: float = 0.1
    dup_factors: Mapping[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        total = self.mask_token_prob + self.random_replace_prob + self.keep_prob
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise ValueError(f"mask/replace/keep probabilities must sum to 1, got {total}")
        if not 0.0 < self.mask_prob < 1.0:
            raise ValueError("mask_prob must be in (0, 1)")
        if not 0.0 <= self.random_next_prob <= 1.0:
            raise ValueError("random_next_prob must be in [0, 1]")
        if not 0.0 <= self.short_seq_prob <= 1.0:
            raise ValueError("short_seq_prob must be in [0, 1]")
        if self.max_seq_len < 5:
            raise ValueError("max_seq_len must be at least 5")
        if not 1 <= self.max_predictions <= self.max_seq_len:
            raise ValueError("max_predictions must be in [1, max_seq_len]")
        if any(int(v) < 0 for v in self.dup_factors.values()):
            raise ValueError("duplication factors must be >= 0")

    @classmethod
    def for_length(cls, max_seq_len: int, **kw) -> "GenConfig":
        """Config with the standard prediction cap for 128 or 512 pieces."""
        return cls(max_seq_len=max_seq_len, max_predictions=MAX_PREDICTIONS[max_seq_len], **kw)

    def dup_factor(self, source: str) -> int:
        return int(self.dup_factors.get(source, 1))


@dataclass(frozen=True)
class PregenDocument:
    """A document as per-sentence word-piece lists."""

    sentences: Tuple[Tuple[str, ...], ...]
    source: str = "other"

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(tuple(s) for s in self.sentences if len(s) > 0))


@dataclass(frozen=True)
class PretrainExample:
    pieces: Tuple[int, ...]
    segment_ids: Tuple[int, ...]
    masked_positions: Tuple[int, ...]
    masked_labels: Tuple[int, ...]
    is_next: bool
    source: str = field(default="other", compare=False)

    def to_dict(self) -> dict:
        return {
            "pieces": list(self.pieces),
            "segment_ids": list(self.segment_ids),
            "masked_positions": list(self.masked_positions),
            "masked_labels": list(self.masked_labels),
            "is_next": self.is_next,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "PretrainExample":
        return cls(
            tuple(d["pieces"]),
            tuple(d["segment_ids"]),
            tuple(d["masked_positions"]),
            tuple(d["masked_labels"]),
            bool(d["is_next"]),
        )


def substream(seed: int, doc_index: int, dup_pass: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(doc_index, dup_pass))
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# Masking


def word_spans(piece_strings: Sequence[str]) -> List[List[int]]:
    """Group positions into words: a ``##`` piece joins the preceding word.
    [CLS] and [SEP] are excluded and also break words."""
    words: List[List[int]] = []
    prev_special = True
    for i, p in enumerate(piece_strings):
        if p in (CLS, SEP):
            prev_special = True
            continue
        if p.startswith(CONTINUATION) and words and not prev_special:
            words[-1].append(i)
        else:
            words.append([i])
        prev_special = False
    return words


def apply_whole_word_mask(
    pieces: Sequence[int],
    words: Sequence[Sequence[int]],
    cfg: GenConfig,
    rng: np.random.Generator,
    vocab_size: int,
    mask_id: int = SPECIALS.index(MASK),
) -> Tuple[List[int], List[int], List[int]]:
    """Select whole words until the masking budget is covered.

    Budget is ``max(1, min(max_predictions, round(mask_prob * candidates)))``.
    Words are visited in random order; a word that would overshoot the budget
    is skipped unless nothing has been selected yet. Each chosen word gets a
    single draw: [MASK] for all its pieces, random non-special pieces, or
    unchanged.
    """
    candidates = sum(len(w) for w in words)
    if not words or candidates == 0:
        raise ValueError("empty candidates: nothing to mask")
    budget = max(1, min(cfg.max_predictions, int(round(cfg.mask_prob * candidates))))
    out = list(pieces)
    chosen: List[int] = []
    order = rng.permutation(len(words))
    for wi in order:
        word = words[int(wi)]
        if len(chosen) >= budget:
            break
        if len(chosen) + len(word) > budget and (chosen or len(word) > cfg.max_predictions):
            continue
        r = rng.random()
        if r < cfg.mask_token_prob:
            for p in word:
                out[p] = mask_id
        elif r < cfg.mask_token_prob + cfg.random_replace_prob:
            for p in word:
                out[p] = int(rng.integers(len(SPECIALS), vocab_size))
        chosen.extend(word)
    if not chosen:
        raise ValueError("every candidate word is longer than max_predictions")
    chosen.sort()
    return out, chosen, [pieces[p] for p in chosen]


# --------------------------------------------------------------------------
# Instance creation


def _truncate_pair(a: List[str], b: List[str], max_tokens: int, rng: np.random.Generator) -> None:
    while len(a) + len(b) > max_tokens:
        longer = a if len(a) > len(b) else b
        if rng.random() < 0.5:
            del longer[0]
        else:
            longer.pop()


@dataclass
class GenStats:
    examples: Counter = field(default_factory=Counter)
    skipped: Counter = field(default_factory=Counter)
    passes: Counter = field(default_factory=Counter)

    def merge(self, other: "GenStats") -> None:
        self.examples.update(other.examples)
        self.skipped.update(other.skipped)
        self.passes.update(other.passes)

    def to_dict(self) -> dict:
        return {
            "examples_per_source": dict(sorted(self.examples.items())),
            "passes_per_source": dict(sorted(self.passes.items())),
            "skipped": dict(sorted(self.skipped.items())),
        }


def _build_example(a, b, is_next, source, cfg, vocab, rng) -> PretrainExample:
    strings = [CLS] + a + [SEP] + b + [SEP]
    ids = [vocab.id_of(p) for p in strings]
    segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    words = word_spans(strings)
    masked, positions, labels = apply_whole_word_mask(ids, words, cfg, rng, len(vocab), vocab.ids[MASK])
    return PretrainExample(tuple(masked), tuple(segments), tuple(positions), tuple(labels), is_next, source)


def document_instances(
    docs: Sequence[PregenDocument],
    doc_index: int,
    dup_pass: int,
    cfg: GenConfig,
    vocab: Vocab,
    stats: Optional[GenStats] = None,
) -> List[PretrainExample]:
    """Examples from one pass over one document.

    Sentences are packed into a chunk until it reaches the target length and
    holds at least two sentences; a lone trailing sentence is absorbed into
    the chunk instead of being orphaned. The chunk splits at a random point
    into segments A and B; B is replaced by sentences from another document
    with probability ``random_next_prob``, and the unused tail of the chunk
    is then revisited.
    """
    stats = stats if stats is not None else GenStats()
    doc = docs[doc_index].sentences
    source = docs[doc_index].source
    rng = substream(cfg.seed, doc_index, dup_pass)
    max_tokens = cfg.max_seq_len - 3
    target = max_tokens
    if rng.random() < cfg.short_seq_prob:
        target = int(rng.integers(2, max_tokens + 1))

    out: List[PretrainExample] = []
    chunk: List[Tuple[str, ...]] = []
    length = 0
    i = 0
    n = len(doc)
    while i < n:
        chunk.append(doc[i])
        length += len(doc[i])
        remaining = n - i - 1
        if remaining == 0 or (length >= target and len(chunk) >= 2 and remaining != 1):
            if len(chunk) == 1 and n > 1:
                stats.skipped["orphan_sentence"] += 1
            else:
                a_end = int(rng.integers(1, len(chunk))) if len(chunk) >= 2 else 1
                a = [p for s in chunk[:a_end] for p in s]
                random_next = len(chunk) == 1 or rng.random() < cfg.random_next_prob
                if random_next:
                    if len(docs) < 2:
                        stats.skipped["no_partner"] += 1
                        b = None
                    else:
                        b = []
                        other = int(rng.integers(0, len(docs) - 1))
                        if other >= doc_index:
                            other += 1
                        rdoc = docs[other].sentences
                        want = max(1, target - len(a))
                        for s in rdoc[int(rng.integers(0, len(rdoc))):]:
                            b.extend(s)
                            if len(b) >= want:
                                break
                        i -= len(chunk) - a_end
                else:
                    b = [p for s in chunk[a_end:] for p in s]
                if b:
                    _truncate_pair(a, b, max_tokens, rng)
                    ex = _build_example(a, b, not random_next, source, cfg, vocab, rng)
                    out.append(ex)
                    stats.examples[source] += 1
            chunk = []
            length = 0
        i += 1
    return out


def _doc_job(shared, key):
    docs, cfg, vocab = shared
    doc_index, dup_pass = key
    stats = GenStats()
    return document_instances(docs, doc_index, dup_pass, cfg, vocab, stats), stats


def create_instances(
    docs: Sequence[PregenDocument],
    cfg: GenConfig,
    vocab: Vocab,
    stats: Optional[GenStats] = None,
    workers: int = 1,
) -> List[PretrainExample]:
    """All examples ordered by (document, duplication pass, position).

    Documents from a source with duplication factor ``k`` are expanded ``k``
    times, each pass with its own random substream.
    """
    docs = [d for d in docs if d.sentences]
    stats = stats if stats is not None else GenStats()
    keys = []
    for di, d in enumerate(docs):
        k = cfg.dup_factor(d.source)
        stats.passes[d.source] += k
        keys.extend((di, p) for p in range(k))
    results = ordered_map(_doc_job, keys, workers=workers, shared=(docs, cfg, vocab))
    out: List[PretrainExample] = []
    for examples, st in results:
        out.extend(examples)
        stats.examples.update(st.examples)
        stats.skipped.update(st.skipped)
    return out


def suggest_dup_factors(tokens_per_source: Mapping[str, int]) -> Dict[str, int]:
    """Per-source pass counts that roughly equalize expected example counts:
    the largest source gets 1, a source k times smaller gets round(k)."""
    sizes = {s: n for s, n in tokens_per_source.items() if n > 0}
    if not sizes:
        return {}
    largest = max(sizes.values())
    return {s: max(1, int(round(largest / n))) for s, n in sorted(sizes.items())}


# --------------------------------------------------------------------------
# Serialization


class SerializationError(IOError):
    def __init__(self, message: str, written: int):
        super().__init__(message)
        self.written = written


def serialize_examples(examples: Iterable[PretrainExample], sink) -> int:
    """Write one JSON object per line; returns the number written."""
    n = 0
    text_sink = isinstance(sink, io.TextIOBase)
    for ex in examples:
        line = ex.to_json() + "\n"
        try:
            sink.write(line if text_sink else line.encode("utf-8"))
        except (OSError, ValueError) as exc:
            raise SerializationError(f"write failed after {n} examples: {exc}", n) from exc
        n += 1
    return n


def read_examples(stream) -> Iterator[PretrainExample]:
    for line in stream:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if line.strip():
            yield PretrainExample.from_dict(json.loads(line))


def check_example(ex: PretrainExample, cfg: GenConfig, vocab: Vocab) -> List[str]:
    """Return a list of invariant violations (empty when valid)."""
    problems = []
    cls_id, sep_id = vocab.ids[CLS], vocab.ids[SEP]
    n = len(ex.pieces)
    if n > cfg.max_seq_len:
        problems.append("too long")
    if not ex.pieces or ex.pieces[0] != cls_id:
        problems.append("does not start with [CLS]")
    if len(ex.segment_ids) != n:
        problems.append("segment_ids length mismatch")
    if not 1 <= len(ex.masked_positions) <= cfg.max_predictions:
        problems.append("masked count out of range")
    if list(ex.masked_positions) != sorted(set(ex.masked_positions)):
        problems.append("masked positions not sorted/unique")
    if len(ex.masked_labels) != len(ex.masked_positions):
        problems.append("label count mismatch")
    for p, label in zip(ex.masked_positions, ex.masked_labels):
        if not 0 < p < n or label in (cls_id, sep_id):
            problems.append(f"masked position {p} points at a special or is out of range")
    seps = [i for i, p in enumerate(ex.pieces) if p == sep_id and i not in ex.masked_positions]
    if len(seps) != 2 or seps[-1] != n - 1:
        problems.append("expected exactly two [SEP]")
    else:
        first = seps[0]
        expect = [0] * (first + 1) + [1] * (n - first - 1)
        if list(ex.segment_ids) != expect:
            problems.append("segment_ids inconsistent with [SEP] placement")
    return problems

"""Basic tokenization, BPE vocabulary training and subword encoding.

Vocabularies follow the BERT WordPiece layout: word-initial pieces are bare,
non-initial pieces carry the ``##`` continuation prefix, and five special
tokens occupy ids 0-4.
"""
from __future__ import annotations

import heapq
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

CONTINUATION = "##"
PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)


class CasingMode(str, Enum):
    CASED = "cased"
    UNCASED = "uncased"


def strip_accents_lower(text: str) -> str:
    """NFD-decompose, drop combining marks (category Mn), lowercase."""
    decomposed = unicodedata.normalize("NFD", text)
    return "".join(ch for ch in decomposed if unicodedata.category(ch) != "Mn").lower()


def is_punctuation(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return cat[0] in ("P", "S")


def basic_tokenize(text: str, mode: CasingMode | str = CasingMode.CASED) -> List[str]:
    """Split on whitespace, then split every punctuation/symbol code point
    into its own token. Uncased mode strips accents and lowercases first."""
    if CasingMode(mode) is CasingMode.UNCASED:
        text = strip_accents_lower(text)
    tokens: List[str] = []
    for chunk in text.split():
        current: List[str] = []
        for ch in chunk:
            if is_punctuation(ch):
                if current:
                    tokens.append("".join(current))
                    current = []
                tokens.append(ch)
            elif unicodedata.category(ch) in ("Cc", "Cf"):
                # control/format characters act as separators
                if current:
                    tokens.append("".join(current))
                    current = []
            else:
                current.append(ch)
        if current:
            tokens.append("".join(current))
    return tokens


def initial_symbols(token: str) -> List[str]:
    return [ch if i == 0 else CONTINUATION + ch for i, ch in enumerate(token)]


def join_pieces(left: str, right: str) -> str:
    return left + right[len(CONTINUATION):] if right.startswith(CONTINUATION) else left + right


@dataclass(frozen=True)
class MergeTable:
    merges: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "merges", tuple(tuple(m) for m in self.merges))
        if len(set(self.merges)) != len(self.merges):
            raise ValueError("merge table contains a duplicate pair")

    def __len__(self) -> int:
        return len(self.merges)

    def prefix(self, k: int) -> "MergeTable":
        return MergeTable(self.merges[:k])

    @property
    def ranks(self) -> Dict[Tuple[str, str], int]:
        ranks = self.__dict__.get("_ranks")
        if ranks is None:
            ranks = {pair: i for i, pair in enumerate(self.merges)}
            object.__setattr__(self, "_ranks", ranks)
        return ranks

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{a} {b}\n" for a, b in self.merges), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MergeTable":
        merges = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'left right'")
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


@dataclass(frozen=True)
class Vocab:
    """Ordered piece inventory; ``pieces[i]`` has id ``i``."""

    pieces: Tuple[str, ...]
    casing: CasingMode = CasingMode.CASED
    ids: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "casing", CasingMode(self.casing))
        if tuple(self.pieces[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocab must start with specials {SPECIALS}")
        ids = {p: i for i, p in enumerate(self.pieces)}
        if len(ids) != len(self.pieces):
            raise ValueError("vocab pieces are not unique")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_pieces(cls, pieces: Iterable[str], casing=CasingMode.CASED) -> "Vocab":
        """Build a vocab from non-special pieces, prepending the specials."""
        out = list(SPECIALS)
        seen = set(out)
        for p in pieces:
            if p not in seen:
                seen.add(p)
                out.append(p)
        return cls(tuple(out), casing)

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self.ids

    def id_of(self, piece: str) -> int:
        return self.ids.get(piece, self.ids[UNK])

    def save(self, path) -> None:
        Path(path).write_text("".join(p + "\n" for p in self.pieces), encoding="utf-8")

    @classmethod
    def load(cls, path, casing=CasingMode.CASED) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines), casing)


# --------------------------------------------------------------------------
# BPE training


def _pair_counts(symbols: Sequence[str]) -> Counter:
    return Counter(zip(symbols, symbols[1:]))


def _merge_word(symbols: Sequence[str], pair: Tuple[str, str]) -> List[str]:
    left, right = pair
    out: List[str] = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(join_pieces(left, right))
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def bpe_alphabet(token_counts: Mapping[str, int]) -> List[str]:
    alphabet = set()
    for token in token_counts:
        alphabet.update(initial_symbols(token))
    return sorted(alphabet)


def train_bpe(
    token_counts: Mapping[str, int],
    vocab_size: int,
    mode: CasingMode | str = CasingMode.CASED,
) -> Tuple[Vocab, MergeTable]:
    """Learn BPE merges over continuation-marked symbols.

    The most frequent adjacent pair is merged until the vocabulary reaches
    ``vocab_size`` pieces or no pair occurs at least twice. Ties go to the
    lexicographically smallest ``(left, right)`` pair.
    """
    token_counts = {t: c for t, c in token_counts.items() if t and c > 0}
    alphabet = bpe_alphabet(token_counts)
    minimum = len(alphabet) + len(SPECIALS)
    if vocab_size < minimum:
        raise ValueError(f"vocab_size {vocab_size} is below the minimum {minimum}")

    pieces = list(SPECIALS) + alphabet
    known = set(pieces)
    merges: List[Tuple[str, str]] = []

    words = sorted(token_counts)
    freqs = [token_counts[w] for w in words]
    segs = [initial_symbols(w) for w in words]

    stats: Counter = Counter()
    where: Dict[Tuple[str, str], set] = {}
    for idx, seg in enumerate(segs):
        for pair, k in _pair_counts(seg).items():
            stats[pair] += k * freqs[idx]
            where.setdefault(pair, set()).add(idx)

    heap = [(-count, pair) for pair, count in stats.items()]
    heapq.heapify(heap)

    while len(pieces) < vocab_size and heap:
        neg, pair = heapq.heappop(heap)
        current = stats.get(pair, 0)
        if current != -neg:
            # stale entry; the live count was pushed separately
            continue
        if current < 2:
            break
        merges.append(pair)
        new_piece = join_pieces(*pair)
        if new_piece not in known:
            known.add(new_piece)
            pieces.append(new_piece)

        touched = set()
        for idx in sorted(where.pop(pair, ())):
            seg = segs[idx]
            new_seg = _merge_word(seg, pair)
            if new_seg == seg:
                continue
            f = freqs[idx]
            old_pairs = _pair_counts(seg)
            new_pairs = _pair_counts(new_seg)
            for p, k in old_pairs.items():
                stats[p] -= k * f
                touched.add(p)
                if p not in new_pairs and p in where:
                    where[p].discard(idx)
            for p, k in new_pairs.items():
                stats[p] += k * f
                touched.add(p)
                where.setdefault(p, set()).add(idx)
            segs[idx] = new_seg
        stats.pop(pair, None)
        for p in touched:
            c = stats.get(p, 0)
            if c <= 0:
                stats.pop(p, None)
                where.pop(p, None)
            elif p != pair:
                heapq.heappush(heap, (-c, p))

    return Vocab(tuple(pieces), CasingMode(mode)), MergeTable(tuple(merges))


def naive_train_bpe(token_counts: Mapping[str, int], vocab_size: int) -> List[Tuple[str, str]]:
    """Quadratic reference trainer: recount every pair each iteration."""
    token_counts = {t: c for t, c in token_counts.items() if t and c > 0}
    alphabet = bpe_alphabet(token_counts)
    n_pieces = len(SPECIALS) + len(alphabet)
    known = set(alphabet)
    segs = {t: initial_symbols(t) for t in token_counts}
    merges: List[Tuple[str, str]] = []
    while n_pieces < vocab_size:
        counts: Dict[Tuple[str, str], int] = {}
        for t, seg in segs.items():
            for i in range(len(seg) - 1):
                pair = (seg[i], seg[i + 1])
                counts[pair] = counts.get(pair, 0) + token_counts[t]
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        if counts[best] < 2:
            break
        merges.append(best)
        piece = join_pieces(*best)
        if piece not in known:
            known.add(piece)
            n_pieces += 1
        segs = {t: _merge_word(seg, best) for t, seg in segs.items()}
    return merges


# --------------------------------------------------------------------------
# Encoding


def bpe_encode(token: str, merges: MergeTable) -> List[str]:
    """Segment ``token`` by applying ``merges`` once each, in table order.

    Each merge joins every left-to-right occurrence of its pair; merges
    earlier in the table than the last one applied are not revisited.
    """
    cache = merges.__dict__.setdefault("_cache", {})
    hit = cache.get(token)
    if hit is None:
        hit = cache[token] = _bpe_apply(token, merges)
    return list(hit)


def _bpe_apply(token: str, merges: MergeTable) -> Tuple[str, ...]:
    symbols = initial_symbols(token)
    ranks = merges.ranks
    last = -1
    while len(symbols) > 1:
        best = None
        for pair in zip(symbols, symbols[1:]):
            r = ranks.get(pair)
            if r is not None and r > last and (best is None or r < best):
                best = r
        if best is None:
            break
        symbols = _merge_word(symbols, merges.merges[best])
        last = best
    return tuple(symbols)


def wordpiece_encode(token: str, vocab: Vocab) -> List[str]:
    """Greedy longest-prefix match; any unmatched position makes the whole
    token ``[UNK]``."""
    pieces: List[str] = []
    start = 0
    n = len(token)
    while start < n:
        end = n
        match = None
        while end > start:
            candidate = token[start:end]
            if start > 0:
                candidate = CONTINUATION + candidate
            if candidate in vocab.ids:
                match = candidate
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def tokenize(text: str, vocab: Vocab) -> List[str]:
    """Basic tokenization in the vocab's casing mode followed by WordPiece."""
    out: List[str] = []
    for token in basic_tokenize(text, vocab.casing):
        out.extend(wordpiece_encode(token, vocab))
    return out


# --------------------------------------------------------------------------
# Coverage


@dataclass(frozen=True)
class CoverageReport:
    pieces_per_token: float
    unk_per_token: float
    tokens: int = 0
    pieces: int = 0
    unks: int = 0

    def to_dict(self) -> dict:
        return {
            "pieces_per_token": self.pieces_per_token,
            "unk_per_token": self.unk_per_token,
            "tokens": self.tokens,
            "pieces": self.pieces,
            "unks": self.unks,
        }


def coverage_stats(
    texts: Iterable[str],
    vocab: Vocab,
    encode: Callable[[str], List[str]] | None = None,
) -> CoverageReport:
    """Pieces and ``[UNK]`` pieces per basic token.

    ``encode`` defaults to WordPiece against ``vocab``; an ``[UNK]`` piece
    counts as exactly one piece.
    """
    if encode is None:
        encode = lambda tok: wordpiece_encode(tok, vocab)  # noqa: E731
    n_tokens = n_pieces = n_unk = 0
    for text in texts:
        for token in basic_tokenize(text, vocab.casing):
            pieces = encode(token)
            n_tokens += 1
            n_pieces += len(pieces)
            n_unk += sum(1 for p in pieces if p == UNK)
    if n_tokens == 0:
        raise ValueError("coverage_stats: no basic tokens in input")
    return CoverageReport(n_pieces / n_tokens, n_unk / n_tokens, n_tokens, n_pieces, n_unk)


def count_tokens(texts: Iterable[str], mode: CasingMode | str = CasingMode.CASED) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        counts.update(basic_tokenize(text, mode))
    return counts

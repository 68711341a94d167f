"""Gold-segmentation evaluation: UPOS accuracy, conlleval-style mention
precision/recall/F1 and labeled attachment score."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

ID, FORM, LEMMA, UPOS, XPOS, FEATS, HEAD, DEPREL, DEPS, MISC = range(10)


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class TaggedSentence:
    tokens: Tuple[str, ...]
    tags: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise ValueError("tokens and tags differ in length")


@dataclass(frozen=True)
class DepGraph:
    heads: Tuple[int, ...]
    deprels: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))
        object.__setattr__(self, "deprels", tuple(self.deprels))
        n = len(self.heads)
        if n != len(self.deprels):
            raise ValueError("heads and deprels differ in length")
        for i, h in enumerate(self.heads, 1):
            if not 0 <= h <= n:
                raise ValueError(f"token {i}: head {h} out of range")
            if h == i:
                raise ValueError(f"token {i} is its own head")


@dataclass(frozen=True)
class Mention:
    start: int
    end: int
    type: str


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    for line in stream:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line.rstrip("\r\n")


def parse_conllu(stream) -> List[Tuple[TaggedSentence, DepGraph]]:
    """Read 10-column CoNLL-U. Comments, multiword ranges (``1-2``) and empty
    nodes (``1.1``) are skipped."""
    out = []
    forms: List[str] = []
    upos: List[str] = []
    heads: List[int] = []
    rels: List[str] = []

    def flush(lineno):
        if forms:
            try:
                out.append((TaggedSentence(forms, upos), DepGraph(heads, rels)))
            except ValueError as exc:
                raise FormatError(f"sentence ending at line {lineno}: {exc}") from None
            forms.clear(), upos.clear(), heads.clear(), rels.clear()

    lineno = 0
    for lineno, line in enumerate(_lines(stream), 1):
        if not line.strip():
            flush(lineno)
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise FormatError(f"line {lineno}: expected 10 columns, got {len(cols)}")
        if "-" in cols[ID] or "." in cols[ID]:
            continue
        try:
            head = int(cols[HEAD])
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer head {cols[HEAD]!r}") from None
        forms.append(cols[FORM])
        upos.append(cols[UPOS])
        heads.append(head)
        rels.append(cols[DEPREL])
    flush(lineno)
    return out


def parse_conll_tags(stream) -> List[TaggedSentence]:
    """Read whitespace-separated (token, tag) lines; a blank line ends a
    sentence. Only the first and last columns are used."""
    out = []
    toks: List[str] = []
    tags: List[str] = []
    for lineno, line in enumerate(_lines(stream), 1):
        if not line.strip():
            if toks:
                out.append(TaggedSentence(toks, tags))
                toks, tags = [], []
            continue
        if line.startswith("-DOCSTART-"):
            continue
        cols = line.split()
        if len(cols) < 2:
            raise FormatError(f"line {lineno}: expected token and tag")
        toks.append(cols[0])
        tags.append(cols[-1])
    if toks:
        out.append(TaggedSentence(toks, tags))
    return out


def _check_alignment(gold: Sequence, pred: Sequence, length) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"sentence count mismatch: gold {len(gold)}, predicted {len(pred)}")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if length(g) != length(p):
            raise ValueError(f"sentence {i}: gold has {length(g)} tokens, predicted {length(p)}")


def upos_accuracy(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]) -> float:
    _check_alignment(gold, pred, lambda s: len(s.tags))
    total = sum(len(s.tags) for s in gold)
    if total == 0:
        raise ValueError("no tokens to evaluate")
    correct = sum(a == b for g, p in zip(gold, pred) for a, b in zip(g.tags, p.tags))
    return correct / total


def _split_tag(tag: str) -> Tuple[str, str]:
    if tag == "O" or "-" not in tag:
        return "O", ""
    prefix, _, kind = tag.partition("-")
    return prefix, kind


def extract_mentions(tags: Sequence[str]) -> List[Mention]:
    """Maximal typed spans. ``B-T`` always opens a mention; ``I-T`` opens one
    unless it continues a mention of the same type."""
    mentions: List[Mention] = []
    start = None
    kind = ""
    for i, tag in enumerate(tags):
        prefix, t = _split_tag(tag)
        continues = prefix == "I" and start is not None and t == kind
        if start is not None and not continues:
            mentions.append(Mention(start, i - 1, kind))
            start = None
        if prefix in ("B", "I") and not continues:
            start, kind = i, t
    if start is not None:
        mentions.append(Mention(start, len(tags) - 1, kind))
    return mentions


def detect_iob_scheme(sentences: Sequence[TaggedSentence]) -> str:
    """Return "iob1" if some mention opens with ``I-`` (only legal in IOB1),
    else "iob2". Both are scored the same way; this is for the report."""
    for s in sentences:
        prev_prefix, prev_kind = "O", ""
        for tag in s.tags:
            prefix, kind = _split_tag(tag)
            if prefix == "I" and (prev_prefix == "O" or prev_kind != kind):
                return "iob1"
            prev_prefix, prev_kind = prefix, kind
    return "iob2"


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    correct: int = 0
    gold: int = 0
    predicted: int = 0

    def to_dict(self) -> Dict[str, float]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "correct": self.correct,
            "gold": self.gold,
            "predicted": self.predicted,
        }


def mention_prf(gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence]) -> PRF:
    _check_alignment(gold, pred, lambda s: len(s.tags))
    n_gold = n_pred = n_ok = 0
    for g, p in zip(gold, pred):
        gm = set(extract_mentions(g.tags))
        pm = set(extract_mentions(p.tags))
        n_gold += len(gm)
        n_pred += len(pm)
        n_ok += len(gm & pm)
    precision = n_ok / n_pred if n_pred else 0.0
    recall = n_ok / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision, recall, f1, n_ok, n_gold, n_pred)


def las(gold: Sequence[DepGraph], pred: Sequence[DepGraph], strip_subtypes: bool = True) -> float:
    """Share of tokens whose head and relation are both right. Relation
    subtypes (``nmod:poss`` -> ``nmod``) are ignored by default, as in the
    CoNLL 2018 evaluation."""
    _check_alignment(gold, pred, lambda g: len(g.heads))
    total = sum(len(g.heads) for g in gold)
    if total == 0:
        raise ValueError("no tokens to evaluate")

    def rel(r: str) -> str:
        return r.split(":")[0] if strip_subtypes else r

    correct = 0
    for g, p in zip(gold, pred):
        for gh, gr, ph, pr in zip(g.heads, g.deprels, p.heads, p.deprels):
            if gh == ph and rel(gr) == rel(pr):
                correct += 1
    return correct / total


def format_report(metrics: Dict[str, float]) -> str:
    width = max(len(k) for k in metrics) if metrics else 0
    return "".join(f"{k.ljust(width)}  {100 * v:6.2f}\n" for k, v in metrics.items())


def report_json(metrics: Dict[str, float]) -> str:
    return json.dumps(metrics, sort_keys=True)

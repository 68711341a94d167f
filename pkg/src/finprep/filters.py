"""Quality filters: character-class heuristics, trigram language detection
and a Pegasos-trained linear hinge-loss classifier."""
from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .corpus import Document, split_sentences
from .vocab import CasingMode, basic_tokenize

FINNISH_ALPHABET = frozenset("abcdefghijklmnopqrstuvwxyzåäö")
HASH_BUCKETS = 1 << 20
MIN_PROFILE_CHARS = 100


class Reason(str, Enum):
    OK = "ok"
    DIGIT_RATIO = "digit_ratio"
    UPPER_RATIO = "upper_ratio"
    NONTARGET_ALPHA = "nontarget_alpha"
    SHORT_SENTENCES = "short_sentences"
    LANGUAGE = "language"
    CLASSIFIER = "classifier"


@dataclass(frozen=True)
class Thresholds:
    # defaults are placeholders, not tuned against any reference pipeline
    max_digit_ratio: float = 0.2
    max_upper_ratio: float = 0.3
    max_nontarget_alpha_ratio: float = 0.05
    min_avg_sentence_len: float = 5.0
    min_lang_score: float = 0.7

    def __post_init__(self):
        for name in ("max_digit_ratio", "max_upper_ratio", "max_nontarget_alpha_ratio", "min_lang_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.min_avg_sentence_len < 0:
            raise ValueError("min_avg_sentence_len must be >= 0")


@dataclass(frozen=True)
class FilterVerdict:
    kept: bool
    reason: Reason
    score: Optional[float] = None

    @classmethod
    def ok(cls, score=None) -> "FilterVerdict":
        return cls(True, Reason.OK, score)

    @classmethod
    def reject(cls, reason: Reason, score=None) -> "FilterVerdict":
        return cls(False, reason, score)


# --------------------------------------------------------------------------
# Heuristics


def char_class_ratios(text: str, target_alphabet=FINNISH_ALPHABET) -> Dict[str, float]:
    """Digit and uppercase ratios over non-whitespace code points; the
    non-target ratio is over alphabetic code points only (0 if none)."""
    chars = [ch for ch in text if not ch.isspace()]
    if not chars:
        raise ValueError("empty text: no non-whitespace characters")
    n = len(chars)
    digits = sum(ch.isdigit() for ch in chars)
    upper = sum(ch.isupper() for ch in chars)
    alpha = [ch for ch in chars if ch.isalpha()]
    nontarget = sum(ch.lower() not in target_alphabet for ch in alpha)
    return {
        "digit": digits / n,
        "upper": upper / n,
        "nontarget_alpha": nontarget / len(alpha) if alpha else 0.0,
    }


def sentence_lengths(text: str) -> List[int]:
    return [len(basic_tokenize(s, CasingMode.CASED)) for s in split_sentences(text)]


def heuristic_filter(doc: Document, t: Thresholds, lengths: Optional[Sequence[int]] = None) -> FilterVerdict:
    """Apply digit -> upper -> non-target -> sentence-length rules in order.

    ``lengths`` are per-sentence basic token counts; computed from the text
    when omitted.
    """
    if not doc.text.strip():
        return FilterVerdict.reject(Reason.SHORT_SENTENCES, 0.0)
    r = char_class_ratios(doc.text)
    if r["digit"] > t.max_digit_ratio:
        return FilterVerdict.reject(Reason.DIGIT_RATIO, r["digit"])
    if r["upper"] > t.max_upper_ratio:
        return FilterVerdict.reject(Reason.UPPER_RATIO, r["upper"])
    if r["nontarget_alpha"] > t.max_nontarget_alpha_ratio:
        return FilterVerdict.reject(Reason.NONTARGET_ALPHA, r["nontarget_alpha"])
    if lengths is None:
        lengths = sentence_lengths(doc.text)
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    if avg < t.min_avg_sentence_len:
        return FilterVerdict.reject(Reason.SHORT_SENTENCES, avg)
    return FilterVerdict.ok()


# --------------------------------------------------------------------------
# Language detection


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def trigram_counts(text: str) -> Counter:
    s = _normalize(text)
    return Counter(s[i:i + 3] for i in range(len(s) - 2))


@dataclass(frozen=True)
class LanguageProfile:
    lang: str
    ngram_freqs: Mapping[str, float]

    def to_json(self) -> str:
        return json.dumps({"lang": self.lang, "ngram_freqs": dict(sorted(self.ngram_freqs.items()))},
                          ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, data: str) -> "LanguageProfile":
        obj = json.loads(data)
        return cls(obj["lang"], obj["ngram_freqs"])


def train_language_profiles(samples: Mapping[str, str]) -> List[LanguageProfile]:
    profiles = []
    for lang in sorted(samples):
        text = samples[lang]
        if len(text) < MIN_PROFILE_CHARS:
            raise ValueError(f"sample too small: {lang} ({len(text)} < {MIN_PROFILE_CHARS} code points)")
        counts = trigram_counts(text)
        total = sum(counts.values())
        profiles.append(LanguageProfile(lang, {g: c / total for g, c in counts.items()}))
    return profiles


def _cosine(counts: Mapping[str, float], freqs: Mapping[str, float]) -> float:
    dot = sum(v * freqs.get(g, 0.0) for g, v in counts.items())
    na = math.sqrt(sum(v * v for v in counts.values()))
    nb = math.sqrt(sum(v * v for v in freqs.values()))
    if na == 0 or nb == 0:
        return 0.0
    return min(1.0, dot / (na * nb))


def detect_language(text: str, profiles: Sequence[LanguageProfile]) -> Tuple[str, float]:
    """Return ``(lang, cosine)`` of the best-matching profile; ties go to the
    alphabetically first language."""
    if not profiles:
        raise ValueError("no language profiles")
    if len(text) < 3:
        raise ValueError("text too short for language detection")
    counts = trigram_counts(text)
    scored = [(-_cosine(counts, p.ngram_freqs), p.lang) for p in profiles]
    neg, lang = min(scored)
    return lang, -neg


def language_filter(doc: Document, profiles: Sequence[LanguageProfile], target: str, t: Thresholds) -> FilterVerdict:
    if len(doc.text) < 3:
        return FilterVerdict.reject(Reason.LANGUAGE, 0.0)
    lang, score = detect_language(doc.text, profiles)
    if lang != target or score < t.min_lang_score:
        return FilterVerdict.reject(Reason.LANGUAGE, score)
    return FilterVerdict.ok(score)


# --------------------------------------------------------------------------
# Linear classifier

Features = Mapping[int, float]


def _bucket(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % HASH_BUCKETS


def lexical_features(text: str) -> Dict[int, float]:
    """Hashed lowercased unigram counts, L2-normalized."""
    counts: Counter = Counter(_bucket(tok) for tok in basic_tokenize(text.lower(), CasingMode.CASED))
    norm = math.sqrt(sum(c * c for c in counts.values()))
    return {k: c / norm for k, c in sorted(counts.items())} if norm else {}


class FeatureSpace(str, Enum):
    LEXICAL = "lexical"
    DELEXICALIZED = "delexicalized"


@dataclass
class LinearModel:
    weights: Dict[int, float] = field(default_factory=dict)
    bias: float = 0.0
    feature_space: FeatureSpace = FeatureSpace.LEXICAL

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def to_json(self) -> str:
        return json.dumps(
            {
                "feature_space": FeatureSpace(self.feature_space).value,
                "bias": self.bias,
                "weights": [[k, v] for k, v in sorted(self.weights.items()) if v != 0.0],
            },
            separators=(",", ":"),
        )

    @classmethod
    def load(cls, path) -> "LinearModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        weights = {int(k): float(v) for k, v in obj["weights"]}
        if any(k < 0 for k in weights) or not all(math.isfinite(v) for v in weights.values()):
            raise ValueError(f"{path}: invalid weight entries")
        return cls(weights, float(obj["bias"]), FeatureSpace(obj["feature_space"]))


def score_linear(model: LinearModel, features: Features) -> float:
    w = model.weights
    return sum(v * w.get(k, 0.0) for k, v in features.items()) + model.bias


def hinge_objective(model: LinearModel, examples: Sequence[Tuple[int, Features]], lam: float) -> float:
    """lam/2 * ||w||^2 + mean hinge loss. The bias is treated as a weight on a
    constant feature and is regularized too."""
    norm2 = sum(v * v for v in model.weights.values()) + model.bias ** 2
    loss = sum(max(0.0, 1.0 - y * score_linear(model, x)) for y, x in examples)
    return 0.5 * lam * norm2 + loss / len(examples)


def train_linear_svm(
    examples: Sequence[Tuple[int, Features]],
    lam: float = 1e-4,
    epochs: int = 10,
    seed: int = 0,
    feature_space: FeatureSpace = FeatureSpace.LEXICAL,
) -> LinearModel:
    """Pegasos stochastic subgradient descent with step 1/(lam*t).

    The bias rides along as the weight of an implicit constant feature. The
    weight vector is stored as ``scale * v`` so each shrink step is O(1). At
    the end of every epoch the full objective is evaluated and the best
    snapshot (starting from the zero model) is returned.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    labels = {y for y, _ in examples}
    if not labels <= {-1, 1}:
        raise ValueError("labels must be +1/-1")
    if labels != {-1, 1}:
        raise ValueError("training data must contain both classes")

    rng = np.random.Generator(np.random.Philox(seed))
    v: Dict[int, float] = {}
    v_bias = 0.0
    scale = 1.0
    t = 0
    best = LinearModel({}, 0.0, feature_space)
    best_obj = hinge_objective(best, examples, lam)

    for _ in range(epochs):
        for i in rng.permutation(len(examples)):
            t += 1
            y, x = examples[int(i)]
            eta = 1.0 / (lam * t)
            margin = y * (scale * (sum(val * v.get(k, 0.0) for k, val in x.items()) + v_bias))
            shrink = 1.0 - eta * lam
            if shrink <= 0.0:
                v, v_bias, scale = {}, 0.0, 1.0
            else:
                scale *= shrink
            if margin < 1.0:
                step = eta * y / scale
                for k, val in x.items():
                    v[k] = v.get(k, 0.0) + step * val
                v_bias += step
            if scale < 1e-9:
                v = {k: val * scale for k, val in v.items()}
                v_bias *= scale
                scale = 1.0
        model = LinearModel({k: scale * val for k, val in v.items() if val != 0.0}, scale * v_bias, feature_space)
        obj = hinge_objective(model, examples, lam)
        if obj < best_obj:
            best, best_obj = model, obj
    return best


def classifier_filter(model: LinearModel, features: Features, threshold: float = 0.0) -> FilterVerdict:
    s = score_linear(model, features)
    if s < threshold:
        return FilterVerdict.reject(Reason.CLASSIFIER, s)
    return FilterVerdict.ok(s)


def load_profiles(path) -> List[LanguageProfile]:
    return [LanguageProfile.from_json(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def save_profiles(profiles: Iterable[LanguageProfile], path) -> None:
    Path(path).write_text("".join(p.to_json() + "\n" for p in profiles), encoding="utf-8")

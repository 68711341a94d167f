"""Flat ``key = value`` pipeline configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional

from .corpus import SplitSpec
from .filters import Thresholds
from .pregen import MAX_PREDICTIONS, GenConfig
from .vocab import CasingMode


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    # heuristic and language filtering
    max_digit_ratio: float = 0.2
    max_upper_ratio: float = 0.3
    max_nontarget_alpha_ratio: float = 0.05
    min_avg_sentence_len: float = 5.0
    min_lang_score: float = 0.7
    target_lang: str = "fi"
    lang_profiles: Optional[str] = None
    # linear classifier
    svm_model: Optional[str] = None
    svm_threshold: float = 0.0
    svm_lambda: float = 1e-4
    svm_epochs: int = 10
    # deduplication
    dedup_n: int = 10
    dedup_threshold: float = 0.25
    dedup_keep_first: bool = False
    # vocabulary
    vocab_size: int = 50000
    casing: str = "cased"
    # example generation
    max_seq_len: int = 128
    max_predictions: int = 0  # 0: 20 for 128, 77 for 512
    mask_prob: float = 0.15
    random_next_prob: float = 0.5
    short_seq_prob: float = 0.1
    dup_factors: str = ""  # e.g. "news:2,discussion:1,crawl:1"
    # chronological split
    split_train: int = 10000
    split_dev: int = 1000
    split_test: int = 1000
    split_classes: str = ""

    # ------------------------------------------------------------------
    def thresholds(self) -> Thresholds:
        return Thresholds(
            self.max_digit_ratio,
            self.max_upper_ratio,
            self.max_nontarget_alpha_ratio,
            self.min_avg_sentence_len,
            self.min_lang_score,
        )

    def casing_mode(self) -> CasingMode:
        return CasingMode(self.casing)

    def dup_factor_map(self) -> Dict[str, int]:
        out = {}
        for item in filter(None, (s.strip() for s in self.dup_factors.split(","))):
            src, _, k = item.partition(":")
            try:
                out[src.strip()] = int(k)
            except ValueError:
                raise ConfigError(f"dup_factors: bad entry {item!r} (expected source:count)") from None
        return out

    def gen_config(self) -> GenConfig:
        maxpred = self.max_predictions or MAX_PREDICTIONS.get(self.max_seq_len)
        if not maxpred:
            raise ConfigError("max_predictions: must be set when max_seq_len is not 128 or 512")
        return GenConfig(
            max_seq_len=self.max_seq_len,
            max_predictions=maxpred,
            mask_prob=self.mask_prob,
            random_next_prob=self.random_next_prob,
            short_seq_prob=self.short_seq_prob,
            dup_factors=self.dup_factor_map(),
            seed=self.seed,
        )

    def split_spec(self) -> SplitSpec:
        classes = [c.strip() for c in self.split_classes.split(",") if c.strip()]
        return SplitSpec(self.split_train, self.split_dev, self.split_test, classes)

    def validate(self, need_split: bool = False) -> "PipelineConfig":
        """Raise ConfigError naming the offending field."""
        checks = [
            ("thresholds", self.thresholds),
            ("casing", self.casing_mode),
            ("generation", self.gen_config),
        ]
        if need_split:
            checks.append(("split", self.split_spec))
        for name, fn in checks:
            try:
                fn()
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.dedup_n < 1:
            raise ConfigError("dedup_n: must be >= 1")
        if self.dedup_threshold < 0:
            raise ConfigError("dedup_threshold: must be >= 0")
        if self.svm_lambda <= 0:
            raise ConfigError("svm_lambda: must be > 0")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size: must be > 5")
        for key in ("lang_profiles", "svm_model"):
            path = getattr(self, key)
            if path and not Path(path).exists():
                raise ConfigError(f"{key}: file not found: {path}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    f = _FIELDS[key]
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("Optional"):
            return raw or None
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def apply_settings(cfg: PipelineConfig, items: Iterable[str], origin: str = "--set") -> PipelineConfig:
    for item in items:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{origin}: expected key = value, got {item!r}")
        if key not in _FIELDS:
            raise ConfigError(f"{origin}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    return cfg


def load_config(path=None, overrides: Iterable[str] = ()) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        lines = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if line:
                lines.append((lineno, line))
        for lineno, line in lines:
            apply_settings(cfg, [line], origin=f"{path}:{lineno}")
    apply_settings(cfg, overrides)
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    out = []
    for name in _FIELDS:
        value = getattr(cfg, name)
        if value is None:
            value = ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{name} = {value}")
    return "\n".join(out) + "\n"

"""Batch command-line front end.

Exit codes: 0 success, 1 processing error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from collections import Counter
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .corpus import (
    CorpusError,
    Document,
    balanced_chronological_split,
    corpus_stats,
    format_stats_table,
    load_documents,
    split_sentences,
    write_documents,
)
from .dedup import ShingleIndex, build_shingle_index, dedup_filter
from .evalmetrics import detect_iob_scheme, las, mention_prf, parse_conll_tags, parse_conllu, upos_accuracy
from .filters import (
    FeatureSpace,
    FilterVerdict,
    LinearModel,
    classifier_filter,
    heuristic_filter,
    language_filter,
    lexical_features,
    load_profiles,
    train_language_profiles,
    train_linear_svm,
)
from .parallel import ordered_map
from .pregen import GenStats, PregenDocument, create_instances, serialize_examples, suggest_dup_factors
from .vocab import MergeTable, Vocab, basic_tokenize, bpe_encode, count_tokens, coverage_stats, train_bpe, wordpiece_encode

log = logging.getLogger("finprep")

STAGES = ("stats", "clean", "langfilter", "svmfilter", "dedup", "vocab-train", "encode", "coverage", "pregen", "split", "eval")


class StageError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Output plumbing


class Outputs:
    """Tracks files written by a stage so a failure can remove them."""

    def __init__(self):
        self.written: List[Path] = []

    @contextmanager
    def open(self, path, mode="wb"):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": "\n"})) as fh:
                yield fh
            os.replace(tmp, path)
            self.written.append(path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def rollback(self):
        for p in self.written:
            if p.exists():
                p.unlink()
        self.written.clear()


def _write_docs(out: Outputs, path, docs) -> int:
    with out.open(path) as fh:
        return write_documents(docs, fh)


def _histogram(verdicts) -> Dict[str, int]:
    c = Counter(v.reason.value for v in verdicts if not v.kept)
    return dict(sorted(c.items()))


def _require(path, what):
    if path is None:
        raise ConfigError(f"{what}: path required")
    if not Path(path).exists():
        raise ConfigError(f"{what}: file not found: {path}")
    return path


# --------------------------------------------------------------------------
# Stage implementations. Each returns a JSON-able report.


def stage_stats(cfg: PipelineConfig, args, out: Outputs) -> dict:
    docs = load_documents(_require(args.input, "input"))
    rows = corpus_stats(docs)
    report = {"stage": "stats", "input_docs": len(docs), "rows": {k: v.to_dict() for k, v in rows.items()}}
    if args.output:
        with out.open(args.output, "w") as fh:
            fh.write(format_stats_table(rows))
    report["table"] = format_stats_table(rows)
    return report


def _heuristic_job(thresholds, doc: Document) -> FilterVerdict:
    return heuristic_filter(doc, thresholds)


def stage_clean(cfg, args, out) -> dict:
    docs = load_documents(_require(args.input, "input"))
    verdicts = ordered_map(_heuristic_job, docs, workers=cfg.workers, shared=cfg.thresholds())
    kept = [d for d, v in zip(docs, verdicts) if v.kept]
    _write_docs(out, args.output, kept)
    if getattr(args, "rejected", None):
        _write_docs(out, args.rejected, [d for d, v in zip(docs, verdicts) if not v.kept])
    return {"stage": "clean", "input_docs": len(docs), "output_docs": len(kept),
            "kept": len(kept), "rejected": _histogram(verdicts)}


def _profiles(cfg, args, out):
    if getattr(args, "sample", None):
        samples = {}
        for item in args.sample:
            lang, sep, path = item.partition("=")
            if not sep:
                raise ConfigError(f"--sample: expected LANG=PATH, got {item!r}")
            samples[lang] = Path(_require(path, f"--sample {lang}")).read_text(encoding="utf-8")
        profiles = train_language_profiles(samples)
        if args.save_profiles:
            with out.open(args.save_profiles, "w") as fh:
                fh.write("".join(p.to_json() + "\n" for p in profiles))
        return profiles
    path = getattr(args, "profiles", None) or cfg.lang_profiles
    return load_profiles(_require(path, "lang_profiles"))


def _language_job(shared, doc):
    profiles, target, thresholds = shared
    return language_filter(doc, profiles, target, thresholds)


def stage_langfilter(cfg, args, out) -> dict:
    docs = load_documents(_require(args.input, "input"))
    profiles = _profiles(cfg, args, out)
    if cfg.target_lang not in {p.lang for p in profiles}:
        raise ConfigError(f"target_lang: no profile for {cfg.target_lang!r}")
    verdicts = ordered_map(_language_job, docs, workers=cfg.workers,
                           shared=(profiles, cfg.target_lang, cfg.thresholds()))
    kept = [d for d, v in zip(docs, verdicts) if v.kept]
    _write_docs(out, args.output, kept)
    return {"stage": "langfilter", "input_docs": len(docs), "output_docs": len(kept),
            "kept": len(kept), "rejected": _histogram(verdicts)}


def _load_feature_file(path) -> Dict[str, Dict[int, float]]:
    feats = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                feats[str(rec["id"])] = {int(k): float(v) for k, v in rec["features"]}
            except (KeyError, TypeError, ValueError):
                raise CorpusError(f"{path}:{lineno}: expected {{id, features: [[k, v], ...]}}") from None
    return feats


def _doc_features(docs, space: FeatureSpace, feature_file):
    if space is FeatureSpace.LEXICAL:
        return [lexical_features(d.text) for d in docs]
    table = _load_feature_file(_require(feature_file, "--features"))
    missing = [d.id for d in docs if d.id not in table]
    if missing:
        raise CorpusError(f"no delexicalized features for document(s): {', '.join(missing[:5])}")
    return [table[d.id] for d in docs]


def _label_value(label) -> int:
    if label in ("+1", "1", "pos", "keep", "good"):
        return 1
    if label in ("-1", "neg", "reject", "bad"):
        return -1
    raise CorpusError(f"unrecognized training label {label!r}")


def stage_svmfilter(cfg, args, out) -> dict:
    space = FeatureSpace(args.feature_space)
    report = {"stage": "svmfilter"}
    if args.train:
        train_docs = load_documents(_require(args.train, "--train"))
        feats = _doc_features(train_docs, space, args.train_features or args.features)
        examples = [(_label_value(d.label), f) for d, f in zip(train_docs, feats)]
        model = train_linear_svm(examples, cfg.svm_lambda, cfg.svm_epochs, cfg.seed, space)
        report["trained_on"] = len(examples)
        if args.save_model:
            with out.open(args.save_model, "w") as fh:
                fh.write(model.to_json() + "\n")
    else:
        model = LinearModel.load(_require(args.model or cfg.svm_model, "svm_model"))
    if args.input:
        docs = load_documents(_require(args.input, "input"))
        feats = _doc_features(docs, FeatureSpace(model.feature_space), args.features)
        verdicts = [classifier_filter(model, f, cfg.svm_threshold) for f in feats]
        kept = [d for d, v in zip(docs, verdicts) if v.kept]
        if args.output:
            _write_docs(out, args.output, kept)
        report.update(input_docs=len(docs), output_docs=len(kept), kept=len(kept), rejected=_histogram(verdicts))
    return report


def stage_dedup(cfg, args, out) -> dict:
    docs = load_documents(_require(args.input, "input"))
    if args.index_in:
        index = ShingleIndex.load(_require(args.index_in, "--index-in"))
    else:
        index = build_shingle_index(docs, cfg.dedup_n, workers=cfg.workers)
    kept, reports = dedup_filter(docs, index, cfg.dedup_threshold, keep_first=cfg.dedup_keep_first, n=cfg.dedup_n)
    _write_docs(out, args.output, kept)
    if args.report:
        with out.open(args.report, "w") as fh:
            fh.write("".join(r.to_json() + "\n" for r in reports))
    if args.index_out:
        with out.open(args.index_out) as fh:
            fh.write(index.to_bytes())
    groups = Counter(r.group.value for r in reports)
    return {"stage": "dedup", "input_docs": len(docs), "output_docs": len(kept), "kept": len(kept),
            "rejected": {"duplicate": len(docs) - len(kept)} if len(docs) > len(kept) else {},
            "groups": dict(sorted(groups.items())), "total_shingles": index.total_shingles}


def stage_vocab_train(cfg, args, out) -> dict:
    docs = load_documents(_require(args.input, "input"))
    mode = cfg.casing_mode()
    counts = count_tokens((d.text for d in docs), mode)
    vocab, merges = train_bpe(counts, cfg.vocab_size, mode)
    with out.open(args.vocab, "w") as fh:
        fh.write("".join(p + "\n" for p in vocab.pieces))
    if args.merges:
        with out.open(args.merges, "w") as fh:
            fh.write("".join(f"{a} {b}\n" for a, b in merges.merges))
    return {"stage": "vocab-train", "input_docs": len(docs), "distinct_tokens": len(counts),
            "vocab_size": len(vocab), "merges": len(merges), "casing": mode.value}


def _encode_job(vocab: Vocab, doc: Document) -> dict:
    sentences = []
    for s in split_sentences(doc.text):
        pieces = [p for tok in basic_tokenize(s, vocab.casing) for p in wordpiece_encode(tok, vocab)]
        if pieces:
            sentences.append(pieces)
    return {"id": doc.id, "source": doc.source.value, "sentences": sentences}


def stage_encode(cfg, args, out) -> dict:
    docs = load_documents(_require(args.input, "input"))
    vocab = Vocab.load(_require(args.vocab, "--vocab"), cfg.casing_mode())
    records = ordered_map(_encode_job, docs, workers=cfg.workers, shared=vocab)
    with out.open(args.output, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False, separators=(",", ":")) + "\n")
    return {"stage": "encode", "input_docs": len(docs), "output_docs": len(records),
            "sentences": sum(len(r["sentences"]) for r in records)}


def stage_coverage(cfg, args, out) -> dict:
    docs = load_documents(_require(args.input, "input"))
    vocab = Vocab.load(_require(args.vocab, "--vocab"), cfg.casing_mode())
    encode = None
    if args.merges:
        merges = MergeTable.load(_require(args.merges, "--merges"))
        encode = lambda tok: [p if p in vocab else "[UNK]" for p in bpe_encode(tok, merges)]  # noqa: E731
    rep = coverage_stats((d.text for d in docs), vocab, encode)
    report = {"stage": "coverage", "input_docs": len(docs), **rep.to_dict()}
    if args.output:
        with out.open(args.output, "w") as fh:
            fh.write(json.dumps(rep.to_dict(), sort_keys=True) + "\n")
    return report


def _read_encoded(path) -> List[PregenDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                rec = json.loads(line)
                try:
                    docs.append(PregenDocument(rec["sentences"], rec.get("source", "other")))
                except KeyError:
                    raise CorpusError(f"{path}:{lineno}: missing `sentences`") from None
    return docs


def stage_pregen(cfg, args, out) -> dict:
    docs = _read_encoded(_require(args.input, "input"))
    vocab = Vocab.load(_require(args.vocab, "--vocab"), cfg.casing_mode())
    gen = cfg.gen_config()
    stats = GenStats()
    examples = create_instances(docs, gen, vocab, stats, workers=cfg.workers)
    with out.open(args.output) as fh:
        n = serialize_examples(examples, fh)
    tokens = Counter()
    for d in docs:
        tokens[d.source] += sum(len(s) for s in d.sentences)
    report = {"stage": "pregen", "input_docs": len(docs), "examples": n,
              "is_next_rate": (sum(e.is_next for e in examples) / n) if n else 0.0}
    if args.stats:
        report.update(stats.to_dict())
        report["suggested_dup_factors"] = suggest_dup_factors(tokens)
    return report


def stage_split(cfg, args, out) -> dict:
    spec = cfg.split_spec()
    docs = load_documents(_require(args.input, "input"))
    parts = balanced_chronological_split(docs, spec, cfg.seed)
    outdir = Path(args.output_dir)
    for name, items in parts.items():
        _write_docs(out, outdir / f"{name}.jsonl", items)
    return {"stage": "split", "input_docs": len(docs), **{name: len(items) for name, items in parts.items()}}


def stage_eval(cfg, args, out) -> dict:
    gold_path = _require(args.gold, "--gold")
    pred_path = _require(args.pred, "--pred")
    with open(gold_path, encoding="utf-8") as g, open(pred_path, encoding="utf-8") as p:
        if args.format == "conllu":
            gold, pred = parse_conllu(g), parse_conllu(p)
            metrics = {
                "UPOS": upos_accuracy([s for s, _ in gold], [s for s, _ in pred]),
                "LAS": las([d for _, d in gold], [d for _, d in pred]),
            }
        else:
            gold, pred = parse_conll_tags(g), parse_conll_tags(p)
            prf = mention_prf(gold, pred)
            metrics = {"precision": prf.precision, "recall": prf.recall, "f1": prf.f1}
            scheme = detect_iob_scheme(gold)
            log.info("gold tag encoding looks like %s", scheme.upper())
    if args.output:
        with out.open(args.output, "w") as fh:
            fh.write(json.dumps(metrics, sort_keys=True) + "\n")
    report = {"stage": "eval", **metrics}
    if args.format == "conll":
        report["gold_encoding"] = scheme
    return report


def stage_all(cfg, args, out) -> dict:
    """clean -> [langfilter] -> [svmfilter] -> dedup -> vocab-train -> encode
    -> coverage -> pregen, with fixed file names under --output-dir."""
    d = Path(args.output_dir)
    ns = argparse.Namespace
    reports = []
    current = args.input
    reports.append(stage_clean(cfg, ns(input=current, output=d / "clean.jsonl", rejected=None), out))
    current = d / "clean.jsonl"
    if cfg.lang_profiles:
        reports.append(stage_langfilter(cfg, ns(input=current, output=d / "lang.jsonl", profiles=None,
                                                sample=None, save_profiles=None), out))
        current = d / "lang.jsonl"
    if cfg.svm_model:
        reports.append(stage_svmfilter(cfg, ns(input=current, output=d / "svm.jsonl", model=None, train=None,
                                               feature_space="lexical", features=None, train_features=None,
                                               save_model=None), out))
        current = d / "svm.jsonl"
    reports.append(stage_dedup(cfg, ns(input=current, output=d / "dedup.jsonl", report=d / "dedup_report.jsonl",
                                       index_in=None, index_out=d / "shingles.bin"), out))
    current = d / "dedup.jsonl"
    reports.append(stage_vocab_train(cfg, ns(input=current, vocab=d / "vocab.txt", merges=d / "merges.txt"), out))
    reports.append(stage_encode(cfg, ns(input=current, vocab=d / "vocab.txt", output=d / "encoded.jsonl"), out))
    reports.append(stage_coverage(cfg, ns(input=current, vocab=d / "vocab.txt", merges=None,
                                          output=d / "coverage.json"), out))
    reports.append(stage_pregen(cfg, ns(input=d / "encoded.jsonl", vocab=d / "vocab.txt",
                                        output=d / "examples.jsonl", stats=True), out))
    return {"stage": "all", "stages": reports}


HANDLERS = {
    "stats": stage_stats,
    "clean": stage_clean,
    "langfilter": stage_langfilter,
    "svmfilter": stage_svmfilter,
    "dedup": stage_dedup,
    "vocab-train": stage_vocab_train,
    "encode": stage_encode,
    "coverage": stage_coverage,
    "pregen": stage_pregen,
    "split": stage_split,
    "eval": stage_eval,
    "all": stage_all,
}


# --------------------------------------------------------------------------
# Argument parsing


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; their defaults are suppressed so a
    # flag given before the subcommand is not reset by the subparser
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file", **kw)
    common.add_argument("--seed", type=int, help="override config seed", **kw)
    common.add_argument("--workers", type=int, help="worker processes (output is identical for any value)", **kw)
    common.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                        help="override a configuration key; repeatable", **kw)
    common.add_argument("--json", action="store_true", help="print the stage report as JSON", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="finprep", description=__doc__.splitlines()[0],
                                     parents=[_common_flags(suppress=False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="stage", metavar="STAGE")
    sub.required = True

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("stats", "corpus statistics per source")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="write the plain-text table here")

    p = add("clean", "character-class and sentence-length heuristics")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--rejected", help="also write rejected documents")

    p = add("langfilter", "trigram language detection filter")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--profiles", help="language profile file (JSON lines)")
    p.add_argument("--sample", action="append", metavar="LANG=PATH", help="train a profile from a text sample")
    p.add_argument("--save-profiles")

    p = add("svmfilter", "linear classifier filter (train and/or apply)")
    p.add_argument("input", nargs="?")
    p.add_argument("-o", "--output")
    p.add_argument("--model", help="model JSON to apply")
    p.add_argument("--train", help="labeled documents (label +1/-1) to train on")
    p.add_argument("--save-model")
    p.add_argument("--feature-space", choices=[f.value for f in FeatureSpace], default="lexical")
    p.add_argument("--features", help="precomputed sparse features (JSON lines: id, features)")
    p.add_argument("--train-features")

    p = add("dedup", "shingle-based duplicate removal")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--report", help="per-document duplication report (JSON lines)")
    p.add_argument("--index-in")
    p.add_argument("--index-out")

    p = add("vocab-train", "train a BPE vocabulary")
    p.add_argument("input")
    p.add_argument("--vocab", required=True)
    p.add_argument("--merges")

    p = add("encode", "sentence-split and word-piece encode documents")
    p.add_argument("input")
    p.add_argument("--vocab", required=True)
    p.add_argument("-o", "--output", required=True)

    p = add("coverage", "pieces and [UNK] per basic token")
    p.add_argument("input")
    p.add_argument("--vocab", required=True)
    p.add_argument("--merges", help="use BPE merges instead of greedy WordPiece")
    p.add_argument("-o", "--output")

    p = add("pregen", "generate masked-LM / next-sentence examples")
    p.add_argument("input", help="output of the encode stage")
    p.add_argument("--vocab", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--stats", action="store_true", help="report per-source example counts")

    p = add("split", "balanced chronological train/dev/test split")
    p.add_argument("input")
    p.add_argument("--output-dir", required=True)

    p = add("eval", "UPOS/LAS (CoNLL-U) or mention P/R/F1 (token tag)")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--format", choices=["conllu", "conll"], default="conllu")
    p.add_argument("-o", "--output")

    p = add("all", "run the full preparation pipeline")
    p.add_argument("input")
    p.add_argument("--output-dir", required=True)

    p = add("show-config", "print the effective configuration")
    return parser


def _emit(report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, ensure_ascii=False, sort_keys=True))
        return
    table = report.pop("table", None)
    if table:
        print(table, end="")
    for key, value in report.items():
        print(f"{key}: {json.dumps(value, ensure_ascii=False) if isinstance(value, (dict, list)) else value}")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        overrides = list(args.overrides or [])
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.workers is not None:
            overrides.append(f"workers={args.workers}")
        if args.config and not Path(args.config).exists():
            raise ConfigError(f"--config: file not found: {args.config}")
        cfg = load_config(args.config, overrides).validate(need_split=args.stage == "split")
    except ConfigError as exc:
        print(f"finprep: config error: {exc}", file=sys.stderr)
        return 2

    if args.stage == "show-config":
        print(dump_config(cfg), end="")
        return 0

    out = Outputs()
    try:
        report = HANDLERS[args.stage](cfg, args, out)
    except ConfigError as exc:
        out.rollback()
        print(f"finprep: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError, json.JSONDecodeError) as exc:
        out.rollback()
        log.debug("stage failed", exc_info=True)
        print(f"finprep {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    _emit(report, args.json)
    return 0


if __name__ == "__main__":
    sys.exit(main())

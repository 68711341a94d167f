import json
import subprocess
import sys

import pytest

from finprep.cli import main
from finprep.corpus import Document, load_documents, save_documents
from synth import FI_SAMPLE, SV_SAMPLE, english_like_text, finnish_like_text

PLANTED = {
    "digits": "Vuonna 2019 luvut olivat 1234 5678 9012 3456 7890 1111 2222 3333 ja 4444.",
    "shouting": "TÄMÄ ON HUUTAVA OTSIKKO JOKA EI KELPAA MIHINKÄÄN KÄYTTÖÖN TÄSSÄ AINEISTOSSA.",
    "cyrillic": "Это предложение написано на другом языке и не подходит для этого корпуса.",
}


@pytest.fixture
def corpus(tmp_path):
    docs = [Document(f"ok{i}", "news" if i % 2 else "crawl", finnish_like_text(i, 6)) for i in range(7)]
    docs += [Document(k, "crawl", v) for k, v in PLANTED.items()]
    path = tmp_path / "docs.jsonl"
    save_documents(docs, path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code == 0, err
    return json.loads(out)


def test_clean_report(corpus, tmp_path, capsys):
    report = run_json(capsys, "clean", corpus, "-o", tmp_path / "clean.jsonl", "--rejected", tmp_path / "rej.jsonl")
    assert report["kept"] == 7 == report["output_docs"]
    assert report["input_docs"] == 10
    assert sum(report["rejected"].values()) == 3
    assert report["rejected"] == {"digit_ratio": 1, "nontarget_alpha": 1, "upper_ratio": 1}
    assert sorted(d.id for d in load_documents(tmp_path / "rej.jsonl")) == sorted(PLANTED)


def test_unknown_stage_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


@pytest.mark.parametrize(
    "flags, message",
    [
        (["--set", "max_digit_ratio=2"], "max_digit_ratio"),
        (["--set", "no_such_key=1"], "no_such_key"),
        (["--set", "dedup_n=ten"], "dedup_n"),
        (["--config", "/nonexistent/finprep.conf"], "config"),
        (["--set", "lang_profiles=/nonexistent/p.jsonl"], "lang_profiles"),
    ],
)
def test_config_errors_exit_2(corpus, tmp_path, capsys, flags, message):
    code, _, err = run(capsys, "clean", corpus, "-o", tmp_path / "x.jsonl", *flags)
    assert code == 2
    assert message in err
    assert not (tmp_path / "x.jsonl").exists()


def test_config_file_and_flag_precedence(tmp_path, capsys):
    conf = tmp_path / "f.conf"
    conf.write_text("# pipeline settings\nseed = 5\nvocab_size = 1000  # small\n", encoding="utf-8")
    code, out, _ = run(capsys, "--seed", "9", "show-config", "--config", conf)
    assert code == 0
    settings = dict(line.split(" = ", 1) for line in out.splitlines())
    assert settings["seed"] == "9" and settings["vocab_size"] == "1000"
    code, out, _ = run(capsys, "show-config", "--config", conf)
    assert "seed = 5" in out


def test_missing_input_is_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "clean", tmp_path / "missing.jsonl", "-o", tmp_path / "x.jsonl")
    assert code == 2 and "not found" in err


def test_processing_error_removes_partial_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id":"a","text":"Hyvä teksti on tässä ja se jatkuu pitkään."}\n{broken\n', encoding="utf-8")
    code, _, err = run(capsys, "clean", bad, "-o", tmp_path / "out.jsonl")
    assert code == 1 and "line 2" in err
    assert list(tmp_path.iterdir()) == [bad]


def test_vocab_train_then_coverage(corpus, tmp_path, capsys):
    run_json(capsys, "vocab-train", corpus, "--vocab", tmp_path / "v.txt", "--merges", tmp_path / "m.txt",
             "--set", "vocab_size=300")
    assert len((tmp_path / "v.txt").read_text(encoding="utf-8").splitlines()) <= 300
    report = run_json(capsys, "coverage", corpus, "--vocab", tmp_path / "v.txt")
    assert report["pieces_per_token"] >= 1.0
    assert report["unk_per_token"] == 0.0
    bpe = run_json(capsys, "coverage", corpus, "--vocab", tmp_path / "v.txt", "--merges", tmp_path / "m.txt")
    assert bpe["pieces_per_token"] >= 1.0


def test_stats_stage(corpus, capsys):
    code, out, _ = run(capsys, "stats", corpus)
    assert code == 0
    assert out.splitlines()[0].split() == ["Docs", "Sents", "Tokens", "Chars"]
    report = run_json(capsys, "stats", corpus)
    assert report["rows"]["total"]["docs"] == 10


def test_langfilter_with_samples(tmp_path, capsys):
    (tmp_path / "fi.txt").write_text(FI_SAMPLE, encoding="utf-8")
    (tmp_path / "sv.txt").write_text(SV_SAMPLE, encoding="utf-8")
    docs = [Document("fi", "news", finnish_like_text(1, 5)), Document("sv", "news", SV_SAMPLE)]
    save_documents(docs, tmp_path / "in.jsonl")
    report = run_json(capsys, "langfilter", tmp_path / "in.jsonl", "-o", tmp_path / "out.jsonl",
                      "--sample", f"fi={tmp_path / 'fi.txt'}", "--sample", f"sv={tmp_path / 'sv.txt'}",
                      "--save-profiles", tmp_path / "p.jsonl", "--set", "min_lang_score=0.3")
    assert report["rejected"] == {"language": 1}
    assert [d.id for d in load_documents(tmp_path / "out.jsonl")] == ["fi"]
    again = run_json(capsys, "langfilter", tmp_path / "in.jsonl", "-o", tmp_path / "out2.jsonl",
                     "--profiles", tmp_path / "p.jsonl", "--set", "min_lang_score=0.3")
    assert again["kept"] == 1


def test_svmfilter_train_and_apply(tmp_path, capsys):
    train = [Document(f"p{i}", "crawl", finnish_like_text(i, 3), label="+1") for i in range(30)]
    train += [Document(f"n{i}", "crawl", english_like_text(i, 3), label="-1") for i in range(30)]
    save_documents(train, tmp_path / "train.jsonl")
    test = [Document("good", "crawl", finnish_like_text(99, 3)), Document("bad", "crawl", english_like_text(99, 3))]
    save_documents(test, tmp_path / "test.jsonl")
    report = run_json(capsys, "svmfilter", tmp_path / "test.jsonl", "-o", tmp_path / "out.jsonl",
                      "--train", tmp_path / "train.jsonl", "--save-model", tmp_path / "m.json",
                      "--set", "svm_lambda=0.001")
    assert report["trained_on"] == 60
    assert [d.id for d in load_documents(tmp_path / "out.jsonl")] == ["good"]
    again = run_json(capsys, "svmfilter", tmp_path / "test.jsonl", "-o", tmp_path / "out2.jsonl",
                     "--model", tmp_path / "m.json")
    assert again["rejected"] == {"classifier": 1}


def test_dedup_stage(tmp_path, capsys):
    text = finnish_like_text(3, 4)
    docs = [Document("a", "news", text), Document("b", "news", finnish_like_text(4, 4)), Document("c", "crawl", text)]
    save_documents(docs, tmp_path / "in.jsonl")
    report = run_json(capsys, "dedup", tmp_path / "in.jsonl", "-o", tmp_path / "out.jsonl",
                      "--report", tmp_path / "r.jsonl", "--index-out", tmp_path / "s.bin")
    assert report["kept"] == 1 and report["rejected"] == {"duplicate": 2}
    again = run_json(capsys, "dedup", tmp_path / "in.jsonl", "-o", tmp_path / "out2.jsonl",
                     "--index-in", tmp_path / "s.bin")
    assert again["kept"] == 1
    first = run_json(capsys, "dedup", tmp_path / "in.jsonl", "-o", tmp_path / "out3.jsonl",
                     "--set", "dedup_keep_first=true")
    assert first["kept"] == 2


def test_split_stage(tmp_path, capsys):
    docs = [Document(f"{c}{i}", "news", "x", timestamp=f"2019-01-{i + 1:02d}", label=c) for c in "AB" for i in range(6)]
    save_documents(docs, tmp_path / "in.jsonl")
    report = run_json(capsys, "split", tmp_path / "in.jsonl", "--output-dir", tmp_path / "parts",
                      "--set", "split_train=2", "--set", "split_dev=1", "--set", "split_test=1",
                      "--set", "split_classes=A,B")
    assert (report["train"], report["dev"], report["test"]) == (4, 2, 2)
    assert [d.id for d in load_documents(tmp_path / "parts" / "test.jsonl")] == ["A3", "B3"]
    code, _, err = run(capsys, "split", tmp_path / "in.jsonl", "--output-dir", tmp_path / "p2",
                       "--set", "split_classes=A,B", "--set", "split_train=10")
    assert code == 1 and "insufficient class" in err


def test_eval_stage(tmp_path, capsys):
    gold = "1\tA\t_\tNOUN\t_\t_\t0\troot\t_\t_\n2\tB\t_\tVERB\t_\t_\t1\tobj\t_\t_\n\n"
    pred = "1\tA\t_\tNOUN\t_\t_\t0\troot\t_\t_\n2\tB\t_\tNOUN\t_\t_\t1\tnsubj\t_\t_\n\n"
    (tmp_path / "g.conllu").write_text(gold, encoding="utf-8")
    (tmp_path / "p.conllu").write_text(pred, encoding="utf-8")
    report = run_json(capsys, "eval", tmp_path / "g.conllu", tmp_path / "p.conllu")
    assert report["UPOS"] == 0.5 and report["LAS"] == 0.5
    (tmp_path / "g.txt").write_text("Matti B-PER\nasuu O\n\n", encoding="utf-8")
    (tmp_path / "p.txt").write_text("Matti B-PER\nasuu B-LOC\n\n", encoding="utf-8")
    report = run_json(capsys, "eval", tmp_path / "g.txt", tmp_path / "p.txt", "--format", "conll")
    assert report["recall"] == 1.0 and report["precision"] == 0.5
    assert report["gold_encoding"] == "iob2"


CHAIN_FILES = ["clean.jsonl", "dedup.jsonl", "dedup_report.jsonl", "shingles.bin", "vocab.txt", "merges.txt",
               "encoded.jsonl", "coverage.json", "examples.jsonl"]


def _chain(capsys, corpus, d, *extra):
    d.mkdir()
    run_json(capsys, "clean", corpus, "-o", d / "clean.jsonl", *extra)
    run_json(capsys, "dedup", d / "clean.jsonl", "-o", d / "dedup.jsonl", "--report", d / "dedup_report.jsonl",
             "--index-out", d / "shingles.bin", *extra)
    run_json(capsys, "vocab-train", d / "dedup.jsonl", "--vocab", d / "vocab.txt", "--merges", d / "merges.txt", *extra)
    run_json(capsys, "encode", d / "dedup.jsonl", "--vocab", d / "vocab.txt", "-o", d / "encoded.jsonl", *extra)
    run_json(capsys, "coverage", d / "dedup.jsonl", "--vocab", d / "vocab.txt", "-o", d / "coverage.json", *extra)
    run_json(capsys, "pregen", d / "encoded.jsonl", "--vocab", d / "vocab.txt", "-o", d / "examples.jsonl",
             "--stats", *extra)


def test_all_equals_chained_stages(corpus, tmp_path, capsys):
    extra = ["--set", "vocab_size=400", "--seed", "4"]
    _chain(capsys, corpus, tmp_path / "chain", *extra)
    report = run_json(capsys, "all", corpus, "--output-dir", tmp_path / "all", *extra)
    assert [r["stage"] for r in report["stages"]] == ["clean", "dedup", "vocab-train", "encode", "coverage", "pregen"]
    for name in CHAIN_FILES:
        assert (tmp_path / "chain" / name).read_bytes() == (tmp_path / "all" / name).read_bytes(), name
    assert report["stages"][-1]["examples"] > 0


def test_all_is_repeatable(corpus, tmp_path, capsys):
    extra = ["--set", "vocab_size=400"]
    run_json(capsys, "all", corpus, "--output-dir", tmp_path / "a", *extra)
    run_json(capsys, "all", corpus, "--output-dir", tmp_path / "b", *extra, "--workers", "2")
    for name in CHAIN_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "finprep", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("finprep ")

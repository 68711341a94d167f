import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finprep.corpus import Document
from finprep.filters import (
    FeatureSpace,
    FilterVerdict,
    LanguageProfile,
    LinearModel,
    Reason,
    Thresholds,
    char_class_ratios,
    classifier_filter,
    detect_language,
    heuristic_filter,
    hinge_objective,
    language_filter,
    lexical_features,
    load_profiles,
    save_profiles,
    score_linear,
    train_language_profiles,
    train_linear_svm,
    trigram_counts,
)
from finprep.filters import _cosine
from synth import FI_SAMPLE, SV_SAMPLE, english_like_text, finnish_like_text

nonblank = st.text(min_size=1, max_size=40).filter(lambda s: s.strip())


class TestCharClassRatios:
    def test_digits(self):
        assert char_class_ratios("abc123")["digit"] == 0.5

    def test_upper(self):
        assert char_class_ratios("ABC")["upper"] == 1.0

    def test_nontarget(self):
        assert char_class_ratios("абв abc")["nontarget_alpha"] == 0.5

    def test_finnish_letters_are_target(self):
        assert char_class_ratios("äöå ÄÖÅ")["nontarget_alpha"] == 0.0

    def test_whitespace_only(self):
        with pytest.raises(ValueError, match="empty"):
            char_class_ratios(" \n\t")

    @given(nonblank)
    def test_bounds_reversal_duplication(self, text):
        r = char_class_ratios(text)
        assert all(0.0 <= v <= 1.0 for v in r.values())
        rev = char_class_ratios(text[::-1])
        dup = char_class_ratios(text + text)
        for k in r:
            assert math.isclose(r[k], rev[k])
            assert math.isclose(r[k], dup[k])


class TestHeuristicFilter:
    def test_digit_ratio(self):
        doc = Document("d", "crawl", "ab12")
        v = heuristic_filter(doc, Thresholds(max_digit_ratio=0.3), [2])
        assert v == FilterVerdict(False, Reason.DIGIT_RATIO, 0.5)

    def test_clean_prose_generous(self):
        doc = Document("d", "news", FI_SAMPLE)
        v = heuristic_filter(doc, Thresholds(1.0, 1.0, 1.0, 0.0, 0.0))
        assert v.kept and v.reason is Reason.OK

    def test_clean_prose_defaults(self):
        assert heuristic_filter(Document("d", "news", FI_SAMPLE), Thresholds()).kept

    def test_short_sentences(self):
        v = heuristic_filter(Document("d", "news", "Hei. Moi."), Thresholds(min_avg_sentence_len=5), [2, 2])
        assert v.reason is Reason.SHORT_SENTENCES and v.score == 2.0

    def test_empty_document(self):
        v = heuristic_filter(Document("d", "news", "   "), Thresholds())
        assert not v.kept and v.reason is Reason.SHORT_SENTENCES

    def test_rule_order(self):
        # violates everything; digits are checked first, then uppercase
        doc = Document("d", "news", "12 AB")
        t = Thresholds(0.1, 0.1, 0.0, 100)
        assert heuristic_filter(doc, t).reason is Reason.DIGIT_RATIO
        assert heuristic_filter(doc, Thresholds(1.0, 0.1, 0.0, 100)).reason is Reason.UPPER_RATIO
        assert heuristic_filter(Document("d", "news", "abc фыв"), Thresholds(1, 1, 0.0, 100)).reason is Reason.NONTARGET_ALPHA

    def test_verdict_invariant(self):
        for v in (FilterVerdict.ok(), FilterVerdict.reject(Reason.LANGUAGE)):
            assert v.kept == (v.reason is Reason.OK)

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            Thresholds(max_digit_ratio=1.5)
        with pytest.raises(ValueError):
            Thresholds(min_avg_sentence_len=-1)

    @settings(max_examples=100)
    @given(
        st.text(alphabet="abcÄ12 .ф\n", min_size=1, max_size=60),
        st.tuples(*[st.floats(0, 1)] * 3, st.floats(0, 20)),
        st.tuples(*[st.floats(0, 1)] * 3, st.floats(0, 20)),
    )
    def test_monotone_in_thresholds(self, text, a, b):
        tight = Thresholds(*a)
        loose = Thresholds(max(a[0], b[0]), max(a[1], b[1]), max(a[2], b[2]), min(a[3], b[3]))
        doc = Document("d", "news", text)
        if heuristic_filter(doc, tight).kept:
            assert heuristic_filter(doc, loose).kept


def brute_force_cosine(text, sample):
    """Independent oracle: explicit trigram windows, dense numpy vectors."""

    def grams(s):
        s = " ".join(s.lower().split())
        return [s[i:i + 3] for i in range(len(s) - 2)]

    a, b = grams(text), grams(sample)
    keys = sorted(set(a) | set(b))
    pos = {k: i for i, k in enumerate(keys)}
    va = np.zeros(len(keys))
    vb = np.zeros(len(keys))
    for g in a:
        va[pos[g]] += 1
    for g in b:
        vb[pos[g]] += 1
    return float(va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb)))


@pytest.fixture(scope="module")
def profiles():
    return train_language_profiles({"fi": FI_SAMPLE, "sv": SV_SAMPLE})


class TestLanguageDetection:
    def test_profiles_normalized(self, profiles):
        assert [p.lang for p in profiles] == ["fi", "sv"]
        for p in profiles:
            assert abs(sum(p.ngram_freqs.values()) - 1.0) < 1e-9
            assert all(v > 0 for v in p.ngram_freqs.values())

    def test_sample_too_small(self):
        with pytest.raises(ValueError, match="fi"):
            train_language_profiles({"fi": "ab"})

    def test_degenerate_sample(self):
        (p,) = train_language_profiles({"x": "a" * 120})
        assert dict(p.ngram_freqs) == {"aaa": 1.0}

    def test_self_similarity(self, profiles):
        lang, score = detect_language(FI_SAMPLE, profiles)
        assert lang == "fi" and score == pytest.approx(1.0, abs=1e-12)

    def test_finnish_sentence_against_oracle(self, profiles):
        text = "tämä on suomenkielinen lause tästä tekstistä"
        lang, score = detect_language(text, profiles)
        fi = brute_force_cosine(text, FI_SAMPLE)
        sv = brute_force_cosine(text, SV_SAMPLE)
        assert fi > sv
        assert lang == "fi"
        assert score == pytest.approx(fi, abs=1e-12)

    def test_swedish_sentence(self, profiles):
        text = "det här är en mening på svenska om familjen"
        lang, score = detect_language(text, profiles)
        assert lang == "sv"
        assert score == pytest.approx(brute_force_cosine(text, SV_SAMPLE), abs=1e-12)

    def test_too_short(self, profiles):
        with pytest.raises(ValueError, match="too short"):
            detect_language("xy", profiles)

    def test_tie_break_by_name(self):
        profiles = [LanguageProfile("zz", {"abc": 1.0}), LanguageProfile("aa", {"abc": 1.0})]
        assert detect_language("abc", profiles)[0] == "aa"

    def test_duplication_invariance_on_counts(self, profiles):
        text = "tämä on suomenkielinen lause tästä tekstistä"
        c = trigram_counts(text)
        doubled = {k: 2 * v for k, v in c.items()}
        for p in profiles:
            assert _cosine(doubled, p.ngram_freqs) == pytest.approx(_cosine(c, p.ngram_freqs))

    def test_language_filter(self, profiles):
        t = Thresholds(min_lang_score=0.1)
        assert language_filter(Document("a", "news", FI_SAMPLE), profiles, "fi", t).kept
        v = language_filter(Document("b", "news", SV_SAMPLE), profiles, "fi", t)
        assert v.reason is Reason.LANGUAGE

    def test_profile_file_round_trip(self, profiles, tmp_path):
        save_profiles(profiles, tmp_path / "p.jsonl")
        assert load_profiles(tmp_path / "p.jsonl") == profiles


class TestLinearModel:
    def test_score_examples(self):
        assert score_linear(LinearModel({1: 2.0}, -1.0), {1: 1.0}) == 1.0
        assert score_linear(LinearModel({1: 2.0}, -1.0), {}) == -1.0
        assert score_linear(LinearModel({1: 0.5, 2: -2.0}, 0.0), {1: 2.0, 2: 1.0}) == -1.0

    def test_separable_toy(self):
        data = [(1, {1: 1.0}), (-1, {2: 1.0})]
        model = train_linear_svm(data, lam=0.01, epochs=100, seed=0)
        assert all(y * score_linear(model, x) > 0 for y, x in data)

    def test_zero_epochs(self):
        model = train_linear_svm([(1, {1: 1.0}), (-1, {2: 1.0})], lam=0.01, epochs=0)
        assert model.weights == {} and model.bias == 0.0
        assert score_linear(model, {1: 1.0}) == 0.0

    def test_deterministic(self):
        data = [(1 if i % 3 else -1, {i % 7: 1.0, 10 + i % 5: 0.5}) for i in range(40)]
        a = train_linear_svm(data, 0.05, 5, seed=11)
        b = train_linear_svm(data, 0.05, 5, seed=11)
        assert a.weights == b.weights and a.bias == b.bias

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            train_linear_svm([(1, {1: 1.0})], 0.1, 1)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError):
            train_linear_svm([(1, {1: 1.0}), (-1, {2: 1.0})], 0.0, 1)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(st.sampled_from([-1, 1]), st.dictionaries(st.integers(0, 20), st.floats(-3, 3), max_size=5)),
            min_size=2,
            max_size=30,
        ).filter(lambda ex: {y for y, _ in ex} == {-1, 1}),
        st.floats(1e-3, 1.0),
        st.integers(0, 8),
        st.integers(0, 5),
    )
    def test_objective_not_worse_than_zero_model(self, data, lam, epochs, seed):
        model = train_linear_svm(data, lam, epochs, seed)
        assert hinge_objective(model, data, lam) <= hinge_objective(LinearModel(), data, lam) + 1e-12
        assert all(math.isfinite(v) for v in model.weights.values())

    def test_lexical_classifier_separates_languages(self):
        pos = [finnish_like_text(s, 4) for s in range(40)]
        neg = [english_like_text(s, 4) for s in range(40)]
        data = [(1, lexical_features(t)) for t in pos] + [(-1, lexical_features(t)) for t in neg]
        model = train_linear_svm(data, lam=1e-3, epochs=10, seed=1)
        held_pos = [finnish_like_text(100 + s, 4) for s in range(20)]
        held_neg = [english_like_text(100 + s, 4) for s in range(20)]
        correct = sum(classifier_filter(model, lexical_features(t)).kept for t in held_pos)
        correct += sum(not classifier_filter(model, lexical_features(t)).kept for t in held_neg)
        assert correct / 40 >= 0.9

    def test_model_file_round_trip(self, tmp_path):
        model = LinearModel({3: 0.25, 1: -1.5}, 0.5, FeatureSpace.DELEXICALIZED)
        model.save(tmp_path / "m.json")
        again = LinearModel.load(tmp_path / "m.json")
        assert again == model

    def test_lexical_features_are_hashed_and_normalized(self):
        f = lexical_features("Talo talo TALO kala")
        assert len(f) == 2
        assert all(0 <= k < 1 << 20 for k in f)
        assert sum(v * v for v in f.values()) == pytest.approx(1.0)

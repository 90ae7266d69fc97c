import math

import pytest

from silentspeech.lexicon_lm import (
    SENTENCE_END,
    SENTENCE_START,
    BigramLm,
    LmFormatError,
    logprob,
    parse_arpa,
    parse_lexicon,
    uniform_bigram_lm,
    write_arpa,
    write_lexicon,
)


def test_parse_lexicon_basic(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("CAT k ae t\n")
    lex = parse_lexicon(path)
    assert lex.pronunciations("CAT") == [("k", "ae", "t")]
    assert "CAT" in lex and "DOG" not in lex


def test_parse_lexicon_multiple_pronunciations(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("CAT k ae t\nCAT k a t\n")
    lex = parse_lexicon(path)
    assert lex.pronunciations("CAT") == [("k", "ae", "t"), ("k", "a", "t")]


def test_parse_lexicon_case_normalization(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("cat K AE T\n")
    lex = parse_lexicon(path)
    assert lex.pronunciations("CAT") == [("k", "ae", "t")]


def test_parse_lexicon_empty_pronunciation(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("CAT\n")
    with pytest.raises(LmFormatError, match="empty pronunciation"):
        parse_lexicon(path)


def test_parse_lexicon_bad_characters(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("CA£T k\n")
    with pytest.raises(LmFormatError, match="unknown characters"):
        parse_lexicon(path)


def test_lexicon_round_trip(tmp_path):
    src = tmp_path / "a.txt"
    src.write_text("CAT k ae t\nDOG d o g\nCAT k a t\n")
    lex = parse_lexicon(src)
    out = tmp_path / "b.txt"
    write_lexicon(out, lex)
    again = parse_lexicon(out)
    assert again.entries == lex.entries
    assert again.phone_set == lex.phone_set


MINI_ARPA = """\
\\data\\
ngram 1=3
ngram 2=2

\\1-grams:
-0.5\t<s>\t-0.3
-0.4\tA\t-0.2
-0.6\t</s>

\\2-grams:
-0.1\t<s> A
-0.2\tA </s>

\\end\\
"""


def test_parse_arpa_counts(tmp_path):
    path = tmp_path / "lm.arpa"
    path.write_text(MINI_ARPA)
    lm = parse_arpa(path)
    assert len(lm.unigram) == 3
    assert len(lm.bigram) == 2
    assert lm.bigram[("<s>", "A")] == -0.1


def test_parse_arpa_count_mismatch(tmp_path):
    path = tmp_path / "lm.arpa"
    path.write_text(MINI_ARPA.replace("ngram 1=3", "ngram 1=4"))
    with pytest.raises(LmFormatError, match="declared 4 unigrams"):
        parse_arpa(path)


def test_parse_arpa_rejects_trigrams(tmp_path):
    path = tmp_path / "lm.arpa"
    path.write_text(MINI_ARPA.replace("\\2-grams:", "\\3-grams:")
                    .replace("ngram 2=2", "ngram 3=2"))
    with pytest.raises(LmFormatError, match="only bigram"):
        parse_arpa(path)


def test_parse_arpa_missing_end(tmp_path):
    path = tmp_path / "lm.arpa"
    path.write_text(MINI_ARPA.replace("\\end\\\n", ""))
    with pytest.raises(LmFormatError, match="end"):
        parse_arpa(path)


def test_arpa_round_trip(tmp_path):
    import random

    rnd = random.Random(0)
    words = ["W%d" % i for i in range(6)]
    unigram = {w: (round(rnd.uniform(-2, -0.1), 6),
                   round(rnd.uniform(-1, 0), 6)) for w in words}
    unigram[SENTENCE_START] = (-99.0, round(rnd.uniform(-1, 0), 6))
    unigram[SENTENCE_END] = (round(rnd.uniform(-2, -0.1), 6), 0.0)
    bigram = {(w1, w2): round(rnd.uniform(-2, -0.1), 6)
              for w1 in words[:3] for w2 in words[3:]}
    lm = BigramLm(unigram, bigram)

    p1 = tmp_path / "a.arpa"
    write_arpa(p1, lm)
    lm2 = parse_arpa(p1)
    assert lm2.unigram == lm.unigram
    assert lm2.bigram == lm.bigram

    p2 = tmp_path / "b.arpa"
    write_arpa(p2, lm2)
    assert p1.read_text() == p2.read_text()


def test_logprob_listed_and_backoff():
    lm = BigramLm(
        {"A": (-0.4, -0.2), "B": (-0.7, 0.0),
         SENTENCE_START: (-99.0, -0.1), SENTENCE_END: (-0.9, 0.0)},
        {("A", "B"): -0.3},
    )
    assert logprob(lm, "A", "B") == -0.3
    assert logprob(lm, "B", "A") == pytest.approx(0.0 + -0.4)
    assert logprob(lm, SENTENCE_START, "A") == pytest.approx(-0.1 + -0.4)
    with pytest.raises(KeyError):
        logprob(lm, "A", "MISSING")


def test_bigram_lm_rejects_unknown_bigram_words():
    with pytest.raises(LmFormatError, match="missing from unigrams"):
        BigramLm({"A": (-0.5, 0.0)}, {("A", "B"): -0.1})


def test_backoff_normalization_consistent_lm():
    # explicit bigram (A,A)=0.5 plus backoff over the remaining mass:
    # alpha(A) * (P(B) + P(</s>)) = 0.5 with P = 1/3 each -> alpha = 0.75
    third = math.log10(1.0 / 3.0)
    lm = BigramLm(
        {
            "A": (third, math.log10(0.75)),
            "B": (third, 0.0),
            SENTENCE_END: (third, 0.0),
            SENTENCE_START: (-99.0, 0.0),
        },
        {("A", "A"): math.log10(0.5)},
    )
    targets = ["A", "B", SENTENCE_END]
    for history in ("A", "B"):
        total = sum(10.0 ** logprob(lm, history, w) for w in targets)
        assert total == pytest.approx(1.0, abs=1e-6)


def test_uniform_lm_normalized():
    lm = uniform_bigram_lm(["X", "Y", "Z"])
    targets = ["X", "Y", "Z", SENTENCE_END]
    for history in ["X", "Y", "Z", SENTENCE_START]:
        total = sum(10.0 ** logprob(lm, history, w) for w in targets)
        assert total == pytest.approx(1.0, abs=1e-12)
    assert lm.words() == ["X", "Y", "Z"]


def test_logprob_never_positive():
    lm = uniform_bigram_lm(["P", "Q"])
    for w1 in ["P", "Q", SENTENCE_START]:
        for w2 in ["P", "Q", SENTENCE_END]:
            assert logprob(lm, w1, w2) <= 0.0

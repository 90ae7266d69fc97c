"""Pronunciation lexicon and ARPA back-off bigram language model.

Both structures are parsed from plain text, kept immutable after loading and
queried in the log10 domain. Only bigram models are accepted; higher orders
are rejected rather than silently truncated.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

SENTENCE_START = "<s>"
SENTENCE_END = "</s>"

_WORD_RE = re.compile(r"[A-Z0-9<>/'._-]+$")
_PHONE_RE = re.compile(r"[a-z0-9_@]+$")


class LmFormatError(ValueError):
    """Raised for malformed lexicon or ARPA input."""


@dataclass
class Lexicon:
    """Word to phone-sequence mapping; a word may have several pronunciations."""

    entries: dict[str, list[tuple[str, ...]]]
    silence_phone: str = "sil"
    phone_set: frozenset = field(init=False)

    def __post_init__(self):
        phones = {self.silence_phone}
        for word, prons in self.entries.items():
            if not prons:
                raise LmFormatError(f"word {word} has no pronunciation")
            for pron in prons:
                if not pron:
                    raise LmFormatError(f"word {word} has an empty pronunciation")
                phones.update(pron)
        self.phone_set = frozenset(phones)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def words(self) -> list[str]:
        return sorted(self.entries)

    def pronunciations(self, word: str) -> list[tuple[str, ...]]:
        return self.entries[word]


def parse_lexicon(path, silence_phone: str = "sil") -> Lexicon:
    """Parse a lexicon file with lines "WORD ph1 ph2 ...".

    A word repeated on several lines collects multiple pronunciations, kept
    in file order. Words are uppercased; phones are lowercased.
    """
    entries: dict[str, list[tuple[str, ...]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise LmFormatError(f"{path}:{lineno}: empty pronunciation: {line!r}")
            word = parts[0].upper()
            phones = tuple(p.lower() for p in parts[1:])
            if not _WORD_RE.match(word):
                raise LmFormatError(f"{path}:{lineno}: unknown characters in word {word!r}")
            for ph in phones:
                if not _PHONE_RE.match(ph):
                    raise LmFormatError(f"{path}:{lineno}: unknown characters in phone {ph!r}")
            entries.setdefault(word, []).append(phones)
    return Lexicon(entries, silence_phone=silence_phone)


def write_lexicon(path, lexicon: Lexicon) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in lexicon.words():
            for pron in lexicon.pronunciations(word):
                fh.write(f"{word} {' '.join(pron)}\n")


@dataclass
class BigramLm:
    """Back-off bigram model with log10 probabilities, as read from ARPA text.

    ``unigram`` maps word -> (log10 prob, log10 backoff weight); ``bigram``
    maps (w1, w2) -> log10 prob.
    """

    unigram: dict[str, tuple[float, float]]
    bigram: dict[tuple[str, str], float]

    def __post_init__(self):
        for pair in self.bigram:
            for w in pair:
                if w not in self.unigram:
                    raise LmFormatError(f"bigram word {w!r} missing from unigrams")

    @property
    def vocab(self) -> set[str]:
        return set(self.unigram)

    def words(self) -> list[str]:
        """Vocabulary without the sentence markers."""
        return sorted(self.vocab - {SENTENCE_START, SENTENCE_END})

    def logprob(self, w1: str, w2: str) -> float:
        """Back-off bigram log10 probability of w2 following w1."""
        if w2 not in self.unigram:
            raise KeyError(f"word {w2!r} not in LM vocabulary")
        if w1 not in self.unigram:
            raise KeyError(f"history {w1!r} not in LM vocabulary")
        pair = (w1, w2)
        if pair in self.bigram:
            return self.bigram[pair]
        return self.unigram[w1][1] + self.unigram[w2][0]


def logprob(lm: BigramLm, w1: str, w2: str) -> float:
    return lm.logprob(w1, w2)


def _normalize_word(token: str) -> str:
    low = token.lower()
    if low in (SENTENCE_START, SENTENCE_END):
        return low
    return token.upper()


def parse_arpa(path) -> BigramLm:
    """Parse a standard ARPA text file holding a bigram back-off model.

    The declared \\data\\ counts must match the section contents; any order
    above 2 with a nonzero count is rejected.
    """
    declared: dict[int, int] = {}
    unigram: dict[str, tuple[float, float]] = {}
    bigram: dict[tuple[str, str], float] = {}
    section = None

    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]

    for lineno, line in enumerate(lines, 1):
        if not line:
            continue
        if line == "\\data\\":
            section = "data"
            continue
        m = re.match(r"\\(\d+)-grams:$", line)
        if m:
            section = int(m.group(1))
            if section > 2:
                raise LmFormatError(f"{path}: order-{section} section present; only bigram models are supported")
            continue
        if line == "\\end\\":
            section = "end"
            continue
        if section == "data":
            m = re.match(r"ngram (\d+)\s*=\s*(\d+)$", line)
            if not m:
                raise LmFormatError(f"{path}:{lineno}: bad data line {line!r}")
            order, count = int(m.group(1)), int(m.group(2))
            if order > 2 and count > 0:
                raise LmFormatError(f"{path}: declares {count} {order}-grams; only bigram models are supported")
            declared[order] = count
        elif section == 1:
            parts = line.split()
            if len(parts) not in (2, 3):
                raise LmFormatError(f"{path}:{lineno}: bad unigram line {line!r}")
            word = _normalize_word(parts[1])
            backoff = float(parts[2]) if len(parts) == 3 else 0.0
            unigram[word] = (float(parts[0]), backoff)
        elif section == 2:
            parts = line.split()
            if len(parts) != 3:
                raise LmFormatError(f"{path}:{lineno}: bad bigram line {line!r}")
            bigram[(_normalize_word(parts[1]), _normalize_word(parts[2]))] = float(parts[0])
        elif section == "end":
            raise LmFormatError(f"{path}:{lineno}: content after \\end\\")
        else:
            raise LmFormatError(f"{path}:{lineno}: content outside any section: {line!r}")

    if section != "end":
        raise LmFormatError(f"{path}: missing \\end\\ marker")
    if 1 not in declared:
        raise LmFormatError(f"{path}: missing \\data\\ unigram count")
    if declared[1] != len(unigram):
        raise LmFormatError(
            f"{path}: declared {declared[1]} unigrams but parsed {len(unigram)}"
        )
    if declared.get(2, 0) != len(bigram):
        raise LmFormatError(
            f"{path}: declared {declared.get(2, 0)} bigrams but parsed {len(bigram)}"
        )
    return BigramLm(unigram, bigram)


def write_arpa(path, lm: BigramLm) -> None:
    """Write the model back out as ARPA text (floats via repr, round-trip safe)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\\data\\\n")
        fh.write(f"ngram 1={len(lm.unigram)}\n")
        fh.write(f"ngram 2={len(lm.bigram)}\n")
        fh.write("\n\\1-grams:\n")
        for word in sorted(lm.unigram):
            prob, backoff = lm.unigram[word]
            if backoff != 0.0:
                fh.write(f"{prob!r}\t{word}\t{backoff!r}\n")
            else:
                fh.write(f"{prob!r}\t{word}\n")
        fh.write("\n\\2-grams:\n")
        for (w1, w2) in sorted(lm.bigram):
            fh.write(f"{lm.bigram[(w1, w2)]!r}\t{w1} {w2}\n")
        fh.write("\n\\end\\\n")


def uniform_bigram_lm(words) -> BigramLm:
    """Bigram model giving every word (and sentence end) equal probability.

    Every context backs off to the uniform unigram distribution, so the
    model is trivially normalized; the start marker itself is never
    predicted and carries the conventional -99 log10 probability.
    """
    words = sorted(set(words))
    if not words:
        raise ValueError("uniform LM needs a nonempty vocabulary")
    logp = math.log10(1.0 / (len(words) + 1))
    unigram = {w: (logp, 0.0) for w in words}
    unigram[SENTENCE_END] = (logp, 0.0)
    unigram[SENTENCE_START] = (-99.0, 0.0)
    return BigramLm(unigram, {})

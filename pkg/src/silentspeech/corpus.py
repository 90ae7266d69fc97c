"""Corpus loading and synthetic corpus generation.

On disk a corpus is a directory tree of 8-bit binary PGM (P5) frame
sequences plus plain-text transcripts and train/test lists:

    <root>/train.list, <root>/test.list    one utterance id per line
    <root>/transcripts.txt                 "utt_id WORD WORD ..."
    <root>/lexicon.txt                     "WORD ph1 ph2 ..."
    <root>/lm.arpa                         bigram LM over the vocabulary
    <root>/manifest.txt                    "utt_id split tongue_dir lip_dir"
    <root>/frames/<utt_id>/<modality>/frame_%06d.pgm

Pixels are scaled to [0, 1] floats on load (value / 255). The synthetic
generator renders each phone as a distinct Gaussian-blob articulator
template held for a few frames under additive clipped Gaussian noise, so a
desk-scale corpus with the same shape as the real archive can be produced
from a seed alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lexicon_lm
from .lexicon_lm import Lexicon

MODALITIES = ("tongue", "lip")

FRAME_NAME = "frame_%06d.pgm"
_FRAME_RE = re.compile(r"frame_(\d{6})\.pgm$")


class CorpusError(ValueError):
    """Raised for malformed corpus trees or frame files."""


@dataclass
class FrameSequence:
    """Ordered grayscale frames of one modality for one utterance."""

    utterance_id: str
    modality: str
    frames: np.ndarray            # (T, H, W) floats in [0, 1]
    frame_rate: float = 60.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[0] == 0:
            raise CorpusError("frames must be a nonempty (T, H, W) stack")
        if self.frame_rate <= 0:
            raise CorpusError("frame_rate must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class Transcript:
    utterance_id: str
    words: tuple[str, ...]

    def __post_init__(self):
        if not self.words or any(not w for w in self.words):
            raise CorpusError(f"{self.utterance_id}: empty transcript or empty word")


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] float image as binary 8-bit PGM."""
    quantized = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = quantized.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM into a [0, 1] float image."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise CorpusError(f"{path}: not a binary PGM (P5) file")
    # Header: magic, width, height, maxval, each separated by whitespace,
    # with optional '#' comment lines.
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise CorpusError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    if len(data) - pos < w * h:
        raise CorpusError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def load_frame_sequence(directory, modality: str, frame_rate: float = 60.0) -> FrameSequence:
    """Load frame_%06d.pgm files, checking the index run is contiguous from 0."""
    directory = Path(directory)
    if modality not in MODALITIES:
        raise CorpusError(f"unknown modality {modality!r}")
    indexed = {}
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            indexed[int(m.group(1))] = p
    if not indexed:
        raise CorpusError(f"{directory}: no frame_%06d.pgm files")
    expected = list(range(len(indexed)))
    if sorted(indexed) != expected:
        raise CorpusError(f"{directory}: non-contiguous frame indices")
    frames = [read_pgm(indexed[i]) for i in expected]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise CorpusError(f"{directory}: mixed frame dimensions {sorted(shapes)}")
    return FrameSequence(directory.parent.name, modality, np.stack(frames), frame_rate)


def load_transcripts(path) -> dict[str, Transcript]:
    """Parse "utt_id WORD WORD ..." lines into a transcript map."""
    transcripts: dict[str, Transcript] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) < 2:
                raise CorpusError(f"{path}:{lineno}: utterance with empty word list")
            utt_id = parts[0]
            if utt_id in transcripts:
                raise CorpusError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            transcripts[utt_id] = Transcript(utt_id, tuple(w.upper() for w in parts[1:]))
    return transcripts


def write_transcripts(path, transcripts) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(f"{t.utterance_id} {' '.join(t.words)}\n")


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------

@dataclass
class SyntheticCorpusSpec:
    """Everything the synthetic generator needs; generation is a pure
    function of this record."""

    seed: int
    vocabulary: list[str]
    lexicon: Lexicon
    num_train_utts: int
    num_test_utts: int
    frames_per_phone_mean: int = 6
    image_size: tuple[int, int] = (16, 16)   # (width, height), both modalities
    noise_sigma: float = 0.25
    words_min: int = 2
    words_max: int = 5
    frame_rate: float = 60.0

    def __post_init__(self):
        if not self.vocabulary:
            raise CorpusError("vocabulary must be nonempty")
        missing = [w for w in self.vocabulary if w not in self.lexicon]
        if missing:
            raise CorpusError(f"vocabulary words missing from lexicon: {missing}")
        if self.num_train_utts <= 0 or self.num_test_utts <= 0:
            raise CorpusError("utterance counts must be positive")
        if self.noise_sigma < 0:
            raise CorpusError("noise_sigma must be non-negative")
        if not (1 <= self.words_min <= self.words_max):
            raise CorpusError("bad words_min/words_max range")


def phone_template(phone_index: int, num_phones: int, width: int, height: int,
                   modality: str) -> np.ndarray:
    """Noise-free articulator image for one phone.

    Index 0 is silence and renders as plain background. Other phones get a
    Gaussian blob on a grid whose cell is a fixed function of the phone
    index; the lip modality reverses the index so the two views carry the
    same identity in different positions.
    """
    background = 0.05
    img = np.full((height, width), background)
    if phone_index == 0:
        return img
    blobs = num_phones - 1
    i = phone_index - 1
    if modality == "lip":
        i = blobs - 1 - i
    g = int(np.ceil(np.sqrt(blobs)))
    row, col = divmod(i, g)
    cx = (col + 0.5) / g * width
    cy = (row + 0.5) / g * height
    sigma = min(width, height) / g / 3.0
    if modality == "lip":
        sigma *= 1.25
    y, x = np.mgrid[0:height, 0:width]
    blob = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * sigma**2))
    return np.clip(img + 0.85 * blob, 0.0, 1.0)


def quantize_pixels(frames: np.ndarray) -> np.ndarray:
    """Snap float pixels to the 8-bit grid used by the PGM files."""
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0) / 255.0


def _phone_order(spec: SyntheticCorpusSpec) -> list[str]:
    sil = spec.lexicon.silence_phone
    rest = sorted(spec.lexicon.phone_set - {sil})
    return [sil] + rest


def render_utterance(spec: SyntheticCorpusSpec, words, rng) -> dict[str, np.ndarray]:
    """Render tongue and lip frame stacks for one word sequence.

    Consumes the rng for per-phone durations and per-pixel noise; leading
    and trailing silence segments are always rendered. Pixels are already
    quantized to the 8-bit grid so in-memory use matches a written corpus.
    """
    order = _phone_order(spec)
    index = {p: i for i, p in enumerate(order)}
    sil = spec.lexicon.silence_phone
    phones = [sil]
    for w in words:
        phones.extend(spec.lexicon.pronunciations(w)[0])
    phones.append(sil)

    durations = [
        max(2, int(round(rng.normal(spec.frames_per_phone_mean,
                                    spec.frames_per_phone_mean / 3.0))))
        for _ in phones
    ]
    w, h = spec.image_size
    out = {}
    for modality in MODALITIES:
        templates = {
            p: phone_template(index[p], len(order), w, h, modality) for p in set(phones)
        }
        stack = []
        for phone, dur in zip(phones, durations):
            base = templates[phone]
            for _ in range(dur):
                frame = base
                if spec.noise_sigma > 0:
                    frame = base + rng.normal(0.0, spec.noise_sigma, base.shape)
                stack.append(np.clip(frame, 0.0, 1.0))
        out[modality] = quantize_pixels(np.stack(stack))
    return out


def synthesize_utterances(spec: SyntheticCorpusSpec):
    """Deterministically draw all transcripts and frame stacks for the spec.

    Returns (split, Transcript, {modality: frames}) tuples, train first.
    """
    rng = np.random.default_rng(spec.seed)
    plan = [("train", i) for i in range(spec.num_train_utts)]
    plan += [("test", i) for i in range(spec.num_test_utts)]
    for split, i in plan:
        utt_id = f"{split}_{i:04d}"
        n_words = int(rng.integers(spec.words_min, spec.words_max + 1))
        words = tuple(spec.vocabulary[int(k)]
                      for k in rng.integers(0, len(spec.vocabulary), n_words))
        transcript = Transcript(utt_id, words)
        yield split, transcript, render_utterance(spec, words, rng)


@dataclass
class CorpusManifest:
    root: Path
    train_ids: list[str]
    test_ids: list[str]
    transcripts: dict[str, Transcript]

    def ids(self, split: str) -> list[str]:
        if split == "train":
            return self.train_ids
        if split == "test":
            return self.test_ids
        raise CorpusError(f"unknown split {split!r}")

    def frames_dir(self, utt_id: str, modality: str) -> Path:
        return self.root / "frames" / utt_id / modality

    @property
    def lexicon_path(self) -> Path:
        return self.root / "lexicon.txt"

    @property
    def lm_path(self) -> Path:
        return self.root / "lm.arpa"


def generate_corpus(spec: SyntheticCorpusSpec, out) -> CorpusManifest:
    """Write a complete synthetic corpus tree. Byte-identical for equal specs."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "frames").mkdir(exist_ok=True)

    splits = {"train": [], "test": []}
    transcripts = {}
    manifest_lines = []
    for split, transcript, stacks in synthesize_utterances(spec):
        utt_id = transcript.utterance_id
        splits[split].append(utt_id)
        transcripts[utt_id] = transcript
        for modality in MODALITIES:
            d = root / "frames" / utt_id / modality
            d.mkdir(parents=True, exist_ok=True)
            for t, frame in enumerate(stacks[modality]):
                write_pgm(d / (FRAME_NAME % t), frame)
        manifest_lines.append(
            f"{utt_id} {split} frames/{utt_id}/tongue frames/{utt_id}/lip\n"
        )

    for split in ("train", "test"):
        (root / f"{split}.list").write_text("".join(u + "\n" for u in splits[split]))
    write_transcripts(root / "transcripts.txt",
                      [transcripts[u] for u in splits["train"] + splits["test"]])
    (root / "manifest.txt").write_text("".join(manifest_lines))
    lexicon_lm.write_lexicon(root / "lexicon.txt", spec.lexicon)
    lexicon_lm.write_arpa(root / "lm.arpa", lexicon_lm.uniform_bigram_lm(spec.vocabulary))
    return CorpusManifest(root, splits["train"], splits["test"], transcripts)


def load_corpus(root) -> CorpusManifest:
    """Open an on-disk corpus tree written by :func:`generate_corpus` (or laid
    out the same way for real data)."""
    root = Path(root)
    for required in ("train.list", "test.list", "transcripts.txt"):
        if not (root / required).exists():
            raise CorpusError(f"{root}: missing {required}")
    train_ids = (root / "train.list").read_text().split()
    test_ids = (root / "test.list").read_text().split()
    transcripts = load_transcripts(root / "transcripts.txt")
    missing = [u for u in train_ids + test_ids if u not in transcripts]
    if missing:
        raise CorpusError(f"{root}: utterances without transcripts: {missing[:5]}")
    return CorpusManifest(root, train_ids, test_ids, transcripts)


def load_utterance_frames(manifest: CorpusManifest, utt_id: str,
                          frame_rate: float = 60.0) -> dict[str, FrameSequence]:
    """Load both modalities for one utterance, enforcing synchronized lengths."""
    out = {}
    for modality in MODALITIES:
        out[modality] = load_frame_sequence(
            manifest.frames_dir(utt_id, modality), modality, frame_rate
        )
    if out["tongue"].num_frames != out["lip"].num_frames:
        raise CorpusError(
            f"{utt_id}: tongue/lip frame counts differ "
            f"({out['tongue'].num_frames} vs {out['lip'].num_frames})"
        )
    return out


# ---------------------------------------------------------------------------
# Built-in desk-scale vocabulary
# ---------------------------------------------------------------------------

def make_demo_vocabulary(num_words: int = 20, num_phones: int = 12,
                         seed: int = 0) -> tuple[list[str], Lexicon]:
    """Invent a small vocabulary with pronounceable fake words.

    Each word gets a distinct 2..4 phone pronunciation over a small phone
    inventory; deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    phones = [f"p{i:02d}" for i in range(num_phones)]
    entries: dict[str, list[tuple[str, ...]]] = {}
    seen = set()
    i = 0
    while len(entries) < num_words:
        length = int(rng.integers(2, 5))
        pron = tuple(phones[int(k)] for k in rng.integers(0, num_phones, length))
        if pron in seen:
            continue
        seen.add(pron)
        entries[f"WORD{i:02d}"] = [pron]
        i += 1
    lex = Lexicon(entries)
    return sorted(entries), lex

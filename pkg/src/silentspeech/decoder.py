"""Word-graph construction and beam-pruned Viterbi decoding.

The graph expands the whole bigram LM explicitly: every word becomes a
chain of 3-state phone HMMs (one chain per pronunciation), every ordered
word pair gets an arc carrying the bigram log-probability, and each word
owns a private optional silence copy so that silence between words does
not lose the bigram context. Sentence markers map to start/final scores.
This quadratic expansion is meant for desk-scale vocabularies.

Scores are natural-log throughout; ARPA log10 values are converted once at
build time. During the search the acoustic weight multiplies emission
scores only, so rescaling all acoustic scores by c while dividing acwt by
c leaves the argmax unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lexicon_lm import BigramLm, Lexicon, SENTENCE_END, SENTENCE_START, logprob

LN10 = math.log(10.0)
LOG_ZERO = -np.inf


class DecodeError(RuntimeError):
    """Decoding failed for one utterance (pruned out or no final token)."""


@dataclass
class DecodeConfig:
    beam: float = 13.0
    acwt: float = 0.1
    word_insertion_penalty: float = 0.0
    max_active: int = 5000
    lattice_beam: float = 8.0        # kept for config fidelity; single-best only

    def __post_init__(self):
        if self.beam <= 0:
            raise ValueError("beam must be positive")
        if self.acwt <= 0:
            raise ValueError("acwt must be positive")
        if self.max_active <= 0:
            raise ValueError("max_active must be positive")


@dataclass(frozen=True)
class Hypothesis:
    """Single-best decode of one utterance.

    The score decomposes exactly as
    total = acwt*acoustic + lm + transition + penalty*len(words).
    """

    words: tuple[str, ...]
    total: float
    acoustic: float
    lm: float
    transition: float
    word_boundaries: tuple[tuple[str, int, int], ...] = ()


@dataclass
class DecodeGraph:
    words: list[str]
    node_state: np.ndarray           # (N,) HMM state id
    node_word: np.ndarray            # (N,) owning word index, -1 for start silence
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_trans: np.ndarray            # natural-log HMM transition
    arc_lm: np.ndarray               # natural-log LM score (0 where none)
    arc_word: np.ndarray             # emitted word index, -1 for none
    start_lm: np.ndarray             # (N,) initial LM score or -inf
    start_word: np.ndarray           # (N,) word emitted on entry, -1 none
    final_lm: np.ndarray             # (N,) acceptance LM score or -inf
    num_model_states: int

    @property
    def num_nodes(self) -> int:
        return len(self.node_state)

    @property
    def num_arcs(self) -> int:
        return len(self.arc_src)


def build_graph(lexicon: Lexicon, lm: BigramLm, model) -> DecodeGraph:
    """Expand lexicon + bigram LM over the model's HMM topology.

    The vocabulary is the LM's word list (markers excluded); every word
    must have a pronunciation, else the OOVs are reported in one error.
    """
    vocab = sorted(lm.words())
    if not lexicon.words():
        raise ValueError("empty lexicon")
    oov = [w for w in vocab if w not in lexicon]
    if oov:
        raise ValueError(f"LM words missing from lexicon: {oov}")
    if not vocab:
        raise ValueError("LM has no words besides sentence markers")

    log_trans = model.log_transitions()
    sil_states = model.phone_states(model.silence_phone)

    node_state: list[int] = []
    node_word: list[int] = []
    arcs: list[tuple[int, int, float, float, int]] = []  # src,dst,trans,lm,word

    def add_chain(states, word_idx):
        entry = len(node_state)
        for k, st in enumerate(states):
            node = len(node_state)
            node_state.append(st)
            node_word.append(word_idx)
            arcs.append((node, node, log_trans[st, 0], 0.0, -1))
            if k + 1 < len(states):
                arcs.append((node, node + 1, log_trans[st, 1], 0.0, -1))
        return entry, len(node_state) - 1

    entries: dict[int, list[int]] = {}   # word idx -> entry nodes (one per pron)
    exits: dict[int, list[int]] = {}     # word idx -> pron exits + silence exit
    for wi, word in enumerate(vocab):
        entries[wi] = []
        word_exits = []
        for pron in lexicon.pronunciations(word):
            states = [s for ph in pron for s in model.phone_states(ph)]
            entry, exit_node = add_chain(states, wi)
            entries[wi].append(entry)
            word_exits.append(exit_node)
        sil_entry, sil_exit = add_chain(sil_states, wi)
        for src in word_exits:
            arcs.append((src, sil_entry, log_trans[node_state[src], 1], 0.0, -1))
        exits[wi] = word_exits + [sil_exit]

    start_sil_entry, start_sil_exit = add_chain(sil_states, -1)

    def lm_score(w1, w2) -> float:
        return LN10 * logprob(lm, w1, w2)

    for wi, w1 in enumerate(vocab):
        for wj, w2 in enumerate(vocab):
            score = lm_score(w1, w2)
            for src in exits[wi]:
                trans = log_trans[node_state[src], 1]
                for dst in entries[wj]:
                    arcs.append((src, dst, trans, score, wj))

    n = len(node_state)
    start_lm = np.full(n, LOG_ZERO)
    start_word = np.full(n, -1, dtype=np.int64)
    final_lm = np.full(n, LOG_ZERO)

    start_lm[start_sil_entry] = 0.0
    for wi, word in enumerate(vocab):
        score = lm_score(SENTENCE_START, word)
        for dst in entries[wi]:
            start_lm[dst] = score
            start_word[dst] = wi
        trans = log_trans[node_state[start_sil_exit], 1]
        for dst in entries[wi]:
            arcs.append((start_sil_exit, dst, trans, score, wi))
        end_score = lm_score(word, SENTENCE_END)
        for node in exits[wi]:
            final_lm[node] = end_score
    final_lm[start_sil_exit] = lm_score(SENTENCE_START, SENTENCE_END)

    arcs.sort(key=lambda a: (a[1], a[0]))
    src, dst, trans, lm_col, word_col = zip(*arcs)
    return DecodeGraph(
        list(vocab),
        np.array(node_state, dtype=np.int64),
        np.array(node_word, dtype=np.int64),
        np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
        np.array(trans, dtype=np.float64), np.array(lm_col, dtype=np.float64),
        np.array(word_col, dtype=np.int64),
        start_lm, start_word, final_lm, model.total_states,
    )


def _score_matrix(scores, num_frames, num_states) -> np.ndarray:
    if callable(scores):
        return np.array([[scores(t, s) for s in range(num_states)]
                         for t in range(num_frames)])
    mat = np.asarray(scores, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != num_states:
        raise ValueError(f"score matrix must be (T, {num_states})")
    return mat


def _prune(dp: np.ndarray, beam: float, max_active: int) -> np.ndarray:
    best = dp.max()
    if best == LOG_ZERO:
        raise DecodeError("all tokens pruned")
    keep = dp >= (best - beam if np.isfinite(beam) else LOG_ZERO)
    if keep.sum() > max_active:
        order = np.argsort(-dp, kind="stable")[:max_active]
        keep = np.zeros_like(keep)
        keep[order] = True
    return np.where(keep, dp, LOG_ZERO)


def viterbi_decode(graph: DecodeGraph, scores, cfg: DecodeConfig,
                   num_frames: int | None = None) -> Hypothesis:
    """Token-passing search over the graph.

    `scores` is a (T, total_states) log-likelihood matrix, or a callable
    (frame, state) -> log value (then num_frames is required). Acoustic
    values enter the search multiplied by cfg.acwt; the returned hypothesis
    reports the raw acoustic sum.
    """
    if callable(scores) and num_frames is None:
        raise ValueError("num_frames required with a callable score source")
    t_total = num_frames if callable(scores) else np.asarray(scores).shape[0]
    if t_total < 1:
        raise ValueError("need at least one frame")
    emis = _score_matrix(scores, t_total, graph.num_model_states)

    penalty = cfg.word_insertion_penalty
    arc_w = graph.arc_trans + graph.arc_lm + penalty * (graph.arc_word >= 0)
    n = graph.num_nodes
    num_arcs = graph.num_arcs
    arc_index = np.arange(num_arcs)

    dp = graph.start_lm + penalty * (graph.start_word >= 0)
    dp = dp + cfg.acwt * emis[0, graph.node_state]
    bp = np.full((t_total, n), -1, dtype=np.int64)
    for t in range(1, t_total):
        dp = _prune(dp, cfg.beam, cfg.max_active)
        cand = dp[graph.arc_src] + arc_w
        best = np.full(n, LOG_ZERO)
        np.maximum.at(best, graph.arc_dst, cand)
        winner = np.full(n, num_arcs, dtype=np.int64)
        live = (cand == best[graph.arc_dst]) & (cand > LOG_ZERO)
        np.minimum.at(winner, graph.arc_dst[live], arc_index[live])
        ok = winner < num_arcs
        row = np.full(n, -1, dtype=np.int64)
        row[ok] = winner[ok]
        bp[t] = row
        dp = np.where(ok, best, LOG_ZERO) + cfg.acwt * emis[t, graph.node_state]

    finals = dp + graph.final_lm
    end = int(np.argmax(finals))
    if finals[end] == LOG_ZERO:
        raise DecodeError("no token reached a final state")

    # Backtrace: collect the node path and the arcs taken between frames.
    path = np.empty(t_total, dtype=np.int64)
    path[-1] = end
    taken = []                        # arc index used entering frame t
    for t in range(t_total - 1, 0, -1):
        arc = bp[t, path[t]]
        if arc < 0:
            raise DecodeError("broken backtrace")   # cannot happen
        taken.append(arc)
        path[t - 1] = graph.arc_src[arc]
    taken.reverse()

    words = []
    boundaries = []
    start_word = int(graph.start_word[path[0]])
    if start_word >= 0:
        words.append(graph.words[start_word])
        boundaries.append([graph.words[start_word], 0, t_total - 1])
    lm_total = float(graph.start_lm[path[0]])
    trans_total = 0.0
    for t, arc in enumerate(taken, start=1):
        trans_total += float(graph.arc_trans[arc])
        lm_total += float(graph.arc_lm[arc])
        wi = int(graph.arc_word[arc])
        if wi >= 0:
            if boundaries:
                boundaries[-1][2] = t - 1
            words.append(graph.words[wi])
            boundaries.append([graph.words[wi], t, t_total - 1])
    lm_total += float(graph.final_lm[end])
    acoustic = float(emis[np.arange(t_total), graph.node_state[path]].sum())
    total = (cfg.acwt * acoustic + lm_total + trans_total
             + penalty * len(words))
    return Hypothesis(tuple(words), total, acoustic, lm_total, trans_total,
                      tuple((w, s, e) for w, s, e in boundaries))


def decode_corpus(graph: DecodeGraph, scores_by_utt, cfg: DecodeConfig):
    """Decode every utterance independently.

    `scores_by_utt` maps utterance id to a score matrix. Returns
    (hypotheses by id, failures by id); a failing utterance never aborts
    the batch.
    """
    hyps: dict[str, Hypothesis] = {}
    failures: dict[str, str] = {}
    for utt_id in sorted(scores_by_utt):
        try:
            hyps[utt_id] = viterbi_decode(graph, scores_by_utt[utt_id], cfg)
        except (DecodeError, ValueError) as exc:
            failures[utt_id] = str(exc)
    return hyps, failures


SERIAL_FORMAT = "silentspeech-graph"
SERIAL_VERSION = 1


def save_graph(path, graph: DecodeGraph) -> None:
    doc = {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "words": graph.words,
        "node_state": graph.node_state.tolist(),
        "node_word": graph.node_word.tolist(),
        "arc_src": graph.arc_src.tolist(),
        "arc_dst": graph.arc_dst.tolist(),
        "arc_trans": graph.arc_trans.tolist(),
        "arc_lm": graph.arc_lm.tolist(),
        "arc_word": graph.arc_word.tolist(),
        "start_lm": [None if x == LOG_ZERO else x for x in graph.start_lm],
        "start_word": graph.start_word.tolist(),
        "final_lm": [None if x == LOG_ZERO else x for x in graph.final_lm],
        "num_model_states": graph.num_model_states,
    }
    Path(path).write_text(json.dumps(doc))


def load_graph(path) -> DecodeGraph:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"{path}: not a {SERIAL_FORMAT} file")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")

    def logs(values):
        return np.array([LOG_ZERO if x is None else x for x in values])

    return DecodeGraph(
        list(doc["words"]),
        np.array(doc["node_state"], dtype=np.int64),
        np.array(doc["node_word"], dtype=np.int64),
        np.array(doc["arc_src"], dtype=np.int64),
        np.array(doc["arc_dst"], dtype=np.int64),
        np.array(doc["arc_trans"], dtype=np.float64),
        np.array(doc["arc_lm"], dtype=np.float64),
        np.array(doc["arc_word"], dtype=np.int64),
        logs(doc["start_lm"]), np.array(doc["start_word"], dtype=np.int64),
        logs(doc["final_lm"]), int(doc["num_model_states"]),
    )


def write_hypotheses(path, hyps: dict[str, Hypothesis]) -> None:
    """Text output, one line per utterance: "utt_id WORD WORD ..."."""
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id in sorted(hyps):
            fh.write(f"{utt_id} {' '.join(hyps[utt_id].words)}".rstrip() + "\n")


def read_hypotheses(path) -> dict[str, tuple[str, ...]]:
    """Inverse of write_hypotheses; a bare id line is an empty hypothesis."""
    out: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            out[parts[0]] = tuple(parts[1:])
    return out


def write_scores_csv(path, hyps: dict[str, Hypothesis]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utterance,total,acoustic,lm,transition,num_words\n")
        for utt_id in sorted(hyps):
            h = hyps[utt_id]
            fh.write(f"{utt_id},{h.total:.6f},{h.acoustic:.6f},"
                     f"{h.lm:.6f},{h.transition:.6f},{len(h.words)}\n")

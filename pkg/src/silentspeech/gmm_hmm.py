"""Monophone GMM-HMM acoustic model.

Each phone is a 3-state left-to-right HMM with diagonal-covariance GMM
emissions. Training is Viterbi-style EM: hard state alignment of every
utterance, then maximum-likelihood re-estimation from the aligned frames
(with soft responsibilities across the components within a state), with
optional mixture growth toward a Gaussian budget by splitting the heaviest
component of each state.

State ids are global: phone index * states_per_phone + state position,
phones in sorted order. The silence phone is an ordinary phone that the
alignment and decoding graphs insert optionally at utterance boundaries
and between words.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lexicon_lm import Lexicon

log = logging.getLogger(__name__)

LOG_ZERO = -np.inf
VAR_FLOOR_SCALE = 1e-4
TRANS_FLOOR = 1e-8
_LOG_2PI = float(np.log(2.0 * np.pi))


class AlignmentError(RuntimeError):
    """No valid state path exists (typically the utterance is too short)."""


def _logsumexp(a: np.ndarray, axis=None, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


@dataclass
class AcousticModel:
    phones: list[str]                 # sorted, silence included
    silence_phone: str
    states_per_phone: int
    weights: list[np.ndarray]         # per state: (M_s,)
    means: list[np.ndarray]           # per state: (M_s, D)
    variances: list[np.ndarray]       # per state: (M_s, D)
    transitions: np.ndarray           # (S, 2) probabilities [self, advance]
    var_floor: np.ndarray             # (D,)
    flat: bool = False                # fresh flat start, not yet re-estimated

    def __post_init__(self):
        s = len(self.phones) * self.states_per_phone
        if not (len(self.weights) == len(self.means) == len(self.variances) == s):
            raise ValueError("per-state parameter lists must cover all states")
        if self.transitions.shape != (s, 2):
            raise ValueError("transitions must be (total_states, 2)")
        for w in self.weights:
            if abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("mixture weights must sum to 1")
        if self.silence_phone not in self.phones:
            raise ValueError(f"silence phone {self.silence_phone!r} missing")

    @property
    def total_states(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means[0].shape[1]

    @property
    def num_gaussians(self) -> int:
        return sum(len(w) for w in self.weights)

    def state_index(self, phone: str, position: int) -> int:
        return self.phones.index(phone) * self.states_per_phone + position

    def phone_of_state(self, state: int) -> str:
        return self.phones[state // self.states_per_phone]

    def phone_states(self, phone: str) -> list[int]:
        base = self.phones.index(phone) * self.states_per_phone
        return list(range(base, base + self.states_per_phone))

    def log_transitions(self) -> np.ndarray:
        return np.log(self.transitions)

    def copy(self) -> "AcousticModel":
        return AcousticModel(list(self.phones), self.silence_phone,
                             self.states_per_phone,
                             [w.copy() for w in self.weights],
                             [m.copy() for m in self.means],
                             [v.copy() for v in self.variances],
                             self.transitions.copy(), self.var_floor.copy(),
                             self.flat)


@dataclass
class Alignment:
    """Hard frame-to-state assignment for one utterance."""

    utterance_id: str
    states: np.ndarray                # (T,) global state ids
    score: float = 0.0                # joint log-likelihood of the path

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        if self.states.ndim != 1 or self.states.size == 0:
            raise ValueError("states must be a nonempty 1-D array")

    @property
    def num_frames(self) -> int:
        return self.states.size

    def phone_indices(self, model: AcousticModel) -> np.ndarray:
        return self.states // model.states_per_phone

    def phone_labels(self, model: AcousticModel) -> list[str]:
        return [model.phones[i] for i in self.phone_indices(model)]


def _frames_of(features) -> np.ndarray:
    frames = getattr(features, "frames", features)
    return np.asarray(frames, dtype=np.float64)


def _check_vocabulary(transcripts, lexicon: Lexicon) -> None:
    oov = sorted({w for t in transcripts.values() for w in t.words
                  if w not in lexicon})
    if oov:
        raise ValueError(f"transcript words missing from lexicon: {oov}")


def flat_start(features, transcripts, lexicon: Lexicon,
               states_per_phone: int = 3) -> AcousticModel:
    """Initialize every state with one Gaussian at the global mean and
    variance of the training data, transitions uniform."""
    _check_vocabulary(transcripts, lexicon)
    all_frames = np.vstack([_frames_of(features[u]) for u in sorted(features)])
    mean = all_frames.mean(axis=0)
    var = all_frames.var(axis=0)
    floor = VAR_FLOOR_SCALE * var
    var = np.maximum(var, floor)
    phones = sorted(lexicon.phone_set)
    s = len(phones) * states_per_phone
    return AcousticModel(
        phones, lexicon.silence_phone, states_per_phone,
        [np.ones(1) for _ in range(s)],
        [mean[None, :].copy() for _ in range(s)],
        [var[None, :].copy() for _ in range(s)],
        np.full((s, 2), 0.5), floor, flat=True,
    )


# ---------------------------------------------------------------------------
# Emission likelihoods
# ---------------------------------------------------------------------------

def _state_loglikes(weights, means, variances, frames: np.ndarray) -> np.ndarray:
    """(T,) log-likelihood of frames under one state's diagonal GMM."""
    diff = frames[:, None, :] - means[None, :, :]            # (T, M, D)
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    log_norm = -0.5 * (means.shape[1] * _LOG_2PI + np.sum(np.log(variances), axis=1))
    comp = np.log(weights)[None, :] + log_norm[None, :] - 0.5 * quad
    return _logsumexp(comp, axis=1)


def loglike(model: AcousticModel, state: int, frame: np.ndarray) -> float:
    """Log emission likelihood of a single frame under one state."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (model.dim,):
        raise ValueError(f"frame dim {frame.shape} != ({model.dim},)")
    return float(_state_loglikes(model.weights[state], model.means[state],
                                 model.variances[state], frame[None, :])[0])


def emission_matrix(model: AcousticModel, features) -> np.ndarray:
    """(T, total_states) log emission likelihoods."""
    frames = _frames_of(features)
    if frames.shape[1] != model.dim:
        raise ValueError(f"feature dim {frames.shape[1]} != model dim {model.dim}")
    out = np.empty((frames.shape[0], model.total_states))
    for s in range(model.total_states):
        out[:, s] = _state_loglikes(model.weights[s], model.means[s],
                                    model.variances[s], frames)
    return out


# ---------------------------------------------------------------------------
# Alignment graphs and Viterbi
# ---------------------------------------------------------------------------

@dataclass
class _AlignGraph:
    """Linear transcript graph with optional silences, flattened to arcs."""

    node_state: np.ndarray            # (N,) global state id per node
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_logp: np.ndarray
    start_nodes: np.ndarray
    final_nodes: np.ndarray
    min_frames: int


def _transcript_graph(model: AcousticModel, lexicon: Lexicon, words) -> _AlignGraph:
    """Nodes for [sil] w1 [sil] w2 ... [sil], silences skippable.

    Words use their first listed pronunciation.
    """
    sil_states = model.phone_states(model.silence_phone)
    segments = [(sil_states, True)]
    for i, word in enumerate(words):
        if i > 0:
            segments.append((sil_states, True))
        states = []
        for phone in lexicon.pronunciations(word)[0]:
            states.extend(model.phone_states(phone))
        segments.append((states, False))
    segments.append((sil_states, True))

    log_trans = model.log_transitions()
    node_state: list[int] = []
    arcs: list[tuple[int, int, float]] = []
    start_nodes: list[int] = []
    final_nodes: list[int] = []
    pending_exits: list[int] = []
    at_start = True
    for states, optional in segments:
        entry = len(node_state)
        for k, st in enumerate(states):
            node = len(node_state)
            node_state.append(st)
            arcs.append((node, node, log_trans[st, 0]))
            if k + 1 < len(states):
                arcs.append((node, node + 1, log_trans[st, 1]))
        exit_node = len(node_state) - 1
        for src in pending_exits:
            arcs.append((src, entry, log_trans[node_state[src], 1]))
        if at_start:
            start_nodes.append(entry)
        if optional:
            pending_exits.append(exit_node)
        else:
            pending_exits = [exit_node]
            at_start = False
    final_nodes = sorted(pending_exits)

    arcs.sort(key=lambda a: (a[1], a[0]))
    src, dst, logp = (np.array(x) for x in zip(*arcs))
    min_frames = sum(len(states) for states, optional in segments if not optional)
    return _AlignGraph(np.array(node_state, dtype=np.int64),
                       src.astype(np.int64), dst.astype(np.int64),
                       logp.astype(np.float64),
                       np.array(sorted(start_nodes), dtype=np.int64),
                       np.array(final_nodes, dtype=np.int64), min_frames)


def _viterbi_nodes(graph: _AlignGraph, emis_nodes: np.ndarray):
    """Best node path through the graph. emis_nodes is (T, N), already
    node-indexed. Returns (path (T,), score). Ties break toward the
    lowest-numbered source because arcs are sorted by (dst, src)."""
    t_total, n = emis_nodes.shape
    num_arcs = len(graph.arc_src)
    arc_index = np.arange(num_arcs)
    dp = np.full(n, LOG_ZERO)
    dp[graph.start_nodes] = 0.0
    dp = dp + emis_nodes[0]
    bp = np.full((t_total, n), -1, dtype=np.int64)
    for t in range(1, t_total):
        cand = dp[graph.arc_src] + graph.arc_logp
        best = np.full(n, LOG_ZERO)
        np.maximum.at(best, graph.arc_dst, cand)
        winner = np.full(n, num_arcs, dtype=np.int64)
        live = (cand == best[graph.arc_dst]) & (cand > LOG_ZERO)
        np.minimum.at(winner, graph.arc_dst[live], arc_index[live])
        ok = winner < num_arcs
        row = np.full(n, -1, dtype=np.int64)
        row[ok] = graph.arc_src[winner[ok]]
        bp[t] = row
        dp = np.where(ok, best, LOG_ZERO) + emis_nodes[t]
    finals = dp[graph.final_nodes]
    if not np.any(finals > LOG_ZERO):
        raise AlignmentError("no valid alignment path")
    end = int(graph.final_nodes[int(np.argmax(finals))])
    path = np.empty(t_total, dtype=np.int64)
    path[-1] = end
    for t in range(t_total - 1, 0, -1):
        path[t - 1] = bp[t, path[t]]
    return path, float(dp[end])


def _path_score(graph: _AlignGraph, emis_nodes: np.ndarray,
                path: np.ndarray) -> float:
    """Joint log-likelihood of a specific node path (for the uniform
    first-pass alignment, where no Viterbi ran)."""
    score = float(emis_nodes[np.arange(len(path)), path].sum())
    arc_map = {(int(s), int(d)): float(w) for s, d, w in
               zip(graph.arc_src, graph.arc_dst, graph.arc_logp)}
    for t in range(1, len(path)):
        score += arc_map[(int(path[t - 1]), int(path[t]))]
    return score


def _uniform_path(graph: _AlignGraph, model: AcousticModel,
                  t_total: int) -> np.ndarray:
    """Even split of frames over the linear node chain, used for the first
    pass after a flat start (every path scores equally there, so this is
    as good as any Viterbi path and far better behaved as an initializer).

    Boundary silences join the split when there is room; between-word
    silences never do.
    """
    n = len(graph.node_state)
    sps = model.states_per_phone
    sil_states = set(model.phone_states(model.silence_phone))
    mandatory = [i for i in range(sps, n - sps)
                 if graph.node_state[i] not in sil_states]
    with_boundary_sil = [*range(sps), *mandatory, *range(n - sps, n)]
    if t_total >= len(with_boundary_sil):
        nodes = with_boundary_sil
    elif t_total >= len(mandatory):
        nodes = mandatory
    else:
        raise AlignmentError(
            f"{t_total} frames < minimum path length {graph.min_frames}")
    bounds = np.round(np.linspace(0, t_total, len(nodes) + 1)).astype(int)
    path = np.empty(t_total, dtype=np.int64)
    for k, node in enumerate(nodes):
        path[bounds[k] : bounds[k + 1]] = node
    return path


def force_align(model: AcousticModel, features, transcript,
                lexicon: Lexicon) -> Alignment:
    """Viterbi assignment of frames to the transcript's state sequence."""
    frames = _frames_of(features)
    graph = _transcript_graph(model, lexicon, transcript.words)
    if frames.shape[0] < graph.min_frames:
        raise AlignmentError(
            f"{transcript.utterance_id}: {frames.shape[0]} frames < "
            f"minimum path length {graph.min_frames}")
    emis_nodes = emission_matrix(model, frames)[:, graph.node_state]
    path, score = _viterbi_nodes(graph, emis_nodes)
    return Alignment(transcript.utterance_id, graph.node_state[path], score)


# ---------------------------------------------------------------------------
# Viterbi-EM training
# ---------------------------------------------------------------------------

def _align_pass(model, features, transcripts, lexicon, uniform: bool):
    """Align all utterances; returns (node paths + graphs, total score,
    skipped count)."""
    aligned = []
    total = 0.0
    skipped = 0
    for utt_id in sorted(transcripts):
        frames = _frames_of(features[utt_id])
        graph = _transcript_graph(model, lexicon, transcripts[utt_id].words)
        if frames.shape[0] < graph.min_frames:
            log.warning("skipping %s: %d frames < min path %d",
                        utt_id, frames.shape[0], graph.min_frames)
            skipped += 1
            continue
        emis_nodes = emission_matrix(model, frames)[:, graph.node_state]
        if uniform:
            path = _uniform_path(graph, model, frames.shape[0])
            score = _path_score(graph, emis_nodes, path)
        else:
            path, score = _viterbi_nodes(graph, emis_nodes)
        aligned.append((frames, graph.node_state[path], path))
        total += score
    return aligned, total, skipped


def _reestimate(model: AcousticModel, aligned) -> AcousticModel:
    """ML update of GMMs (soft over components within a state) and
    transitions from hard alignments. Zero-occupancy states keep their
    previous parameters."""
    s_total = model.total_states
    frames_all = np.vstack([f for f, _, _ in aligned])
    states_all = np.concatenate([s for _, s, _ in aligned])
    self_count = np.zeros(s_total)
    next_count = np.zeros(s_total)
    for _, states, path in aligned:
        same = path[1:] == path[:-1]
        src_states = states[:-1]
        np.add.at(self_count, src_states[same], 1.0)
        np.add.at(next_count, src_states[~same], 1.0)

    new = model.copy()
    order = np.argsort(states_all, kind="stable")
    sorted_states = states_all[order]
    for s in range(s_total):
        lo, hi = np.searchsorted(sorted_states, [s, s + 1])
        if lo == hi:
            continue
        data = frames_all[order[lo:hi]]
        comp = (np.log(model.weights[s])[None, :]
                - 0.5 * (model.dim * _LOG_2PI
                         + np.sum(np.log(model.variances[s]), axis=1))[None, :]
                - 0.5 * np.sum((data[:, None, :] - model.means[s][None, :, :]) ** 2
                               / model.variances[s][None, :, :], axis=2))
        resp = np.exp(comp - _logsumexp(comp, axis=1, keepdims=True))
        counts = resp.sum(axis=0)                     # (M,)
        weights = counts / counts.sum()
        means = model.means[s].copy()
        variances = model.variances[s].copy()
        for m in range(len(counts)):
            if counts[m] < 1e-8:
                continue
            mu = resp[:, m] @ data / counts[m]
            var = resp[:, m] @ (data - mu) ** 2 / counts[m]
            means[m] = mu
            variances[m] = np.maximum(var, model.var_floor)
        new.weights[s] = weights
        new.means[s] = means
        new.variances[s] = variances

        events = self_count[s] + next_count[s]
        if events > 0:
            p_self = min(max(self_count[s] / events, TRANS_FLOOR), 1.0 - TRANS_FLOOR)
            new.transitions[s] = (p_self, 1.0 - p_self)
    new.flat = False
    return new


def _split_mixtures(model: AcousticModel, target: int) -> AcousticModel:
    """Grow toward the Gaussian budget: one split of the heaviest component
    per state and round, states in id order, stopping at the target."""
    new = model.copy()
    for s in range(new.total_states):
        if new.num_gaussians >= target:
            break
        w, mu, var = new.weights[s], new.means[s], new.variances[s]
        m = int(np.argmax(w))
        offset = 0.2 * np.sqrt(var[m])
        new.weights[s] = np.concatenate([w, [w[m] / 2.0]])
        new.weights[s][m] /= 2.0
        new.means[s] = np.vstack([mu, mu[m] + offset])
        new.means[s][m] -= offset
        new.variances[s] = np.vstack([var, var[m]])
    return new


def em_train(model: AcousticModel, features, transcripts, lexicon: Lexicon,
             iters: int, gaussian_target: int | None = None):
    """Viterbi-EM iterations with optional mixture ramp-up.

    Returns (model, history) where history holds one record per iteration:
    the total alignment log-likelihood under the pre-update model, the
    Gaussian count, and how many utterances were skipped as too short.
    """
    _check_vocabulary(transcripts, lexicon)
    history = []
    for it in range(iters):
        uniform = model.flat
        aligned, total, skipped = _align_pass(model, features, transcripts,
                                              lexicon, uniform)
        if not aligned:
            raise AlignmentError("every utterance was skipped; nothing to train on")
        model = _reestimate(model, aligned)
        if gaussian_target and model.num_gaussians < gaussian_target:
            model = _split_mixtures(model, gaussian_target)
        history.append({"iteration": it, "loglike": total,
                        "num_gaussians": model.num_gaussians,
                        "skipped": skipped, "uniform": uniform})
    return model, history


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

SERIAL_FORMAT = "silentspeech-gmm"
SERIAL_VERSION = 1


def save_acoustic_model(path, model: AcousticModel) -> None:
    doc = {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "phones": model.phones,
        "silence_phone": model.silence_phone,
        "states_per_phone": model.states_per_phone,
        "weights": [w.tolist() for w in model.weights],
        "means": [m.tolist() for m in model.means],
        "variances": [v.tolist() for v in model.variances],
        "transitions": model.transitions.tolist(),
        "var_floor": model.var_floor.tolist(),
        "flat": model.flat,
    }
    Path(path).write_text(json.dumps(doc))


def load_acoustic_model(path) -> AcousticModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"{path}: not a {SERIAL_FORMAT} file")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    return AcousticModel(
        list(doc["phones"]), doc["silence_phone"], int(doc["states_per_phone"]),
        [np.array(w) for w in doc["weights"]],
        [np.array(m) for m in doc["means"]],
        [np.array(v) for v in doc["variances"]],
        np.array(doc["transitions"]), np.array(doc["var_floor"]),
        bool(doc["flat"]),
    )


def write_alignments(path, alignments) -> None:
    """One line per utterance: "utt_id state state ..."."""
    with open(path, "w", encoding="utf-8") as fh:
        for ali in alignments:
            states = " ".join(str(int(s)) for s in ali.states)
            fh.write(f"{ali.utterance_id} {states}\n")


def read_alignments(path) -> dict[str, Alignment]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            out[parts[0]] = Alignment(parts[0], np.array([int(x) for x in parts[1:]]))
    return out

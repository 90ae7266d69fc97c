import math

import numpy as np
import pytest

from silentspeech.corpus import (
    SyntheticCorpusSpec,
    Transcript,
    make_demo_vocabulary,
    synthesize_utterances,
)
from silentspeech.dct_features import DctConfig, dct_frame_features
from silentspeech.gmm_hmm import (
    TRANS_FLOOR,
    AcousticModel,
    Alignment,
    AlignmentError,
    _transcript_graph,
    _viterbi_nodes,
    em_train,
    emission_matrix,
    flat_start,
    force_align,
    load_acoustic_model,
    read_alignments,
    save_acoustic_model,
    write_alignments,
)
from silentspeech.lexicon_lm import Lexicon

LEX = Lexicon({"AA": [("a",)], "BB": [("b", "a")]})


def hand_model(means_by_state, var=1.0, phones=("a", "b", "sil")):
    """Single-Gaussian 1-D model with chosen per-state means."""
    phones = sorted(phones)
    s = len(phones) * 3
    means = [np.array([[means_by_state.get(i, 0.0)]]) for i in range(s)]
    return AcousticModel(
        phones, "sil", 3,
        [np.ones(1) for _ in range(s)],
        means,
        [np.full((1, 1), var) for _ in range(s)],
        np.full((s, 2), 0.5), np.array([1e-6]), flat=False,
    )


def gaussian_mix_pdf(x, weights, means, variances):
    """Linear-domain diagonal GMM density, straight from the formula."""
    total = 0.0
    for w, mu, var in zip(weights, means, variances):
        quad = np.sum((x - mu) ** 2 / var)
        norm = np.prod(1.0 / np.sqrt(2.0 * np.pi * var))
        total += w * norm * math.exp(-0.5 * quad)
    return total


def corpus_features(num_utts=10, seed=5, k=4):
    """Tongue-image DCT features for a tiny synthetic training set."""
    words, lex = make_demo_vocabulary(num_words=5, num_phones=5, seed=0)
    spec = SyntheticCorpusSpec(seed=seed, vocabulary=words, lexicon=lex,
                               num_train_utts=num_utts, num_test_utts=1,
                               frames_per_phone_mean=4, image_size=(16, 16),
                               noise_sigma=0.1)
    cfg = DctConfig(resize_to=16, k_per_modality=k)
    feats, trans = {}, {}
    for split, tr, stacks in synthesize_utterances(spec):
        if split != "train":
            continue
        feats[tr.utterance_id] = np.stack(
            [dct_frame_features(img, cfg) for img in stacks["tongue"]])
        trans[tr.utterance_id] = tr
    return feats, trans, lex


# ---------------------------------------------------------------------------
# flat start
# ---------------------------------------------------------------------------

def test_flat_start_params_and_layout():
    rng = np.random.default_rng(0)
    feats = {"u1": rng.normal(size=(12, 3)), "u2": rng.normal(size=(9, 3))}
    trans = {"u1": Transcript("u1", ("AA",)), "u2": Transcript("u2", ("BB",))}
    model = flat_start(feats, trans, LEX)
    assert model.phones == ["a", "b", "sil"]
    assert model.total_states == 9
    assert model.flat
    all_frames = np.vstack([feats["u1"], feats["u2"]])
    for s in range(model.total_states):
        np.testing.assert_allclose(model.means[s][0], all_frames.mean(axis=0),
                                   atol=1e-12)
        np.testing.assert_allclose(model.variances[s][0], all_frames.var(axis=0),
                                   atol=1e-12)
        assert model.weights[s].tolist() == [1.0]
    assert np.all(model.transitions == 0.5)
    np.testing.assert_allclose(model.var_floor, 1e-4 * all_frames.var(axis=0))


def test_flat_start_rejects_oov_transcript():
    feats = {"u1": np.zeros((5, 2))}
    trans = {"u1": Transcript("u1", ("MISSING",))}
    with pytest.raises(ValueError, match="MISSING"):
        flat_start(feats, trans, LEX)


def test_state_indexing_helpers():
    model = hand_model({})
    assert model.state_index("a", 0) == 0
    assert model.state_index("b", 2) == 5
    assert model.phone_of_state(7) == "sil"
    assert model.phone_states("b") == [3, 4, 5]
    assert model.dim == 1


def test_model_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        AcousticModel(["a", "sil"], "sil", 1,
                      [np.array([0.4, 0.4])] * 2,
                      [np.zeros((2, 1))] * 2, [np.ones((2, 1))] * 2,
                      np.full((2, 2), 0.5), np.array([1e-6]))
    with pytest.raises(ValueError, match="transitions"):
        AcousticModel(["a", "sil"], "sil", 1,
                      [np.ones(1)] * 2, [np.zeros((1, 1))] * 2,
                      [np.ones((1, 1))] * 2, np.full((3, 2), 0.5),
                      np.array([1e-6]))


# ---------------------------------------------------------------------------
# emission likelihoods
# ---------------------------------------------------------------------------

def test_loglike_standard_normal_closed_form():
    model = hand_model({0: 0.0})
    assert abs(model.dim * -0.5 * math.log(2 * math.pi)
               - emission_matrix(model, np.zeros((1, 1)))[0, 0]) < 1e-12


def test_loglike_duplicate_components_equal_single():
    base = hand_model({0: 1.5})
    dup = base.copy()
    dup.weights[0] = np.array([0.5, 0.5])
    dup.means[0] = np.array([[1.5], [1.5]])
    dup.variances[0] = np.array([[1.0], [1.0]])
    x = np.array([[0.3]])
    np.testing.assert_allclose(emission_matrix(base, x)[0, 0],
                               emission_matrix(dup, x)[0, 0], atol=1e-12)


def test_loglike_three_component_linear_oracle():
    model = hand_model({})
    model.weights[2] = np.array([0.5, 0.3, 0.2])
    model.means[2] = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]])
    model.variances[2] = np.array([[1.0, 2.0], [0.5, 1.5], [2.0, 0.3]])
    for s in range(model.total_states):
        model.means[s] = np.hstack([model.means[s],
                                    model.means[s]]) if model.means[s].shape[1] == 1 else model.means[s]
        model.variances[s] = np.hstack([model.variances[s],
                                        model.variances[s]]) if model.variances[s].shape[1] == 1 else model.variances[s]
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = rng.normal(size=2)
        expected = math.log(gaussian_mix_pdf(x, model.weights[2],
                                             model.means[2], model.variances[2]))
        got = emission_matrix(model, x[None, :])[0, 2]
        assert abs(got - expected) < 1e-9


def test_emission_matrix_dim_mismatch():
    model = hand_model({})
    with pytest.raises(ValueError, match="dim"):
        emission_matrix(model, np.zeros((4, 3)))


# ---------------------------------------------------------------------------
# forced alignment
# ---------------------------------------------------------------------------

def test_force_align_minimum_length_hits_word_states():
    # T equals the word's state count, so boundary silences must be skipped
    model = hand_model({0: 0.0, 1: 10.0, 2: 20.0}, var=1.0)
    frames = np.array([[0.0], [10.0], [20.0]])
    ali = force_align(model, frames, Transcript("u", ("AA",)), LEX)
    assert ali.states.tolist() == [0, 1, 2]
    assert ali.phone_labels(model) == ["a", "a", "a"]


def test_force_align_prefers_silence_when_it_fits():
    sil = model_states = hand_model(
        {0: 0.0, 1: 10.0, 2: 20.0, 6: -50.0, 7: -60.0, 8: -70.0})
    frames = np.array([[-50.0], [-60.0], [-70.0], [0.0], [10.0], [20.0]])
    ali = force_align(sil, frames, Transcript("u", ("AA",)), LEX)
    assert ali.phone_labels(sil) == ["sil"] * 3 + ["a"] * 3
    assert ali.states.tolist() == [6, 7, 8, 0, 1, 2]


def test_force_align_too_short_raises():
    model = hand_model({})
    with pytest.raises(AlignmentError, match="frames"):
        force_align(model, np.zeros((2, 1)), Transcript("u", ("BB",)), LEX)


def test_force_align_score_is_path_loglike():
    model = hand_model({0: 0.0, 1: 10.0, 2: 20.0})
    frames = np.array([[0.0], [0.5], [10.0], [20.0]])
    ali = force_align(model, frames, Transcript("u", ("AA",)), LEX)
    emis = emission_matrix(model, frames)
    logt = np.log(model.transitions)
    expected = emis[0, ali.states[0]]
    for t in range(1, len(frames)):
        src, dst = ali.states[t - 1], ali.states[t]
        expected += logt[src, 0] if src == dst else logt[src, 1]
        expected += emis[t, dst]
    assert abs(ali.score - expected) < 1e-9


def enumerate_paths(graph, emis_nodes):
    """All start-to-final node paths of the right length, by DFS."""
    t_total = emis_nodes.shape[0]
    succ = {}
    for s, d, w in zip(graph.arc_src, graph.arc_dst, graph.arc_logp):
        succ.setdefault(int(s), []).append((int(d), float(w)))
    best_score, best_path = -np.inf, None
    stack = [([int(s)], float(emis_nodes[0, int(s)])) for s in graph.start_nodes]
    finals = set(int(f) for f in graph.final_nodes)
    while stack:
        path, score = stack.pop()
        if len(path) == t_total:
            if path[-1] in finals and score > best_score:
                best_score, best_path = score, path
            continue
        for nxt, w in succ.get(path[-1], []):
            stack.append((path + [nxt],
                          score + w + float(emis_nodes[len(path), nxt])))
    return best_path, best_score


def test_force_align_matches_exhaustive_enumeration():
    rng = np.random.default_rng(17)
    model = hand_model({i: rng.normal() for i in range(9)})
    for trial in range(20):
        words = ("AA",) if trial % 2 == 0 else ("BB",)
        graph = _transcript_graph(model, LEX, words)
        t_total = rng.integers(graph.min_frames, graph.min_frames + 3)
        frames = rng.normal(size=(t_total, 1))
        emis_nodes = emission_matrix(model, frames)[:, graph.node_state]
        path, score = _viterbi_nodes(graph, emis_nodes)
        ref_path, ref_score = enumerate_paths(graph, emis_nodes)
        assert abs(score - ref_score) < 1e-9
        assert ref_path is not None
        # scores tie only on identical paths here (continuous emissions)
        assert path.tolist() == ref_path


def test_alignment_phone_sequence_spells_transcript():
    feats, trans, lex = corpus_features(num_utts=4)
    model = flat_start(feats, trans, lex)
    model, _ = em_train(model, feats, trans, lex, iters=2)
    for utt_id, tr in trans.items():
        ali = force_align(model, feats[utt_id], tr, lex)
        assert ali.num_frames == feats[utt_id].shape[0]
        labels = ali.phone_labels(model)
        # a phone occupation always exits from its last state, so a position
        # drop marks re-entry even when the same phone repeats back to back
        pos = ali.states % model.states_per_phone
        collapsed = [labels[0]]
        for t in range(1, len(labels)):
            if labels[t] != labels[t - 1] or pos[t] < pos[t - 1]:
                collapsed.append(labels[t])
        spine = [p for p in collapsed if p != "sil"]
        expected = [p for w in tr.words for p in lex.pronunciations(w)[0]]
        assert spine == expected
        # states advance monotonically inside each phone occupation
        for a, b in zip(ali.states[:-1], ali.states[1:]):
            if model.phone_of_state(a) == model.phone_of_state(b):
                assert b in (a, a + 1) or b % 3 == 0


# ---------------------------------------------------------------------------
# EM re-estimation
# ---------------------------------------------------------------------------

def test_em_single_iteration_closed_form_updates():
    model = hand_model({0: 0.0, 1: 10.0, 2: 20.0, 6: 1e3, 7: 1e3, 8: 1e3})
    frames = np.array([[0.0], [2.0], [10.0], [8.0], [20.0], [22.0]])
    feats = {"u": frames}
    trans = {"u": Transcript("u", ("AA",))}
    new, history = em_train(model, feats, trans, LEX, iters=1)
    assert history[0]["skipped"] == 0
    assert not history[0]["uniform"]
    # assignment is 2 frames per word state; {0,2} -> mean 1, var 1
    np.testing.assert_allclose(new.means[0], [[1.0]], atol=1e-12)
    np.testing.assert_allclose(new.variances[0], [[1.0]], atol=1e-12)
    np.testing.assert_allclose(new.means[1], [[9.0]], atol=1e-12)
    np.testing.assert_allclose(new.means[2], [[21.0]], atol=1e-12)
    # one self-loop and one advance per nonfinal state
    np.testing.assert_allclose(new.transitions[0], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(new.transitions[1], [0.5, 0.5], atol=1e-12)
    # the last state only saw a self-loop; floor keeps the advance alive
    np.testing.assert_allclose(new.transitions[2],
                               [1.0 - TRANS_FLOOR, TRANS_FLOOR], atol=1e-15)
    # untouched silence states keep their parameters
    np.testing.assert_array_equal(new.means[6], model.means[6])
    assert not new.flat


def test_em_constant_data_floors_variance():
    model = hand_model({0: 5.0, 1: 5.0, 2: 5.0, 6: 1e3, 7: 1e3, 8: 1e3})
    frames = np.full((6, 1), 5.0)
    new, _ = em_train(model, {"u": frames}, {"u": Transcript("u", ("AA",))},
                      LEX, iters=1)
    for s in (0, 1, 2):
        np.testing.assert_allclose(new.means[s], [[5.0]], atol=1e-12)
        np.testing.assert_allclose(new.variances[s], [[1e-6]], atol=1e-18)


def test_em_invariants_on_corpus():
    feats, trans, lex = corpus_features()
    model = flat_start(feats, trans, lex)
    model, history = em_train(model, feats, trans, lex, iters=5)
    for s in range(model.total_states):
        assert abs(model.weights[s].sum() - 1.0) < 1e-9
        assert np.all(model.variances[s] >= model.var_floor - 1e-15)
    assert np.allclose(model.transitions.sum(axis=1), 1.0, atol=1e-12)
    lls = [h["loglike"] for h in history]
    assert all(b >= a - 1e-6 for a, b in zip(lls, lls[1:]))
    assert history[0]["uniform"] and not any(h["uniform"] for h in history[1:])


def test_em_mixture_ramp_and_determinism():
    feats, trans, lex = corpus_features(num_utts=6)
    target = 2 * len(sorted(lex.phone_set)) * 3
    model1 = flat_start(feats, trans, lex)
    model1, hist1 = em_train(model1, feats, trans, lex, iters=4,
                             gaussian_target=target)
    model2 = flat_start(feats, trans, lex)
    model2, hist2 = em_train(model2, feats, trans, lex, iters=4,
                             gaussian_target=target)
    assert model1.num_gaussians <= target
    assert model1.num_gaussians > model1.total_states
    counts = [h["num_gaussians"] for h in hist1]
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert hist1 == hist2
    for s in range(model1.total_states):
        np.testing.assert_array_equal(model1.means[s], model2.means[s])
        assert abs(model1.weights[s].sum() - 1.0) < 1e-9


def test_em_skips_short_utterances():
    feats, trans, lex = corpus_features(num_utts=4)
    feats["stub"] = np.zeros((1, feats[next(iter(feats))].shape[1]))
    trans["stub"] = Transcript("stub", (trans[next(iter(trans))].words[0],))
    model = flat_start(feats, trans, lex)
    model, history = em_train(model, feats, trans, lex, iters=1)
    assert history[0]["skipped"] == 1


def test_em_all_skipped_raises():
    model = hand_model({})
    feats = {"u": np.zeros((1, 1))}
    trans = {"u": Transcript("u", ("BB",))}
    with pytest.raises(AlignmentError, match="skipped"):
        em_train(model, feats, trans, LEX, iters=1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_model_save_load_round_trip(tmp_path):
    feats, trans, lex = corpus_features(num_utts=3)
    model = flat_start(feats, trans, lex)
    model, _ = em_train(model, feats, trans, lex, iters=2,
                        gaussian_target=2 * model.total_states)
    path = tmp_path / "model.json"
    save_acoustic_model(path, model)
    loaded = load_acoustic_model(path)
    assert loaded.phones == model.phones
    assert loaded.states_per_phone == model.states_per_phone
    assert loaded.flat == model.flat
    for s in range(model.total_states):
        np.testing.assert_array_equal(loaded.weights[s], model.weights[s])
        np.testing.assert_array_equal(loaded.means[s], model.means[s])
        np.testing.assert_array_equal(loaded.variances[s], model.variances[s])
    np.testing.assert_array_equal(loaded.transitions, model.transitions)
    frames = feats[next(iter(feats))]
    np.testing.assert_allclose(emission_matrix(loaded, frames),
                               emission_matrix(model, frames), atol=0)


def test_model_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.json"
    path.write_text('{"format": "something-else", "version": 1}')
    with pytest.raises(ValueError, match="not a"):
        load_acoustic_model(path)


def test_alignments_file_round_trip(tmp_path):
    alis = [Alignment("u1", np.array([0, 0, 1, 2])),
            Alignment("u2", np.array([3, 4, 5]))]
    path = tmp_path / "ali.txt"
    write_alignments(path, alis)
    loaded = read_alignments(path)
    assert set(loaded) == {"u1", "u2"}
    np.testing.assert_array_equal(loaded["u1"].states, [0, 0, 1, 2])
    np.testing.assert_array_equal(loaded["u2"].states, [3, 4, 5])

"""Hybrid DNN-HMM acoustic scoring.

A feed-forward network (sigmoid hidden layers, softmax output over all HMM
states) is trained on frame targets taken from GMM forced alignments:
layerwise CD-1 pretraining of an RBM stack, then minibatch SGD on per-frame
cross-entropy with a 90/10 utterance-level train/validation split, keeping
the weights from the best-validation epoch. At decode time the network's
log-posteriors are converted to pseudo-log-likelihoods by subtracting
add-one-smoothed log state priors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rbm as rbm_mod
from .rbm import sigmoid

SERIAL_FORMAT = "silentspeech-dnn"
SERIAL_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class DnnTrainConfig:
    hidden_dims: tuple[int, ...] = (1024, 1024, 1024, 1024, 1024, 1024)
    train_hidden_layers: int = 4     # pretrained layers kept for fine-tuning
    pretrain_epochs: int = 3
    epochs: int = 15
    minibatch: int = 128
    ce_lr: float = 0.1
    pretrain_lr_gb: float = 0.01
    pretrain_lr_bb: float = 0.4
    val_fraction: float = 0.1
    context_window: int = 0          # frames spliced on each side
    seed: int = 0

    def __post_init__(self):
        if min(self.pretrain_epochs, self.epochs, self.minibatch,
               *self.hidden_dims) <= 0:
            raise ValueError("counts and dims must be positive")
        if not 0 < self.train_hidden_layers <= len(self.hidden_dims):
            raise ValueError("train_hidden_layers outside the pretrained stack")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")


@dataclass
class DnnModel:
    input_dim: int                   # after context splicing
    hidden_weights: list[np.ndarray]
    hidden_biases: list[np.ndarray]
    out_weight: np.ndarray           # (last_hidden, num_states)
    out_bias: np.ndarray
    context_window: int = 0
    log_priors: np.ndarray | None = None

    def __post_init__(self):
        dim = self.input_dim
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            if w.shape[0] != dim or b.shape != (w.shape[1],):
                raise ValueError("hidden layer dims do not chain")
            dim = w.shape[1]
        if self.out_weight.shape[0] != dim:
            raise ValueError("output layer does not chain")
        if self.log_priors is not None and self.log_priors.shape != (self.num_states,):
            raise ValueError("priors length != num_states")

    @property
    def num_states(self) -> int:
        return self.out_weight.shape[1]

    def copy(self) -> "DnnModel":
        return DnnModel(self.input_dim,
                        [w.copy() for w in self.hidden_weights],
                        [b.copy() for b in self.hidden_biases],
                        self.out_weight.copy(), self.out_bias.copy(),
                        self.context_window,
                        None if self.log_priors is None else self.log_priors.copy())


def splice(features: np.ndarray, window: int) -> np.ndarray:
    """Concatenate each frame with `window` neighbors on each side,
    replicating edges, so D becomes D*(2*window+1)."""
    x = np.asarray(features, dtype=np.float64)
    if window == 0:
        return x
    t = x.shape[0]
    idx = np.arange(t)
    cols = [x[np.clip(idx + off, 0, t - 1)] for off in range(-window, window + 1)]
    return np.hstack(cols)


def _frames_of(features) -> np.ndarray:
    return np.asarray(getattr(features, "frames", features), dtype=np.float64)


def _hidden_forward(model: DnnModel, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    for w, b in zip(model.hidden_weights, model.hidden_biases):
        acts.append(sigmoid(acts[-1] @ w + b))
    return acts


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def log_posteriors(model: DnnModel, features) -> np.ndarray:
    """(T, num_states) log softmax outputs; splices context as configured."""
    x = splice(_frames_of(features), model.context_window)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"spliced dim {x.shape[1]} != model input {model.input_dim}")
    hidden = _hidden_forward(model, x)[-1]
    return _log_softmax(hidden @ model.out_weight + model.out_bias)


def pretrain_dbn(features, cfg: DnnTrainConfig) -> list[rbm_mod.Rbm]:
    """Layerwise CD-1 over all training frames (already normalized);
    Gaussian-Bernoulli first, Bernoulli-Bernoulli above."""
    if hasattr(features, "items"):
        data = np.vstack([splice(_frames_of(v), cfg.context_window)
                          for _, v in sorted(features.items())])
    else:
        data = splice(_frames_of(features), cfg.context_window)
    rng = np.random.default_rng(cfg.seed)
    return rbm_mod.pretrain_stack(data, cfg.hidden_dims, cfg.pretrain_epochs,
                                  cfg.minibatch, cfg.pretrain_lr_gb,
                                  cfg.pretrain_lr_bb, rng)


def init_from_dbn(rbms: list[rbm_mod.Rbm], num_states: int,
                  cfg: DnnTrainConfig) -> DnnModel:
    """Keep the first train_hidden_layers pretrained layers and stack a
    fresh softmax layer on top."""
    kept = rbms[: cfg.train_hidden_layers]
    rng = np.random.default_rng(cfg.seed + 1)
    out_w = 0.01 * rng.standard_normal((kept[-1].num_hidden, num_states))
    return DnnModel(kept[0].num_visible,
                    [r.weights.copy() for r in kept],
                    [r.hbias.copy() for r in kept],
                    out_w, np.zeros(num_states), cfg.context_window)


def init_random(input_dim: int, hidden_dims, num_states: int,
                rng: np.random.Generator, context_window: int = 0) -> DnnModel:
    dims = [input_dim, *hidden_dims]
    ws = [0.01 * rng.standard_normal((dims[i], dims[i + 1]))
          for i in range(len(dims) - 1)]
    bs = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    out_w = 0.01 * rng.standard_normal((dims[-1], num_states))
    return DnnModel(input_dim, ws, bs, out_w, np.zeros(num_states), context_window)


def gradients(model: DnnModel, x: np.ndarray, targets: np.ndarray):
    """Summed cross-entropy loss and gradients for one minibatch."""
    acts = _hidden_forward(model, x)
    logits = acts[-1] @ model.out_weight + model.out_bias
    logp = _log_softmax(logits)
    n = x.shape[0]
    loss = -float(logp[np.arange(n), targets].sum())
    delta = np.exp(logp)
    delta[np.arange(n), targets] -= 1.0
    g_out_w = acts[-1].T @ delta
    g_out_b = delta.sum(axis=0)
    g_ws = [np.empty(0)] * len(model.hidden_weights)
    g_bs = [np.empty(0)] * len(model.hidden_biases)
    back = delta @ model.out_weight.T
    for l in range(len(model.hidden_weights) - 1, -1, -1):
        delta = back * acts[l + 1] * (1.0 - acts[l + 1])
        g_ws[l] = acts[l].T @ delta
        g_bs[l] = delta.sum(axis=0)
        if l > 0:
            back = delta @ model.hidden_weights[l].T
    return loss, g_ws, g_bs, g_out_w, g_out_b


def _frame_accuracy(model: DnnModel, x: np.ndarray, y: np.ndarray) -> float:
    hidden = _hidden_forward(model, x)[-1]
    logits = hidden @ model.out_weight + model.out_bias
    return float(np.mean(np.argmax(logits, axis=1) == y))


def train_ce(model: DnnModel, features, alignments, cfg: DnnTrainConfig):
    """Frame cross-entropy SGD.

    `features` and `alignments` are utterance-id maps; the utterances are
    split 90/10 into train/validation by the config seed. Returns (best
    model by validation frame accuracy, per-epoch curve records).
    """
    utts = sorted(features)
    missing = [u for u in utts if u not in alignments]
    if missing:
        raise ValueError(f"no alignment for utterances: {missing[:5]}")
    rng = np.random.default_rng(cfg.seed + 2)
    order = rng.permutation(len(utts))
    n_val = max(1, int(round(cfg.val_fraction * len(utts))))
    val_utts = {utts[i] for i in order[:n_val]}

    def stack(selected):
        xs, ys = [], []
        for u in selected:
            x = splice(_frames_of(features[u]), cfg.context_window)
            y = np.asarray(alignments[u].states, dtype=np.int64)
            if x.shape[0] != y.shape[0]:
                raise ValueError(f"{u}: {x.shape[0]} frames vs {y.shape[0]} targets")
            xs.append(x)
            ys.append(y)
        return np.vstack(xs), np.concatenate(ys)

    x_train, y_train = stack([u for u in utts if u not in val_utts])
    x_val, y_val = stack(sorted(val_utts))
    if y_train.max() >= model.num_states or y_train.min() < 0:
        raise ValueError("alignment state id out of range for this model")

    model = model.copy()
    best = model.copy()
    best_val = -1.0
    curves = []
    n = x_train.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.minibatch):
            sel = perm[start : start + cfg.minibatch]
            loss, g_ws, g_bs, g_ow, g_ob = gradients(model, x_train[sel], y_train[sel])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            total += loss
            scale = cfg.ce_lr / len(sel)
            for l in range(len(model.hidden_weights)):
                model.hidden_weights[l] -= scale * g_ws[l]
                model.hidden_biases[l] -= scale * g_bs[l]
            model.out_weight -= scale * g_ow
            model.out_bias -= scale * g_ob
        train_acc = _frame_accuracy(model, x_train, y_train)
        val_acc = _frame_accuracy(model, x_val, y_val)
        curves.append({"epoch": epoch, "train_loss": total / n,
                       "train_acc": train_acc, "val_acc": val_acc})
        if val_acc > best_val:
            best_val = val_acc
            best = model.copy()
    best.log_priors = model.log_priors
    return best, curves


def estimate_priors(alignments, total_states: int) -> np.ndarray:
    """Add-one-smoothed log state priors from alignment frame counts."""
    if not alignments:
        raise ValueError("no alignments")
    counts = np.zeros(total_states)
    for ali in (alignments.values() if hasattr(alignments, "values") else alignments):
        np.add.at(counts, np.asarray(ali.states, dtype=np.int64), 1.0)
    return np.log(counts + 1.0) - np.log(counts.sum() + total_states)


def scaled_loglikes(model: DnnModel, features) -> np.ndarray:
    """Pseudo-log-likelihood rows: log posterior minus log prior."""
    if model.log_priors is None:
        raise ValueError("model has no state priors; run estimate_priors first")
    return log_posteriors(model, features) - model.log_priors[None, :]


def save_dnn(path, model: DnnModel) -> None:
    doc = {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "input_dim": model.input_dim,
        "hidden_weights": [w.tolist() for w in model.hidden_weights],
        "hidden_biases": [b.tolist() for b in model.hidden_biases],
        "out_weight": model.out_weight.tolist(),
        "out_bias": model.out_bias.tolist(),
        "context_window": model.context_window,
        "log_priors": None if model.log_priors is None else model.log_priors.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_dnn(path) -> DnnModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"{path}: not a {SERIAL_FORMAT} file")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    priors = doc["log_priors"]
    return DnnModel(int(doc["input_dim"]),
                    [np.array(w) for w in doc["hidden_weights"]],
                    [np.array(b) for b in doc["hidden_biases"]],
                    np.array(doc["out_weight"]), np.array(doc["out_bias"]),
                    int(doc["context_window"]),
                    None if priors is None else np.array(priors))

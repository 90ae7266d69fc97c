"""Deep autoencoder feature extraction.

A J-1000-500-250-K bottleneck network (sigmoid units throughout) is
pretrained as a stack of RBMs and then fine-tuned end to end by minimizing
the cross-entropy image reconstruction error

    L(x, x') = -sum_k [ x_k log x'_k + (1 - x_k) log(1 - x'_k) ]

The decoder mirrors the encoder with tied weights: layer l of the decoder
uses the transpose of encoder weight W_l and its own bias. The tie is
structural (only one copy of each matrix exists), so it cannot drift.
Code-layer activations are the K-dimensional features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rbm as rbm_mod
from .dct_features import FeatureSequence
from .imaging import crop, resize_bicubic
from .rbm import sigmoid

LOSS_CLIP = 1e-7

SERIAL_FORMAT = "silentspeech-dae"
SERIAL_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class DaeModel:
    """Encoder weights and both bias sets; decoder weights are implicit
    transposes."""

    layer_dims: list[int]            # [J, h1, ..., K]
    weights: list[np.ndarray]        # W_l: (layer_dims[l], layer_dims[l+1])
    enc_biases: list[np.ndarray]     # b_l: (layer_dims[l+1],)
    dec_biases: list[np.ndarray]     # b'_l: (layer_dims[l],)

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2:
            raise ValueError("need at least input and code dims")
        if len(self.weights) != len(dims) - 1:
            raise ValueError("one weight matrix per layer pair required")
        for l, w in enumerate(self.weights):
            if w.shape != (dims[l], dims[l + 1]):
                raise ValueError(f"weight {l} has shape {w.shape}, want "
                                 f"{(dims[l], dims[l + 1])}")
            if self.enc_biases[l].shape != (dims[l + 1],):
                raise ValueError(f"encoder bias {l} shape mismatch")
            if self.dec_biases[l].shape != (dims[l],):
                raise ValueError(f"decoder bias {l} shape mismatch")
        for arr in (*self.weights, *self.enc_biases, *self.dec_biases):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite model parameter")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def code_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "DaeModel":
        return DaeModel(list(self.layer_dims),
                        [w.copy() for w in self.weights],
                        [b.copy() for b in self.enc_biases],
                        [b.copy() for b in self.dec_biases])


@dataclass
class DaeTrainConfig:
    hidden_dims: tuple[int, ...] = (1000, 500, 250)
    code_dim: int = 30
    rbm_epochs: int = 5
    finetune_epochs: int = 20
    minibatch: int = 32
    rbm_lr_gb: float = 0.01
    rbm_lr_bb: float = 0.4
    finetune_lr: float = 0.05
    seed: int = 0
    train_fraction: float = 1.0     # random subset used for training

    def __post_init__(self):
        if min(self.rbm_epochs, self.finetune_epochs, self.minibatch,
               self.code_dim, *self.hidden_dims) <= 0:
            raise ValueError("counts and dims must be positive")
        for lr in (self.rbm_lr_gb, self.rbm_lr_bb):
            if not 0.0 < lr <= 1.0:
                raise ValueError(f"learning rate {lr} outside (0, 1]")
        # zero is allowed here: it freezes the model, which is useful for
        # checking that the update step is the only thing that moves weights
        if not 0.0 <= self.finetune_lr <= 1.0:
            raise ValueError(f"learning rate {self.finetune_lr} outside [0, 1]")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")

    def dims_for(self, input_dim: int) -> list[int]:
        return [input_dim, *self.hidden_dims, self.code_dim]


def init_random(layer_dims, rng: np.random.Generator,
                weight_scale: float = 0.01) -> DaeModel:
    dims = list(layer_dims)
    weights = [weight_scale * rng.standard_normal((dims[l], dims[l + 1]))
               for l in range(len(dims) - 1)]
    enc = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
    dec = [np.zeros(dims[l]) for l in range(len(dims) - 1)]
    return DaeModel(dims, weights, enc, dec)


def encode(model: DaeModel, image: np.ndarray) -> np.ndarray:
    """Forward pass through the encoder; accepts one J-vector or (T, J) rows."""
    a = np.asarray(image, dtype=np.float64)
    if a.shape[-1] != model.input_dim:
        raise ValueError(f"input dim {a.shape[-1]} != model J {model.input_dim}")
    for w, b in zip(model.weights, model.enc_biases):
        a = sigmoid(a @ w + b)
    return a


def decode(model: DaeModel, code: np.ndarray) -> np.ndarray:
    """Forward pass through the tied-weight decoder."""
    a = np.asarray(code, dtype=np.float64)
    if a.shape[-1] != model.code_dim:
        raise ValueError(f"code dim {a.shape[-1]} != model K {model.code_dim}")
    for w, b in zip(reversed(model.weights), reversed(model.dec_biases)):
        a = sigmoid(a @ w.T + b)
    return a


def reconstruct(model: DaeModel, image: np.ndarray) -> np.ndarray:
    return decode(model, encode(model, image))


def reconstruction_loss(x: np.ndarray, x_prime: np.ndarray):
    """Cross-entropy reconstruction error, summed over pixel dimensions.

    x' is clipped to [1e-7, 1 - 1e-7] so the loss stays finite at the
    saturated ends. Returns a float for single vectors, a (B,) array for
    batches.
    """
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(x_prime, dtype=np.float64)
    if x.shape != xp.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xp.shape}")
    xp = np.clip(xp, LOSS_CLIP, 1.0 - LOSS_CLIP)
    loss = -(x * np.log(xp) + (1.0 - x) * np.log(1.0 - xp)).sum(axis=-1)
    return float(loss) if loss.ndim == 0 else loss


def _forward_all(model: DaeModel, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer: [x, a_1, ..., code, d_{L-1}, ..., x']."""
    acts = [x]
    for w, b in zip(model.weights, model.enc_biases):
        acts.append(sigmoid(acts[-1] @ w + b))
    for w, b in zip(reversed(model.weights), reversed(model.dec_biases)):
        acts.append(sigmoid(acts[-1] @ w.T + b))
    return acts


def gradients(model: DaeModel, batch: np.ndarray):
    """Summed-over-batch gradients of the reconstruction loss.

    Each weight matrix appears twice in the unrolled network (once in the
    encoder, once transposed in the decoder); its gradient accumulates
    both contributions. Returns (loss_sum, grad_weights, grad_enc_biases,
    grad_dec_biases).
    """
    x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    n_layers = len(model.weights)
    acts = _forward_all(model, x)
    loss = float(np.sum(reconstruction_loss(x, acts[-1])))

    g_w = [np.zeros_like(w) for w in model.weights]
    g_enc = [np.zeros_like(b) for b in model.enc_biases]
    g_dec = [np.zeros_like(b) for b in model.dec_biases]

    # Sigmoid + cross-entropy collapse at the output: the clip never binds
    # where the gradient matters, so d(loss)/d(pre-activation) = x' - x.
    delta = acts[-1] - x
    # Decoder half: virtual layer k maps acts[k] -> acts[k+1] via W_l^T.
    for k in range(2 * n_layers - 1, n_layers - 1, -1):
        l = 2 * n_layers - 1 - k
        g_w[l] += delta.T @ acts[k]
        g_dec[l] += delta.sum(axis=0)
        back = delta @ model.weights[l]
        delta = back * acts[k] * (1.0 - acts[k])
    # Encoder half: layer k maps acts[k] -> acts[k+1] via W_k.
    for k in range(n_layers - 1, -1, -1):
        g_w[k] += acts[k].T @ delta
        g_enc[k] += delta.sum(axis=0)
        if k > 0:
            back = delta @ model.weights[k].T
            delta = back * acts[k] * (1.0 - acts[k])
    return loss, g_w, g_enc, g_dec


def pretrain_rbm_stack(data: np.ndarray, cfg: DaeTrainConfig) -> list[rbm_mod.Rbm]:
    """CD-1 pretraining of each layer in turn.

    The Gaussian-Bernoulli first layer sees per-dimension standardized
    data; later Bernoulli layers see hidden probabilities. Deterministic
    given cfg.seed.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise ValueError("empty training data")
    rng = np.random.default_rng(cfg.seed)
    mean = data.mean(axis=0)
    std = np.sqrt(data.var(axis=0) + 1e-8)
    return rbm_mod.pretrain_stack((data - mean) / std,
                                  (*cfg.hidden_dims, cfg.code_dim),
                                  cfg.rbm_epochs, cfg.minibatch,
                                  cfg.rbm_lr_gb, cfg.rbm_lr_bb, rng)


def init_from_rbms(input_dim: int, rbms: list[rbm_mod.Rbm]) -> DaeModel:
    """Unroll an RBM stack into an autoencoder: encoder weights and biases
    come from each RBM, decoder biases from the RBM visible biases."""
    dims = [input_dim] + [r.num_hidden for r in rbms]
    if rbms[0].num_visible != input_dim:
        raise ValueError("first RBM does not match input dim")
    return DaeModel(dims,
                    [r.weights.copy() for r in rbms],
                    [r.hbias.copy() for r in rbms],
                    [r.vbias.copy() for r in rbms])


def finetune(model: DaeModel, data: np.ndarray, cfg: DaeTrainConfig):
    """Plain minibatch SGD on the reconstruction loss.

    Returns (trained model, per-epoch mean loss list). The input model is
    not modified. Raises TrainingDiverged on a non-finite loss.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    model = model.copy()
    rng = np.random.default_rng(cfg.seed + 1)
    if cfg.train_fraction < 1.0:
        keep = max(1, int(round(cfg.train_fraction * data.shape[0])))
        data = data[rng.permutation(data.shape[0])[:keep]]
    n = data.shape[0]
    curve = []
    for epoch in range(cfg.finetune_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.minibatch):
            batch = data[order[start : start + cfg.minibatch]]
            loss, g_w, g_enc, g_dec = gradients(model, batch)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, sample {start}")
            total += loss
            scale = cfg.finetune_lr / batch.shape[0]
            for l in range(len(model.weights)):
                model.weights[l] -= scale * g_w[l]
                model.enc_biases[l] -= scale * g_enc[l]
                model.dec_biases[l] -= scale * g_dec[l]
        curve.append(total / n)
    return model, curve


def train_dae(data: np.ndarray, cfg: DaeTrainConfig):
    """Pretrain + finetune in one call. Returns (model, loss curve)."""
    rbms = pretrain_rbm_stack(data, cfg)
    model = init_from_rbms(np.asarray(data).shape[1], rbms)
    return finetune(model, data, cfg)


def extract_dae_features(model: DaeModel, sequence, roi=None,
                         resize: tuple[int, int] | None = None) -> FeatureSequence:
    """Per-frame code-layer features for a FrameSequence.

    Frames are optionally cropped and resized, then flattened row-major;
    the flat length must equal the model's input dim J.
    """
    frames = sequence.frames
    if roi is not None:
        frames = np.stack([crop(f, roi) for f in frames])
    if resize is not None:
        w, h = resize
        frames = np.stack([resize_bicubic(f, w, h) for f in frames])
    flat = frames.reshape(frames.shape[0], -1)
    if flat.shape[1] != model.input_dim:
        raise ValueError(
            f"{sequence.utterance_id}: frames flatten to {flat.shape[1]} "
            f"pixels, model expects {model.input_dim}")
    return FeatureSequence(sequence.utterance_id, encode(model, flat),
                           provenance="dae")


def save_dae(path, model: DaeModel) -> None:
    doc = {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "layer_dims": list(model.layer_dims),
        "weights": [w.tolist() for w in model.weights],
        "enc_biases": [b.tolist() for b in model.enc_biases],
        "dec_biases": [b.tolist() for b in model.dec_biases],
    }
    Path(path).write_text(json.dumps(doc))


def load_dae(path) -> DaeModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"{path}: not a {SERIAL_FORMAT} file")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"{path}: unsupported version {doc.get('version')}")
    return DaeModel(list(doc["layer_dims"]),
                    [np.array(w, dtype=np.float64) for w in doc["weights"]],
                    [np.array(b, dtype=np.float64) for b in doc["enc_biases"]],
                    [np.array(b, dtype=np.float64) for b in doc["dec_biases"]])

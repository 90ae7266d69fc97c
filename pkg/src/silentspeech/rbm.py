"""Restricted Boltzmann machines trained with one-step contrastive divergence.

Shared by the autoencoder and the frame classifier, both of which stack
RBMs for layerwise pretraining. Two visible unit types are supported:

* "bernoulli": visible units in [0, 1], reconstructed through a sigmoid.
* "gaussian": linear visible units with unit variance; inputs are expected
  to be standardized per dimension before training.

Hidden units are always Bernoulli. A CD-1 step samples the hidden layer
once (the only stochastic draw), reconstructs the visible layer as a
mean-field value without sampling, and uses hidden probabilities for both
the positive and negative statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Rbm:
    weights: np.ndarray          # (num_visible, num_hidden)
    vbias: np.ndarray            # (num_visible,)
    hbias: np.ndarray            # (num_hidden,)
    visible_type: str = "bernoulli"

    def __post_init__(self):
        if self.visible_type not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown visible_type {self.visible_type!r}")
        v, h = self.weights.shape
        if self.vbias.shape != (v,) or self.hbias.shape != (h,):
            raise ValueError("bias shapes do not match weight matrix")

    @property
    def num_visible(self) -> int:
        return self.weights.shape[0]

    @property
    def num_hidden(self) -> int:
        return self.weights.shape[1]


def init_rbm(num_visible: int, num_hidden: int, rng: np.random.Generator,
             visible_type: str = "bernoulli", weight_scale: float = 0.01) -> Rbm:
    """Small random weights, zero biases."""
    w = weight_scale * rng.standard_normal((num_visible, num_hidden))
    return Rbm(w, np.zeros(num_visible), np.zeros(num_hidden), visible_type)


def hidden_probs(rbm: Rbm, visible: np.ndarray) -> np.ndarray:
    return sigmoid(visible @ rbm.weights + rbm.hbias)


def _reconstruct(rbm: Rbm, hidden: np.ndarray) -> np.ndarray:
    mean = hidden @ rbm.weights.T + rbm.vbias
    if rbm.visible_type == "gaussian":
        return mean
    return sigmoid(mean)


def cd1_update(rbm: Rbm, batch: np.ndarray, lr: float,
               rng: np.random.Generator) -> float:
    """One CD-1 parameter update in place; returns mean squared
    reconstruction error of the batch.

    Exactly one random draw (the hidden sample) is consumed per call, so a
    caller can replay the update from the rng state.
    """
    if batch.ndim != 2 or batch.shape[1] != rbm.num_visible:
        raise ValueError("batch must be (B, num_visible)")
    b = batch.shape[0]
    h0 = hidden_probs(rbm, batch)
    h0_sample = (rng.random(h0.shape) < h0).astype(np.float64)
    v1 = _reconstruct(rbm, h0_sample)
    h1 = hidden_probs(rbm, v1)
    rbm.weights += lr * (batch.T @ h0 - v1.T @ h1) / b
    rbm.vbias += lr * (batch - v1).mean(axis=0)
    rbm.hbias += lr * (h0 - h1).mean(axis=0)
    return float(np.mean((batch - v1) ** 2))


def train_rbm(rbm: Rbm, data: np.ndarray, epochs: int, batch_size: int,
              lr: float, rng: np.random.Generator) -> list[float]:
    """Minibatch CD-1 epochs; returns per-epoch mean reconstruction error."""
    if data.shape[0] == 0:
        raise ValueError("empty training data")
    errors = []
    n = data.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        batch_errs = []
        for start in range(0, n, batch_size):
            batch = data[order[start : start + batch_size]]
            batch_errs.append(cd1_update(rbm, batch, lr, rng))
        errors.append(float(np.mean(batch_errs)))
    return errors


def pretrain_stack(data: np.ndarray, hidden_dims, epochs: int, batch_size: int,
                   lr_gaussian: float, lr_bernoulli: float,
                   rng: np.random.Generator) -> list[Rbm]:
    """Greedy layerwise pretraining.

    The first RBM is Gaussian-Bernoulli (callers standardize `data`); later
    layers are Bernoulli-Bernoulli and consume the previous layer's hidden
    probabilities, never samples.
    """
    if data.shape[0] == 0:
        raise ValueError("empty training data")
    rbms = []
    layer_input = np.asarray(data, dtype=np.float64)
    for i, width in enumerate(hidden_dims):
        vtype = "gaussian" if i == 0 else "bernoulli"
        lr = lr_gaussian if i == 0 else lr_bernoulli
        rbm = init_rbm(layer_input.shape[1], width, rng, vtype)
        train_rbm(rbm, layer_input, epochs, batch_size, lr, rng)
        rbms.append(rbm)
        layer_input = hidden_probs(rbm, layer_input)
    return rbms

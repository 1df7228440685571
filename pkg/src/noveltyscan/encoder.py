"""Small contrastive MLP: encoder trunk, projection head, classifier head.

Pure-numpy forward/backward with SGD + momentum and a cosine-annealed
learning rate. Deterministic given the config seed.
"""

import copy
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .datagen import LabeledDataset
from .errors import NumericalOverflowError
from .losses import combined_loss

CHECKPOINT_MAGIC = b"NVEN"
CHECKPOINT_VERSION = 1


@dataclass
class ContrastiveConfig:
    temperature: float = 0.01
    lambda_ce: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 1000
    epochs: int = 50
    lr_floor: float = 1e-5
    momentum: float = 0.9
    clip_norm: float = 5.0   # global gradient-norm clip; 0 disables
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.lambda_ce < 0:
            raise ValueError("lambda_ce must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError("bad learning_rate/epochs")


def _he_uniform_layers(dims, rng):
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return layers


def _mlp_forward(layers, x):
    """ReLU on hidden layers, linear output. Returns (out, cache)."""
    acts = [x]
    h = x
    for k, (w, b) in enumerate(layers):
        h = h @ w + b
        if k < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def _mlp_backward(layers, acts, grad_out):
    """Backprop through _mlp_forward. Returns (grad_x, param_grads)."""
    grads = [None] * len(layers)
    g = grad_out
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        if k < len(layers) - 1:
            g = g * (acts[k + 1] > 0)
        grads[k] = (acts[k].T @ g, g.sum(axis=0))
        g = g @ w.T
    return g, grads


@dataclass
class MlpEncoder:
    """Weights of the trunk plus projection and classifier heads."""

    encoder_layers: list
    projector_layers: list
    classifier_layers: list

    @classmethod
    def initialize(cls, in_dim, n_classes, embed_dim=4, hidden=48,
                   depth=4, proj_dim=4, proj_hidden=32, clf_hidden=32,
                   seed=0):
        rng = np.random.default_rng(seed)
        enc = _he_uniform_layers([in_dim] + [hidden] * depth + [embed_dim],
                                 rng)
        proj = _he_uniform_layers([embed_dim, proj_hidden, proj_dim], rng)
        clf = _he_uniform_layers([embed_dim, clf_hidden, n_classes], rng)
        return cls(enc, proj, clf)

    @property
    def input_dim(self):
        return self.encoder_layers[0][0].shape[0]

    @property
    def embed_dim(self):
        return self.encoder_layers[-1][0].shape[1]

    @property
    def n_classes(self):
        return self.classifier_layers[-1][0].shape[1]

    def copy(self):
        return copy.deepcopy(self)


def forward(encoder, batch):
    """Deterministic forward pass: (embeddings, projections, logits).

    Projections are raw head outputs; normalization happens inside the
    contrastive losses.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[1] != encoder.input_dim:
        raise ValueError(
            f"batch has {x.shape[1]} columns, encoder expects "
            f"{encoder.input_dim}")
    h, _ = _mlp_forward(encoder.encoder_layers, x)
    z, _ = _mlp_forward(encoder.projector_layers, h)
    logits, _ = _mlp_forward(encoder.classifier_layers, h)
    return h, z, logits


def embed_dataset(encoder, data):
    """Apply the trunk only; labels pass through untouched."""
    h, _, _ = forward(encoder, data.points)
    return LabeledDataset(h, data.labels.copy())


def _batch_loss_and_grads(encoder, x, y, config, want_grads=True):
    h, enc_acts = _mlp_forward(encoder.encoder_layers, x)
    z, proj_acts = _mlp_forward(encoder.projector_layers, h)
    logits, clf_acts = _mlp_forward(encoder.classifier_layers, h)
    loss, l_sup, l_ce, g_proj, g_logit = combined_loss(
        z, logits, y, config.temperature, config.lambda_ce)
    if not want_grads:
        return loss, l_sup, l_ce, None
    gh_proj, proj_grads = _mlp_backward(encoder.projector_layers,
                                        proj_acts, g_proj)
    gh_clf, clf_grads = _mlp_backward(encoder.classifier_layers,
                                      clf_acts, g_logit)
    _, enc_grads = _mlp_backward(encoder.encoder_layers, enc_acts,
                                 gh_proj + gh_clf)
    return loss, l_sup, l_ce, (enc_grads, proj_grads, clf_grads)


def _eval_loss(encoder, data, config):
    """Average combined loss over deterministic batch_size chunks."""
    n = len(data)
    losses, sups, ces, weights = [], [], [], []
    for start in range(0, n, config.batch_size):
        x = data.points[start:start + config.batch_size]
        y = data.labels[start:start + config.batch_size]
        if x.shape[0] < 2:
            continue
        loss, l_sup, l_ce, _ = _batch_loss_and_grads(
            encoder, x, y, config, want_grads=False)
        losses.append(loss)
        sups.append(l_sup)
        ces.append(l_ce)
        weights.append(x.shape[0])
    w = np.asarray(weights, dtype=float)
    w /= w.sum()
    return (float(np.dot(losses, w)), float(np.dot(sups, w)),
            float(np.dot(ces, w)))


def cosine_lr(epoch, config):
    """Cosine-annealed learning rate for a 0-based epoch index."""
    if config.epochs <= 1:
        return config.learning_rate
    frac = epoch / (config.epochs - 1)
    return (config.lr_floor + 0.5 * (config.learning_rate - config.lr_floor)
            * (1.0 + np.cos(np.pi * frac)))


def train(encoder, train_data, val_data, config):
    """Mini-batch SGD with momentum on the combined contrastive loss.

    Returns (trained encoder, per-epoch log). The input encoder is not
    modified; zero epochs return an identical copy.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("datasets must be non-empty")
    enc = encoder.copy()
    rng = np.random.default_rng(config.seed)
    groups = [enc.encoder_layers, enc.projector_layers, enc.classifier_layers]
    velocity = [[(np.zeros_like(w), np.zeros_like(b)) for w, b in g]
                for g in groups]
    log = []
    n = len(train_data)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        perm = rng.permutation(n)
        epoch_losses, epoch_sups, epoch_ces = [], [], []
        for bidx, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start:start + config.batch_size]
            if idx.size < 2:
                continue
            x = train_data.points[idx]
            y = train_data.labels[idx]
            loss, l_sup, l_ce, grads = _batch_loss_and_grads(
                enc, x, y, config)
            if not np.isfinite(loss):
                raise NumericalOverflowError(
                    f"non-finite loss at epoch {epoch}, batch {bidx}")
            # the contrastive loss spikes to O(1e3) gradients on early
            # batches at small temperatures; a global-norm clip keeps
            # the momentum update from blowing up the trunk
            if config.clip_norm > 0:
                gsq = sum(float((gw * gw).sum() + (gb * gb).sum())
                          for group in grads for gw, gb in group)
                scale = min(1.0, config.clip_norm / np.sqrt(gsq))
            else:
                scale = 1.0
            for g_idx, (layers, layer_grads) in enumerate(zip(groups, grads)):
                for l_idx, ((w, b), (gw, gb)) in enumerate(
                        zip(layers, layer_grads)):
                    vw, vb = velocity[g_idx][l_idx]
                    vw = config.momentum * vw - lr * scale * gw
                    vb = config.momentum * vb - lr * scale * gb
                    velocity[g_idx][l_idx] = (vw, vb)
                    layers[l_idx] = (w + vw, b + vb)
            epoch_losses.append(loss)
            epoch_sups.append(l_sup)
            epoch_ces.append(l_ce)
        val_loss, val_sup, val_ce = _eval_loss(enc, val_data, config)
        log.append({
            "epoch": epoch,
            "lr": float(lr),
            "train_loss": float(np.mean(epoch_losses)),
            "val_loss": val_loss,
            "supcon": float(np.mean(epoch_sups)),
            "ce": float(np.mean(epoch_ces)),
        })
    return enc, log


def write_training_log(log, path):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry) + "\n")


def _write_section(fh, layers):
    fh.write(struct.pack("<I", len(layers)))
    for w, b in layers:
        rows, cols = w.shape
        fh.write(struct.pack("<II", rows, cols))
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_section(fh):
    (count,) = struct.unpack("<I", fh.read(4))
    layers = []
    for _ in range(count):
        rows, cols = struct.unpack("<II", fh.read(8))
        w = np.frombuffer(fh.read(8 * rows * cols),
                          dtype="<f8").reshape(rows, cols).copy()
        b = np.frombuffer(fh.read(8 * cols), dtype="<f8").copy()
        layers.append((w, b))
    return layers


def save_checkpoint(encoder, path):
    """Binary checkpoint: magic, version, then the three layer sections."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        for section in (encoder.encoder_layers, encoder.projector_layers,
                        encoder.classifier_layers):
            _write_section(fh, section)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        enc = _read_section(fh)
        proj = _read_section(fh)
        clf = _read_section(fh)
    return MlpEncoder(enc, proj, clf)

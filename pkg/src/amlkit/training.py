"""Contrastive objective and the training loop with loss-curve emission.

The loss pulls each anchor toward one similar transaction and pushes it away
from N feature-distant ones, with similarities divided by a temperature and
combined through a max-stabilized log-sum-exp.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, backward
from .data import Dataset, PairConfig, PairSampler
from .exceptions import NumericError
from .models import ABAD, EncoderModel, embedding_node, reconstruction_node
from .optim import OptimizerState, optimizer_step
from .rng import SeededRng, derive_stream

LossCurve = list


@dataclass
class TrainingConfig:
    """Objective and schedule knobs; the seed pins every random draw."""

    temperature: float = 0.1
    negatives: int = 8
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adaptive"
    abad_objective: str = "joint"  # "joint" or "reconstruction"
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.negatives < 1:
            raise ValueError("need at least one negative per anchor")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if self.abad_objective not in ("joint", "reconstruction"):
            raise ValueError(f"unknown autoencoder objective '{self.abad_objective}'")


def cosine_similarity(a, b) -> float:
    """(a.b) / (|a||b|); undefined (and an error) for zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cosine similarity needs equal shapes, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def contrastive_loss_node(za: Node, zp: Node, zn: Node, temperature: float) -> Node:
    """Batched loss over anchors [B,e], positives [B,e], negatives [B,N,e].

    Returns a scalar node: the mean over anchors of
    -log( exp(s+/t) / (exp(s+/t) + sum_k exp(s-_k/t)) ).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    b, e = za.value.shape
    n = zn.value.shape[1]
    norm_a = ad.l2_norm(za, axis=1)                       # [B]
    norm_p = ad.l2_norm(zp, axis=1)                       # [B]
    norm_n = ad.l2_norm(zn, axis=2)                       # [B,N]
    if (np.any(norm_a.value == 0.0) or np.any(norm_p.value == 0.0)
            or np.any(norm_n.value == 0.0)):
        raise ValueError("cosine similarity is undefined for a zero vector")

    pos_dot = ad.reduce_sum(ad.mul(za, zp), axis=1)       # [B]
    pos_sim = ad.div(pos_dot, ad.mul(norm_a, norm_p))     # [B]
    za3 = ad.reshape(za, (b, 1, e))
    neg_dot = ad.reduce_sum(ad.mul(za3, zn), axis=2)      # [B,N]
    denom = ad.mul(ad.reshape(norm_a, (b, 1)), norm_n)    # [B,N]
    neg_sim = ad.div(neg_dot, denom)                      # [B,N]

    logits = ad.mul(ad.concat([ad.reshape(pos_sim, (b, 1)), neg_sim], axis=1),
                    1.0 / temperature)                    # [B,1+N]
    # Max subtraction keeps exp in range; the constant shift cancels in the loss.
    shift = np.max(logits.value, axis=1, keepdims=True)
    shifted = ad.sub(logits, ad.constant(shift))
    lse = ad.add(ad.log(ad.reduce_sum(ad.exp(shifted), axis=1)),
                 ad.constant(shift[:, 0]))                # [B]
    per_anchor = ad.sub(lse, ad.reshape(ad.narrow(logits, 1, 0, 1), (b,)))
    return ad.reduce_mean(per_anchor)


def info_nce_loss(anchor, positive, negatives, temperature: float = 0.1) -> float:
    """Loss for one anchor, its positive, and a [N, e] stack of negatives."""
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.ndim == 1:
        negatives = negatives[None, :]
    if negatives.shape[0] < 1:
        raise ValueError("need at least one negative")
    za = ad.constant(anchor[None, :])
    zp = ad.constant(positive[None, :])
    zn = ad.constant(negatives[None, :, :])
    return contrastive_loss_node(za, zp, zn, temperature).item()


def _mse_node(predicted: Node, target: np.ndarray) -> Node:
    diff = ad.sub(predicted, ad.constant(target))
    return ad.reduce_mean(ad.mul(diff, diff))


def train(model: EncoderModel, dataset: Dataset, pair_config: PairConfig,
          config: TrainingConfig, rng: SeededRng | None = None) -> LossCurve:
    """Optimize the model in place; returns the per-epoch mean loss curve.

    Expects an already-standardized dataset. Fresh anchor/positive/negative
    batches are drawn every epoch; the curve is deterministic for a fixed
    seed. Aborts with step diagnostics if the loss leaves the finite range.
    """
    curve: LossCurve = []
    if config.epochs == 0:
        return curve
    rng = rng if rng is not None else derive_stream(config.seed, f"train:{model.architecture}")
    sampler = PairSampler(dataset, knn_k=pair_config.knn_k, negatives=config.negatives,
                          neg_percentile=pair_config.neg_percentile)
    state = OptimizerState(mode=config.optimizer, learning_rate=config.learning_rate)
    params = model.parameters()
    n = len(dataset)
    feats = dataset.features
    n_neg = config.negatives

    for epoch in range(1, config.epochs + 1):
        batch = sampler.sample(rng)
        order = rng.permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, config.batch_size), start=1):
            rows = order[start:start + config.batch_size]
            b = len(rows)
            anchors = batch.anchors[rows]
            positives = batch.positives[rows]
            negatives = batch.negatives[rows]
            idx = np.concatenate([anchors, positives, negatives.reshape(-1)])
            x = feats[idx]

            if model.architecture == ABAD:
                z_all, recon = reconstruction_node(model, x)
            else:
                z_all = embedding_node(model, x)
            za = ad.narrow(z_all, 0, 0, b)
            zp = ad.narrow(z_all, 0, b, b)
            zn = ad.reshape(ad.narrow(z_all, 0, 2 * b, b * n_neg), (b, n_neg, model.e))
            loss = contrastive_loss_node(za, zp, zn, config.temperature)
            if model.architecture == ABAD:
                recon_loss = _mse_node(recon, x)
                if config.abad_objective == "reconstruction":
                    loss = recon_loss
                else:
                    loss = ad.add(loss, recon_loss)

            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, step {step} "
                                   f"({model.architecture})")
            backward(loss, params)
            optimizer_step(state, params, [p.grad for p in params])
            total += value * b
        curve.append(total / n)
    return curve


def write_loss_curve(path, curve: LossCurve) -> None:
    """CSV export `epoch,mean_loss`, epochs numbered from 1."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(curve, start=1):
            writer.writerow([epoch, repr(float(value))])

"""Softmax cross-entropy, embedding distance and the contrastive loss."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidLabel, LabelOutOfRange, ShapeMismatch


@dataclass(frozen=True)
class ContrastiveConfig:
    margin: float = 1.0
    lam: float = 1e-4

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def softmax_xent(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.shape[0] if labels.ndim else 0} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1
    return float(loss), grad / n


def embedding_distance(e1, e2):
    """Row-wise Euclidean distance between two (B, d) embedding batches."""
    if e1.shape != e2.shape:
        raise ShapeMismatch(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    diff = e1 - e2
    return np.sqrt((diff * diff).sum(axis=1))


def contrastive_terms(distances, y, margin):
    """Per-pair contrastive term: 0.5*D^2 for genuine (y=1), 0.5*max(0, M-D)^2 for impostor (y=0)."""
    y = np.asarray(y)
    hinge = np.maximum(0.0, margin - distances)
    return y * 0.5 * distances ** 2 + (1 - y) * 0.5 * hinge ** 2


def l2_penalty(weights, lam):
    """``lam * sum ||W||^2`` over the given weight tensors and its gradient per tensor."""
    value = lam * sum(float(np.sum(np.square(w, dtype=np.float64))) for w in weights)
    return value, [2.0 * lam * w for w in weights]


def contrastive_loss(e1, e2, y, cfg=ContrastiveConfig(), weights=()):
    """Mean contrastive loss over N pairs plus the weight penalty.

    Returns ``(loss, grad_e1, grad_e2)``. Gradients of the penalty belong to
    the weights, not the embeddings, and come from :func:`l2_penalty`. At
    D = 0 the impostor subgradient is taken as 0.
    """
    y = np.asarray(y)
    if y.shape != (e1.shape[0],):
        raise ShapeMismatch(f"{y.shape} labels for {e1.shape[0]} pairs")
    if not np.all((y == 0) | (y == 1)):
        raise InvalidLabel("pair labels must be 0 (impostor) or 1 (genuine)")
    n = e1.shape[0]
    d = embedding_distance(e1, e2)
    terms = contrastive_terms(d, y, cfg.margin)
    penalty, _ = l2_penalty(weights, cfg.lam)
    loss = float(terms.mean()) + penalty if n else penalty

    diff = e1 - e2
    hinge = np.maximum(0.0, cfg.margin - d)
    safe_d = np.where(d > 0, d, 1.0)
    impostor_scale = np.where(d > 0, -hinge / safe_d, 0.0)
    scale = (y + (1 - y) * impostor_scale) / max(n, 1)
    g1 = (scale[:, None] * diff).astype(e1.dtype, copy=False)
    return loss, g1, -g1

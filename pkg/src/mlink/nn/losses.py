"""Losses computed from pre-activation outputs, each returning (loss, dlogits)."""
import enum

import numpy as np

from .layers import log_softmax, sigmoid, softmax


class LossKind(str, enum.Enum):
    CCE = "categorical-cross-entropy"
    BCE = "binary-cross-entropy"
    MSE = "mean-squared-error"
    SEQ_CE = "sequence-token-cross-entropy"

    @property
    def activation(self):
        return {
            LossKind.CCE: "softmax",
            LossKind.BCE: "sigmoid",
            LossKind.MSE: "linear",
            LossKind.SEQ_CE: "softmax",
        }[self]


def categorical_cross_entropy(logits, target):
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -np.sum(target * logp) / n
    grad = (softmax(logits) * target.sum(axis=-1, keepdims=True) - target) / n
    return float(loss), grad


def binary_cross_entropy(logits, target):
    # softplus(z) - y*z, written to stay finite for large |z|
    elem = np.maximum(logits, 0.0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
    count = logits.size
    return float(elem.sum() / count), (sigmoid(logits) - target) / count


def mean_squared_error(out, target):
    diff = out - target
    count = out.size
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def sequence_cross_entropy(logits, tokens, mask):
    """Token cross-entropy averaged over unmasked positions.

    ``logits`` is (N, T, V), ``tokens`` (N, T) integer targets, ``mask`` (N, T).
    """
    total = mask.sum()
    if total == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, tokens[..., None], axis=-1)[..., 0]
    loss = -np.sum(picked * mask) / total
    grad = softmax(logits)
    np.put_along_axis(
        grad, tokens[..., None], np.take_along_axis(grad, tokens[..., None], axis=-1) - 1.0, axis=-1
    )
    grad *= (mask / total)[..., None]
    return float(loss), grad


def vector_loss(kind, logits, target):
    if kind is LossKind.CCE:
        return categorical_cross_entropy(logits, target)
    if kind is LossKind.BCE:
        return binary_cross_entropy(logits, target)
    if kind is LossKind.MSE:
        return mean_squared_error(logits, target)
    raise ValueError(f"{kind} is not a vector loss")


def per_sample_vector_loss(kind, logits, target):
    """Unreduced loss per row, used by the online loss predictor."""
    if kind is LossKind.CCE:
        return -np.sum(target * log_softmax(logits), axis=-1)
    if kind is LossKind.BCE:
        elem = np.maximum(logits, 0.0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
        return elem.mean(axis=-1)
    if kind is LossKind.MSE:
        return np.mean((logits - target) ** 2, axis=-1)
    raise ValueError(f"{kind} is not a vector loss")

"""Classification losses and the three adversarial-training objectives."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .model import Params, forward
from .tensor import Tensor


def one_hot(y, k):
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), np.asarray(y, dtype=np.int64)] = 1.0
    return out


def cross_entropy(logits: Tensor, y, reduction="mean") -> Tensor:
    n, k = logits.shape
    picked = T.sum(T.mul(Tensor(one_hot(y, k)), T.log_softmax(logits)))
    return T.scale(picked, -1.0 / n if reduction == "mean" else -1.0)


def kl_divergence(clean_logits: Tensor, adv_logits: Tensor, reduction="mean") -> Tensor:
    """KL(softmax(clean) || softmax(adv)), summed over classes.

    Gradients flow through both arguments unless the caller detaches one.
    """
    n = clean_logits.shape[0]
    log_p = T.log_softmax(clean_logits)
    log_q = T.log_softmax(adv_logits)
    total = T.sum(T.mul(T.exp(log_p), T.sub(log_p, log_q)))
    return T.scale(total, 1.0 / n) if reduction == "mean" else total


def trades_terms(params: Params, x_clean, x_adv, y, beta):
    """(CE term, beta-weighted KL term) of the TRADES objective."""
    clean_logits = forward(params, x_clean)
    adv_logits = forward(params, x_adv)
    ce = cross_entropy(clean_logits, y)
    kl = T.scale(kl_divergence(clean_logits, adv_logits), beta)
    return ce, kl


def trades_loss(params: Params, x_clean, x_adv, y, beta) -> Tensor:
    ce, kl = trades_terms(params, x_clean, x_adv, y, beta)
    return T.add(ce, kl)


def modified_trades_loss(params: Params, x_clean, x_adv, y, beta) -> Tensor:
    # Same outer objective; only the caller's choice of x_adv (label-based PGD) differs.
    return trades_loss(params, x_clean, x_adv, y, beta)


def pgd_at_loss(params: Params, x_adv, y) -> Tensor:
    return cross_entropy(forward(params, x_adv), y)


def loss_terms(mode, params, x_clean, x_adv, y, beta):
    """Split the active objective into (CE-like term, KL term or None)."""
    if mode == "pgd_at":
        return pgd_at_loss(params, x_adv, y), None
    return trades_terms(params, x_clean, x_adv, y, beta)


def full_loss(mode, params, x_clean, x_adv, y, beta) -> Tensor:
    if mode == "pgd_at":
        return pgd_at_loss(params, x_adv, y)
    if mode == "modified_trades":
        return modified_trades_loss(params, x_clean, x_adv, y, beta)
    return trades_loss(params, x_clean, x_adv, y, beta)

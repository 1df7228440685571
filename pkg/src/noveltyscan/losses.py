"""Contrastive and classification losses with analytic gradients.

All losses return (scalar loss, gradient w.r.t. their direct input);
backpropagation through the network itself lives in encoder.py.
"""

import numpy as np

from .errors import DegenerateBatchError

_NORM_EPS = 1e-12


def _normalize_rows(z):
    """Unit rows plus the pieces needed for the normalization Jacobian."""
    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), _NORM_EPS)
    return z / norms, norms


def _grad_through_normalization(z_hat, norms, grad_hat):
    """Pull a gradient w.r.t. unit rows back to the raw rows."""
    radial = np.sum(grad_hat * z_hat, axis=1, keepdims=True)
    return (grad_hat - z_hat * radial) / norms


def supcon_loss(projections, labels, temperature):
    """Supervised contrastive loss over all same-class pairs in a batch.

    Cosine similarities, temperature-scaled; the denominator for each
    anchor runs over every other batch member. Anchors whose class has
    no other member are skipped; a batch where every anchor is skipped
    raises DegenerateBatchError.
    """
    z = np.asarray(projections, dtype=float)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise ValueError("batch must have at least 2 rows")
    if temperature <= 0:
        raise ValueError("temperature must be positive")

    z_hat, norms = _normalize_rows(z)
    sims = (z_hat @ z_hat.T) / temperature

    pos_mask = (labels[:, None] == labels[None, :])
    np.fill_diagonal(pos_mask, False)
    off_diag = ~np.eye(n, dtype=bool)
    n_pos = pos_mask.sum(axis=1)
    active = n_pos > 0
    if not np.any(active):
        raise DegenerateBatchError("no anchor has a positive pair")

    # log-sum-exp over j != i, max-subtracted
    neg_inf = -np.inf
    masked = np.where(off_diag, sims, neg_inf)
    m = masked.max(axis=1, keepdims=True)
    exp_shift = np.where(off_diag, np.exp(masked - m), 0.0)
    lse = m[:, 0] + np.log(exp_shift.sum(axis=1))

    per_anchor = np.zeros(n)
    per_anchor[active] = (
        lse[active]
        - (sims * pos_mask).sum(axis=1)[active] / n_pos[active]
    )
    loss = float(per_anchor.sum())

    # d loss / d sims
    softmax = exp_shift / exp_shift.sum(axis=1, keepdims=True)
    g_sims = np.zeros_like(sims)
    g_sims[active] = (softmax[active]
                      - pos_mask[active] / n_pos[active, None])

    grad_hat = (g_sims @ z_hat + g_sims.T @ z_hat) / temperature
    grad = _grad_through_normalization(z_hat, norms, grad_hat)
    return loss, grad


def simclr_loss(projections, temperature):
    """Paired-view contrastive loss.

    Rows are interleaved as (z_0, z~_0, z_1, z~_1, ...); each first-of-
    pair row anchors its augmented partner, and the denominator runs
    over all other rows in the batch.
    """
    z = np.asarray(projections, dtype=float)
    if z.shape[0] % 2 != 0:
        raise ValueError("paired batch must have an even row count")
    n_pairs = z.shape[0] // 2
    if n_pairs < 2:
        raise ValueError("need at least 2 pairs")
    if temperature <= 0:
        raise ValueError("temperature must be positive")

    n = z.shape[0]
    z_hat, norms = _normalize_rows(z)
    sims = (z_hat @ z_hat.T) / temperature

    anchors = np.arange(0, n, 2)
    partners = anchors + 1
    off_diag = ~np.eye(n, dtype=bool)
    masked = np.where(off_diag, sims, -np.inf)
    m = masked[anchors].max(axis=1, keepdims=True)
    exp_shift = np.where(off_diag[anchors],
                         np.exp(masked[anchors] - m), 0.0)
    lse = m[:, 0] + np.log(exp_shift.sum(axis=1))
    loss = float(np.sum(lse - sims[anchors, partners]))

    softmax = exp_shift / exp_shift.sum(axis=1, keepdims=True)
    g_sims = np.zeros_like(sims)
    g_sims[anchors] = softmax
    g_sims[anchors, partners] -= 1.0

    grad_hat = (g_sims @ z_hat + g_sims.T @ z_hat) / temperature
    grad = _grad_through_normalization(z_hat, norms, grad_hat)
    return loss, grad


def ce_loss(logits, labels):
    """Mean softmax cross-entropy, log-sum-exp stabilized."""
    x = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n, n_classes = x.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels out of range for logit width")
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    se = e.sum(axis=1, keepdims=True)
    log_probs = (x - m) - np.log(se)
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = e / se
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def combined_loss(projections, logits, labels, temperature, lambda_ce):
    """SupCon plus lambda_ce-weighted cross-entropy.

    Returns (loss, grad w.r.t. projections, grad w.r.t. logits).
    """
    l_sup, g_proj = supcon_loss(projections, labels, temperature)
    if lambda_ce > 0:
        l_ce, g_logit = ce_loss(logits, labels)
    else:
        l_ce, g_logit = 0.0, np.zeros_like(np.asarray(logits, dtype=float))
    return (l_sup + lambda_ce * l_ce, l_sup, l_ce,
            g_proj, lambda_ce * g_logit)

"""Pure-numpy encoder and EL2N kernels (reference path and fallback)."""

import numpy as np

# floor on per-token variance; only reached by degenerate all-equal activations
VAR_FLOOR = 1e-300


def encoder_forward(emb, w, b, tokens, mask):
    """Embedding lookup -> tanh MLP -> layer norm (no affine, no epsilon).

    Returns ``(a, h, inv_std)``: tanh activations, normalized hidden states
    (zero on padding) and per-token ``1 / std``.
    """
    x = emb[tokens]
    a = np.tanh(x @ w + b)
    mu = a.mean(axis=-1, keepdims=True)
    c = a - mu
    var = np.maximum((c * c).mean(axis=-1), VAR_FLOOR)
    inv_std = 1.0 / np.sqrt(var)
    inv_std = inv_std * mask
    h = c * inv_std[..., None]
    a = a * mask[..., None]
    return a, h, inv_std


def encoder_backward(emb, w, tokens, mask, a, h, inv_std, dh):
    """Gradients of the encoder parameters given ``dL/dh``."""
    g = dh * mask[..., None]
    gm = g.mean(axis=-1, keepdims=True)
    ghm = (g * h).mean(axis=-1, keepdims=True)
    da = inv_std[..., None] * (g - gm - h * ghm)
    dz = da * (1.0 - a * a)
    dz = dz * mask[..., None]
    x = emb[tokens]
    d_w = np.einsum("bmi,bmj->ij", x, dz)
    d_b = dz.sum(axis=(0, 1))
    dx = dz @ w.T
    d_emb = np.zeros_like(emb)
    np.add.at(d_emb, tokens[mask], dx[mask])
    return d_emb, d_w, d_b


def el2n_components(intent_probs, intents, slot_probs, slots, mask):
    """Per-example intent and slot EL2N norms; padding contributes nothing."""
    n = len(intents)
    e = intent_probs.copy()
    e[np.arange(n), intents] -= 1.0
    chi_i = np.sqrt((e * e).sum(axis=1))
    d = slot_probs.copy()
    bi, mi = np.nonzero(np.ones(slots.shape, dtype=bool))
    d[bi, mi, slots.ravel()] -= 1.0
    sq = (d * d).sum(axis=-1) * mask
    chi_s = np.sqrt(sq.sum(axis=1))
    return chi_i, chi_s

"""Pure-numpy hot kernels. The compiled extension mirrors this exact API;
both operate on contiguous float32 or float64 arrays and must agree within
floating-point tolerance.
"""
import numpy as np


def _sigmoid(x):
    # tanh-based form avoids exp overflow for large negative inputs
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell_fwd(x, h, wx, wh, bx, bh):
    """Gated recurrent unit step.

    x: (B, Din) input, h: (B, H) state, wx: (Din, 3H), wh: (H, 3H),
    bx, bh: (3H,). Gate layout along the last axis is [reset, update,
    candidate]. Returns (new_state, cache) with cache needed for backward.
    """
    H = h.shape[1]
    gi = x @ wx + bx
    gh = h @ wh + bh
    r = _sigmoid(gi[:, :H] + gh[:, :H])
    z = _sigmoid(gi[:, H : 2 * H] + gh[:, H : 2 * H])
    gh_n = gh[:, 2 * H :]
    n = np.tanh(gi[:, 2 * H :] + r * gh_n)
    out = (1.0 - z) * n + z * h
    return out, (x, h, r, z, n, gh_n)


def gru_cell_bwd(cache, wx, wh, grad_out):
    """Gradients of gru_cell_fwd w.r.t. every input; grad_out is (B, H)."""
    x, h, r, z, n, gh_n = cache
    dz = grad_out * (h - n)
    dn = grad_out * (1.0 - z)
    dh = grad_out * z
    dpre_n = dn * (1.0 - n * n)
    dgh_n = dpre_n * r
    dr = dpre_n * gh_n
    dpre_r = dr * r * (1.0 - r)
    dpre_z = dz * z * (1.0 - z)
    dgi = np.concatenate([dpre_r, dpre_z, dpre_n], axis=1)
    dgh = np.concatenate([dpre_r, dpre_z, dgh_n], axis=1)
    dx = dgi @ wx.T
    dwx = x.T @ dgi
    dbx = dgi.sum(axis=0)
    dh = dh + dgh @ wh.T
    dwh = h.T @ dgh
    dbh = dgh.sum(axis=0)
    return dx, dh, dwx, dwh, dbx, dbh


def masked_softmax_fwd(logits, mask):
    """Softmax over the last axis restricted to mask==1 entries.

    Masked entries come out exactly 0; each row of unmasked entries sums to 1.
    Raises on any all-masked row.
    """
    l2 = logits.reshape(-1, logits.shape[-1])
    m2 = mask.reshape(-1, mask.shape[-1])
    if np.any(m2.sum(axis=1) == 0):
        raise ValueError("masked softmax over an all-masked row")
    neg = np.array(-np.inf, dtype=l2.dtype)
    shifted = np.where(m2 > 0, l2, neg)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    e = np.where(m2 > 0, e, np.zeros((), dtype=l2.dtype))
    out = e / e.sum(axis=1, keepdims=True)
    return out.reshape(logits.shape)


def masked_softmax_bwd(probs, mask, grad_out):
    p2 = probs.reshape(-1, probs.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    dot = (g2 * p2).sum(axis=1, keepdims=True)
    return (p2 * (g2 - dot)).reshape(probs.shape)

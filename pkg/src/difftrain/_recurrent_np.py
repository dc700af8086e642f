"""Numpy implementation of the sequential gated-recurrence kernels.

The compiled extension (``_recurrent_cy``) implements exactly the same
contracts; this module is the always-available fallback. Matrix products that
do not depend on the previous frame (input projections, weight-gradient
accumulations) are done by the caller as single GEMMs; these kernels only walk
the time axis.

Gate layout in ``gx``/``dg``: columns ``[0:H]`` update gate z, ``[H:2H]``
reset gate r, ``[2H:3H]`` candidate c.
"""
from __future__ import annotations

import numpy as np


def _sigmoid(x):
    # tanh form is overflow-safe and matches the compiled kernel bit-for-bit
    # in the common range.
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def gru_forward_scan(gx, uz, ur, uc, h0):
    """Run one layer's recurrence over a chunk.

    gx: (T, 3H) input projections with biases folded in.
    uz, ur, uc: (H, H) recurrent weights.
    h0: (H,) initial hidden state.
    Returns (h, z, r, c), each (T, H).
    """
    t_len, width = gx.shape
    h_dim = width // 3
    h = np.empty((t_len, h_dim))
    z = np.empty((t_len, h_dim))
    r = np.empty((t_len, h_dim))
    c = np.empty((t_len, h_dim))
    h_prev = h0
    for t in range(t_len):
        z_t = _sigmoid(gx[t, :h_dim] + uz @ h_prev)
        r_t = _sigmoid(gx[t, h_dim:2 * h_dim] + ur @ h_prev)
        c_t = np.tanh(gx[t, 2 * h_dim:] + uc @ (r_t * h_prev))
        h_t = (1.0 - z_t) * h_prev + z_t * c_t
        z[t] = z_t
        r[t] = r_t
        c[t] = c_t
        h[t] = h_t
        h_prev = h_t
    return h, z, r, c


def gru_backward_scan(dh, z, r, c, h, h0, uz, ur, uc):
    """Backpropagate through the recurrence of one layer.

    dh: (T, H) loss gradient arriving at each frame's hidden state from
    heads/upper layers (excluding the recurrent carry, which this computes).
    Returns dg (T, 3H): gradients w.r.t. the gate pre-activations.
    """
    t_len, h_dim = dh.shape
    dg = np.empty((t_len, 3 * h_dim))
    carry = np.zeros(h_dim)
    for t in range(t_len - 1, -1, -1):
        h_prev = h[t - 1] if t > 0 else h0
        total = dh[t] + carry
        dgz = total * (c[t] - h_prev) * z[t] * (1.0 - z[t])
        dgc = total * z[t] * (1.0 - c[t] * c[t])
        through_c = uc.T @ dgc
        dgr = through_c * h_prev * r[t] * (1.0 - r[t])
        carry = (total * (1.0 - z[t]) + through_c * r[t]
                 + uz.T @ dgz + ur.T @ dgr)
        dg[t, :h_dim] = dgz
        dg[t, h_dim:2 * h_dim] = dgr
        dg[t, 2 * h_dim:] = dgc
    return dg

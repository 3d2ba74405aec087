"""Pure numpy implementations of the hot kernels.

These are the fallback when the compiled extension is unavailable and the
reference the compiled versions are tested against.
"""

import numpy as np


def im2col(x, ksize):
    """(M, L, Cin) -> (M, L, K * Cin) zero-padded sliding windows along L."""
    m, length, cin = x.shape
    pad = ksize // 2
    cols = np.zeros((m, length, ksize, cin))
    for k in range(ksize):
        s = k - pad
        lo, hi = max(0, -s), length - max(0, s)
        cols[:, lo:hi, k, :] = x[:, lo + s : hi + s, :]
    return cols.reshape(m, length, ksize * cin)


def conv1d_forward(x, w):
    """Same-padded convolution of ``x`` (M, L, Cin) with ``w`` (K, Cin, Cout).

    Returns the output and the column matrix that :func:`conv1d_backward`
    needs.
    """
    ksize, cin, cout = w.shape
    cols = im2col(x, ksize)
    m, length, _ = x.shape
    out = cols.reshape(-1, ksize * cin) @ w.reshape(ksize * cin, cout)
    return out.reshape(m, length, cout), cols


def conv1d_backward(cols, w, g, need_x=True, need_w=True):
    """Gradients of :func:`conv1d_forward` w.r.t. ``x`` and ``w`` (None when not needed)."""
    ksize, cin, cout = w.shape
    m, length, _ = cols.shape
    pad = ksize // 2
    g2 = g.reshape(-1, cout)
    gw = (cols.reshape(-1, ksize * cin).T @ g2).reshape(w.shape) if need_w else None
    if not need_x:
        return None, gw
    gcols = (g2 @ w.reshape(ksize * cin, cout).T).reshape(m, length, ksize, cin)
    gx = np.zeros((m, length, cin))
    for k in range(ksize):
        s = k - pad
        lo, hi = max(0, -s), length - max(0, s)
        gx[:, lo + s : hi + s, :] += gcols[:, lo:hi, k, :]
    return gx, gw


def topk_mask(a, tau):
    """Boolean mask keeping the ``tau`` largest entries of each row of ``a``.

    Ties resolve toward the lower column index.
    """
    n_rows, n_cols = a.shape
    # stable sort on the negated values keeps equal entries in column order
    order = np.argsort(-a, axis=1, kind="stable")[:, :tau]
    mask = np.zeros((n_rows, n_cols), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask

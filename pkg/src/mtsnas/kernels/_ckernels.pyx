# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in :mod:`mtsnas.kernels._reference`.

The convolution copies the (M, L, C) input once into a buffer where every
series carries its own zero padding, then runs one BLAS product per kernel
tap over all padded rows at once. Output rows inside a series only read
that series (and its zero padding), so series never leak into each other;
rows that land in the padding are computed and discarded. The conv cache
is the padded input.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


cdef void gemm_rm(char ta, char tb, int m, int n, int k, double alpha,
                  double* a, int lda, double* b, int ldb, double beta,
                  double* c, int ldc) noexcept nogil:
    # row-major C = alpha * op(A) op(B) + beta * C via column-major dgemm
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w):
    cdef int m = x.shape[0], length = x.shape[1], cin = x.shape[2]
    cdef int ksize = w.shape[0], cout = w.shape[2], pad = ksize // 2
    cdef int plen = length + 2 * pad
    cdef int count = m * plen - 2 * pad
    xp_arr = np.zeros((m, plen, cin))
    xp_arr[:, pad : pad + length] = x
    out_arr = np.zeros((m, plen, cout))
    cdef double[:, :, ::1] xp = xp_arr
    cdef double[:, :, ::1] out = out_arr
    cdef int k
    with nogil:
        for k in range(ksize):
            # out[r] += xp[r + k - pad] @ w[k] for r in [pad, rows - pad)
            gemm_rm(b'N', b'N', count, cout, cin, 1.0, &xp[0, 0, 0] + k * cin, cin,
                    &w[k, 0, 0], cout, 1.0, &out[0, 0, 0] + pad * cout, cout)
    return np.ascontiguousarray(out_arr[:, pad : pad + length]), xp_arr


def conv1d_backward(double[:, :, ::1] xp, double[:, :, ::1] w, double[:, :, ::1] g, bint need_x=True, bint need_w=True):
    cdef int m = xp.shape[0], plen = xp.shape[1], cin = xp.shape[2]
    cdef int ksize = w.shape[0], cout = w.shape[2], pad = ksize // 2
    cdef int length = plen - 2 * pad
    cdef int count = m * plen - 2 * pad
    gp_arr = np.zeros((m, plen, cout))
    gp_arr[:, pad : pad + length] = g
    cdef double[:, :, ::1] gp = gp_arr
    cdef double[:, :, ::1] gxp
    cdef double[:, :, ::1] gw
    cdef int k
    gx = None
    gw_arr = None
    if need_x:
        gxp_arr = np.zeros((m, plen, cin))
        gxp = gxp_arr
        with nogil:
            for k in range(ksize):
                # gxp[r + k - pad] += gp[r] @ w[k]^T
                gemm_rm(b'N', b'T', count, cin, cout, 1.0, &gp[0, 0, 0] + pad * cout, cout,
                        &w[k, 0, 0], cout, 1.0, &gxp[0, 0, 0] + k * cin, cin)
        gx = np.ascontiguousarray(gxp_arr[:, pad : pad + length])
    if need_w:
        gw_arr = np.zeros((ksize, cin, cout))
        gw = gw_arr
        with nogil:
            for k in range(ksize):
                # gw[k] += xp[r + k - pad]^T gp[r]; padding rows of gp are zero
                gemm_rm(b'T', b'N', cin, cout, count, 1.0, &xp[0, 0, 0] + k * cin, cin,
                        &gp[0, 0, 0] + pad * cout, cout, 1.0, &gw[k, 0, 0], cout)
    return gx, gw_arr


def topk_mask(double[:, ::1] a, Py_ssize_t tau):
    """Per-row selection of the tau largest entries; ties favour lower columns.

    Each row is streamed once through a buffer of the best tau entries kept
    in descending order; a later column only enters when strictly larger,
    so equal values keep the earlier column.
    """
    cdef Py_ssize_t n_rows = a.shape[0], n_cols = a.shape[1], r, c, k, pos, filled
    cdef double v
    mask_arr = np.zeros((n_rows, n_cols), dtype=np.uint8)
    cdef unsigned char[:, ::1] mask = mask_arr
    if tau <= 0 or n_cols == 0:
        return mask_arr.astype(bool)
    if tau > n_cols:
        tau = n_cols
    cdef double[::1] vals = np.empty(tau)
    cdef Py_ssize_t[::1] cols = np.empty(tau, dtype=np.intp)
    with nogil:
        for r in range(n_rows):
            filled = 0
            for c in range(n_cols):
                v = a[r, c]
                if filled == tau and not (v > vals[tau - 1]):
                    continue
                pos = filled if filled < tau else tau - 1
                while pos > 0 and v > vals[pos - 1]:
                    pos -= 1
                k = filled if filled < tau else tau - 1
                while k > pos:
                    vals[k] = vals[k - 1]
                    cols[k] = cols[k - 1]
                    k -= 1
                vals[pos] = v
                cols[pos] = c
                if filled < tau:
                    filled += 1
            for k in range(filled):
                mask[r, cols[k]] = 1
    return mask_arr.astype(bool)

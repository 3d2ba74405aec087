"""Candidate operations of the search space.

Every operation maps a (batch, N, T, C) tensor to the same shape. The
graph convolution additionally takes the scale's adjacency matrix; the
others ignore it.
"""

from __future__ import annotations

import numpy as np

from mtsnas import tensor as T
from mtsnas.nn import Module, uniform
from mtsnas.tensor import Tensor

ZERO = "Zero"
IDENTITY = "Identity"
CONV_1 = "Conv_1"
T_CONV = "T-Conv"
T_ATT = "T-Att"
GCN = "GCN"
S_ATT = "S-Att"

ALL_OPS = (ZERO, IDENTITY, CONV_1, T_CONV, T_ATT, GCN, S_ATT)
BASIC_OPS = (ZERO, IDENTITY, CONV_1)
ATTENTION_OPS = (T_ATT, S_ATT)
CONV_OPS = (T_CONV, GCN)

TCONV_KERNEL = 3


class Op(Module):
    kind = ""

    def __call__(self, x: Tensor, adj: Tensor | None = None) -> Tensor:
        raise NotImplementedError


class Zero(Op):
    kind = ZERO

    def __call__(self, x, adj=None):
        return Tensor(np.zeros(x.shape))


class Identity(Op):
    kind = IDENTITY

    def __call__(self, x, adj=None):
        return x


class Conv1(Op):
    """1x1 convolution: the same affine map over channels at every (node, step)."""

    kind = CONV_1

    def __init__(self, rng, channels):
        self.w = uniform(rng, (channels, channels), channels, name="conv1.W")
        self.b = uniform(rng, (channels,), channels, name="conv1.b")

    def __call__(self, x, adj=None):
        return T.linear(x, self.w, self.b)


class TConv(Op):
    """Gated temporal convolution: tanh(filter) * sigmoid(gate)."""

    kind = T_CONV

    def __init__(self, rng, channels):
        fan_in = TCONV_KERNEL * channels
        shape = (TCONV_KERNEL, channels, channels)
        self.w_filter = uniform(rng, shape, fan_in, name="tconv.W1")
        self.b_filter = uniform(rng, (channels,), fan_in, name="tconv.b1")
        self.w_gate = uniform(rng, shape, fan_in, name="tconv.W2")
        self.b_gate = uniform(rng, (channels,), fan_in, name="tconv.b2")

    def __call__(self, x, adj=None):
        filt = T.tanh(T.conv1d(x, self.w_filter, self.b_filter, axis=2))
        gate = T.sigmoid(T.conv1d(x, self.w_gate, self.b_gate, axis=2))
        return T.mul(filt, gate)


class TAtt(Op):
    """Temporal attention.

    Scores between steps t and s::

        I[t, s] = V[t, s] * sigmoid(sum_n L[t, n] R[n, s] + b[t, s])
        L[t, n] = sum_c (sum_m x[m, t, c] u1[m]) u2[c, n]
        R[n, s] = sum_c u3[c] x[n, s, c]

    Rows of I are softmax-normalised and every variable's series is mixed
    over time with them.
    """

    kind = T_ATT

    def __init__(self, rng, n_nodes, length, channels):
        self.u1 = uniform(rng, (n_nodes, 1), n_nodes, name="tatt.U1")
        self.u2 = uniform(rng, (channels, n_nodes), channels, name="tatt.U2")
        self.u3 = uniform(rng, (channels, 1), channels, name="tatt.U3")
        self.v = uniform(rng, (length, length), length, name="tatt.V")
        self.b = uniform(rng, (length, length), length, name="tatt.b")

    def attention(self, x: Tensor) -> Tensor:
        b, n, t, c = x.shape
        pooled = T.reshape(T.linear(T.transpose(x, (0, 2, 3, 1)), self.u1), (b, t, c))
        lhs = T.linear(pooled, self.u2)  # (b, t, n)
        rhs = T.reshape(T.linear(x, self.u3), (b, n, t))
        scores = T.matmul(lhs, rhs)  # (b, t, t)
        gated = T.sigmoid(T.add(scores, T.expand(self.b, scores.shape)))
        return T.softmax(T.mul(T.expand(self.v, scores.shape), gated), axis=2)

    def __call__(self, x, adj=None):
        return mix_steps(self.attention(x), x)


def mix_steps(weights: Tensor, x: Tensor) -> Tensor:
    """x'[b, n, t] = sum_s weights[b, t, s] x[b, n, s] (all channels)."""
    b, n, t, c = x.shape
    flat = T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, n * c))
    mixed = T.reshape(T.matmul(weights, flat), (b, t, n, c))
    return T.transpose(mixed, (0, 2, 1, 3))


def mix_nodes(weights: Tensor, x: Tensor) -> Tensor:
    """x'[b, i] = sum_j weights[b, i, j] x[b, j] (all steps and channels)."""
    b, n, t, c = x.shape
    mixed = T.matmul(weights, T.reshape(x, (b, n, t * c)))
    return T.reshape(mixed, (b, n, t, c))


class GraphConv(Op):
    """x'_t = relu(A_hat x_t W) with A_hat = row-normalised (A + I), W shared over t."""

    kind = GCN

    def __init__(self, rng, channels):
        self.w = uniform(rng, (channels, channels), channels, name="gcn.W")

    def __call__(self, x, adj=None):
        if adj is None:
            raise ValueError("GCN needs an adjacency matrix")
        b, n = x.shape[:2]
        if adj.shape != (n, n):
            raise T.ShapeError(f"GCN: adjacency shape {adj.shape} does not match {n} nodes")
        prop = T.expand(propagation_matrix(adj), (b, n, n))
        return T.relu(T.linear(mix_nodes(prop, x), self.w))


def propagation_matrix(adj: Tensor) -> Tensor:
    n = adj.shape[0]
    with_loops = T.add(adj, Tensor(np.eye(n)))
    degree = T.sum(with_loops, axis=1, keepdims=True)
    return T.div(with_loops, T.expand(degree, (n, n)))


class SAtt(Op):
    """Spatial attention; same construction as :class:`TAtt` with the roles of
    time and variables swapped, mixing variables at every step."""

    kind = S_ATT

    def __init__(self, rng, n_nodes, length, channels):
        self.u4 = uniform(rng, (length, 1), length, name="satt.U4")
        self.u5 = uniform(rng, (channels, length), channels, name="satt.U5")
        self.u6 = uniform(rng, (channels, 1), channels, name="satt.U6")
        self.v = uniform(rng, (n_nodes, n_nodes), n_nodes, name="satt.V")
        self.b = uniform(rng, (n_nodes, n_nodes), n_nodes, name="satt.b")

    def attention(self, x: Tensor) -> Tensor:
        b, n, t, c = x.shape
        pooled = T.reshape(T.linear(T.transpose(x, (0, 1, 3, 2)), self.u4), (b, n, c))
        lhs = T.linear(pooled, self.u5)  # (b, n, t)
        rhs = T.transpose(T.reshape(T.linear(x, self.u6), (b, n, t)), (0, 2, 1))
        scores = T.matmul(lhs, rhs)  # (b, n, n)
        gated = T.sigmoid(T.add(scores, T.expand(self.b, scores.shape)))
        return T.softmax(T.mul(T.expand(self.v, scores.shape), gated), axis=2)

    def __call__(self, x, adj=None):
        return mix_nodes(self.attention(x), x)


def make_op(kind: str, rng: np.random.Generator, n_nodes: int, length: int, channels: int) -> Op:
    if kind == ZERO:
        return Zero()
    if kind == IDENTITY:
        return Identity()
    if kind == CONV_1:
        return Conv1(rng, channels)
    if kind == T_CONV:
        return TConv(rng, channels)
    if kind == T_ATT:
        return TAtt(rng, n_nodes, length, channels)
    if kind == GCN:
        return GraphConv(rng, channels)
    if kind == S_ATT:
        return SAtt(rng, n_nodes, length, channels)
    raise ValueError(f"unknown operation {kind!r}; expected one of {ALL_OPS}")

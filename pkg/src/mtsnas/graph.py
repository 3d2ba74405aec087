"""Adaptive graph learning: a scale-shared stem plus per-scale heads.

The stem turns learnable node embeddings into a basic adjacency matrix::

    E' = tanh(E W + b)
    M1 = tanh(E' Theta1),  M2 = tanh(E' Theta2)
    A_basic = relu(w * relu(M1 M2^T - M2 M1^T) + c)

and head ``k`` maps it to the final scale adjacency::

    A^k = topk_rows(softmax_rows(A_basic W_k + b_k), tau)

Theta1/Theta2 are (d_e, d_e) so that the similarity product is N x N; the
output map (w, c) is a scalar affine applied entrywise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from mtsnas import kernels
from mtsnas import tensor as T
from mtsnas.nn import Module, uniform
from mtsnas.tensor import Tensor

GRAPH_MODES = ("snas4mtf", "shared", "non_shared")


@dataclass
class AdjacencySet:
    basic: list[Tensor]  # one per stem: 1 normally, K in non_shared mode
    dense: list[Tensor]  # per-scale row softmax before sparsification
    scales: list[Tensor]  # per-scale final A^k


def sparsify(probs: Tensor, tau: int) -> Tensor:
    """Keep the ``tau`` largest entries per row; the others become 0.

    The selection mask is treated as a constant, so gradient reaches the
    kept entries only.
    """
    n = probs.shape[1]
    if not 1 <= tau <= n:
        raise ValueError(f"tau must be in [1, {n}], got {tau}")
    if tau == n:
        return probs
    mask = kernels.topk_mask(probs.data, tau)
    return T.mul(probs, Tensor(mask.astype(np.float64)))


class GraphStem(Module):
    def __init__(self, rng: np.random.Generator, n_nodes: int, emb_dim: int, tag: str = ""):
        self.embeddings = Tensor(0.1 * rng.standard_normal((n_nodes, emb_dim)), requires_grad=True, name=f"E{tag}")
        self.mlp_w = uniform(rng, (emb_dim, emb_dim), emb_dim, name=f"stem{tag}.W")
        self.mlp_b = uniform(rng, (emb_dim,), emb_dim, name=f"stem{tag}.b")
        self.theta1 = uniform(rng, (emb_dim, emb_dim), emb_dim, name=f"stem{tag}.theta1")
        self.theta2 = uniform(rng, (emb_dim, emb_dim), emb_dim, name=f"stem{tag}.theta2")
        # entrywise output affine starts as the identity; a negative random
        # scale would zero the whole matrix through the final relu
        self.out_w = Tensor(1.0, requires_grad=True, name=f"stem{tag}.out_w")
        self.out_b = Tensor(0.0, requires_grad=True, name=f"stem{tag}.out_b")

    def __call__(self) -> Tensor:
        e = T.tanh(T.linear(self.embeddings, self.mlp_w, self.mlp_b))
        m1 = T.tanh(T.matmul(e, self.theta1))
        m2 = T.tanh(T.matmul(e, self.theta2))
        sim = T.sub(T.matmul(m1, T.transpose(m2, (1, 0))), T.matmul(m2, T.transpose(m1, (1, 0))))
        return T.relu(T.add(T.mul(T.relu(sim), self.out_w), self.out_b))


class ScaleHead(Module):
    def __init__(self, rng: np.random.Generator, n_nodes: int, tag: str = ""):
        self.w = uniform(rng, (n_nodes, n_nodes), n_nodes, name=f"head{tag}.W")
        self.b = uniform(rng, (n_nodes,), n_nodes, name=f"head{tag}.b")

    def dense(self, a_basic: Tensor) -> Tensor:
        return T.softmax(T.linear(a_basic, self.w, self.b), axis=1)


class GraphLearner(Module):
    """Produces the per-scale adjacency matrices.

    ``mode`` selects the parameter sharing: ``snas4mtf`` (one stem, one head
    per scale), ``shared`` (one stem, one head reused for every scale) or
    ``non_shared`` (an independent stem and head per scale).
    """

    def __init__(
        self,
        rng: np.random.Generator,
        n_nodes: int,
        emb_dim: int,
        n_scales: int,
        tau: int,
        mode: str = "snas4mtf",
    ):
        if mode not in GRAPH_MODES:
            raise ValueError(f"unknown graph mode {mode!r}; expected one of {GRAPH_MODES}")
        if not 1 <= tau <= n_nodes:
            raise ValueError(f"tau must be in [1, {n_nodes}], got {tau}")
        if emb_dim >= n_nodes:
            warnings.warn(
                f"embedding width {emb_dim} is not much smaller than node count {n_nodes}",
                stacklevel=2,
            )
        self.mode = mode
        self.n_scales = n_scales
        self.tau = tau
        n_stems = n_scales if mode == "non_shared" else 1
        n_heads = 1 if mode == "shared" else n_scales
        self.stems = [GraphStem(rng, n_nodes, emb_dim, tag=str(i)) for i in range(n_stems)]
        self.heads = [ScaleHead(rng, n_nodes, tag=str(i)) for i in range(n_heads)]

    def __call__(self) -> AdjacencySet:
        basics = [stem() for stem in self.stems]
        dense = []
        for k in range(self.n_scales):
            a_basic = basics[k if self.mode == "non_shared" else 0]
            head = self.heads[0 if self.mode == "shared" else k]
            if self.mode == "shared" and k > 0:
                dense.append(dense[0])
            else:
                dense.append(head.dense(a_basic))
        if self.mode == "shared":
            final = sparsify(dense[0], self.tau)
            scales = [final] * self.n_scales
        else:
            scales = [sparsify(d, self.tau) for d in dense]
        return AdjacencySet(basic=basics, dense=dense, scales=scales)

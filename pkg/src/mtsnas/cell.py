"""Cells: DAGs of latent nodes whose connections mix candidate operations.

Node 0 is the cell input. Node ``j`` is the sum of its incoming connections
``(i, j)``, taken in ascending ``i``; the cell output is the sum of nodes
``1 .. M-1``. A connection is *adjacent* when ``j == i + 1`` and *skip*
otherwise, and each group draws its operations from its own pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mtsnas import ops as O
from mtsnas import tensor as T
from mtsnas.nn import Module
from mtsnas.tensor import Tensor

Edge = tuple[int, int]


def connections(n_nodes: int) -> list[Edge]:
    """All ``(i, j)`` with ``i < j`` in a fixed order (by ``j``, then ``i``)."""
    if n_nodes < 2:
        raise ValueError(f"a cell needs at least 2 nodes, got {n_nodes}")
    return [(i, j) for j in range(1, n_nodes) for i in range(j)]


def is_adjacent(edge: Edge) -> bool:
    return edge[1] == edge[0] + 1


@dataclass(frozen=True)
class OperationPools:
    adjacent: tuple[str, ...]
    skip: tuple[str, ...]

    def for_edge(self, edge: Edge) -> tuple[str, ...]:
        return self.adjacent if is_adjacent(edge) else self.skip


def operation_pools(
    no_att: bool = False,
    no_conv: bool = False,
    no_basic: bool = False,
    no_grouping: bool = False,
) -> OperationPools:
    """Pools after the search-space ablations are applied.

    With grouping on (the default) skip connections never offer the two
    attention operations.
    """
    removed = set()
    if no_att:
        removed.update(O.ATTENTION_OPS)
    if no_conv:
        removed.update(O.CONV_OPS)
    if no_basic:
        removed.update(O.BASIC_OPS)
    adjacent = tuple(k for k in O.ALL_OPS if k not in removed)
    skip = adjacent if no_grouping else tuple(k for k in adjacent if k not in O.ATTENTION_OPS)
    if not adjacent or not skip:
        raise ValueError("ablations leave an empty operation pool")
    return OperationPools(adjacent, skip)


class MixedConnection(Module):
    """Softmax(alpha)-weighted sum of every operation in the pool."""

    def __init__(self, rng, pool, n_nodes, length, channels):
        self.pool = tuple(pool)
        self.ops = [O.make_op(k, rng, n_nodes, length, channels) for k in self.pool]

    def __call__(self, x: Tensor, alpha: Tensor, adj: Tensor | None) -> Tensor:
        return mixed_connection(x, alpha, self.ops, adj)


def mixed_connection(x: Tensor, alpha: Tensor, ops, adj: Tensor | None = None) -> Tensor:
    """``sum_k softmax(alpha)_k * op_k(x)``; Zero terms are skipped since they add nothing."""
    if alpha.shape != (len(ops),):
        raise ValueError(f"alpha has shape {alpha.shape} for a pool of {len(ops)} operations")
    weights = T.softmax(alpha, axis=0)
    index = [k for k, op in enumerate(ops) if op.kind != O.ZERO]
    if not index:
        return Tensor(np.zeros(x.shape))
    return T.weighted_sum(weights, [ops[k](x, adj) for k in index], index)


class Cell(Module):
    """One cell. ``choices`` (edge -> op kind) fixes a discrete architecture;
    without it every connection is a :class:`MixedConnection`."""

    def __init__(
        self,
        rng: np.random.Generator,
        n_nodes_cell: int,
        pools: OperationPools,
        n_vars: int,
        length: int,
        channels: int,
        choices: dict[Edge, str] | None = None,
    ):
        self.edges = connections(n_nodes_cell)
        self.n_nodes_cell = n_nodes_cell
        self.discrete = choices is not None
        self.links = []
        for edge in self.edges:
            if choices is None:
                self.links.append(MixedConnection(rng, pools.for_edge(edge), n_vars, length, channels))
            else:
                kind = choices[edge]
                if kind not in pools.for_edge(edge):
                    raise ValueError(f"operation {kind!r} is not in the pool of connection {edge}")
                self.links.append(O.make_op(kind, rng, n_vars, length, channels))

    def __call__(self, x: Tensor, alphas: list[Tensor] | None, adj: Tensor | None) -> Tensor:
        if not self.discrete and alphas is None:
            raise ValueError("a mixed cell needs architecture weights")
        nodes: list[Tensor | None] = [x] + [None] * (self.n_nodes_cell - 1)
        for idx, ((i, j), link) in enumerate(zip(self.edges, self.links)):
            if self.discrete:
                out = link(nodes[i], adj)
            else:
                out = link(nodes[i], alphas[idx], adj)
            nodes[j] = out if nodes[j] is None else T.add(nodes[j], out)
        total = nodes[1]
        for node in nodes[2:]:
            total = T.add(total, node)
        return total


def init_alphas(pools: OperationPools, n_nodes_cell: int, scale: int) -> list[Tensor]:
    return [
        Tensor(np.zeros(len(pools.for_edge(e))), requires_grad=True, name=f"alpha.s{scale}.{e[0]}-{e[1]}")
        for e in connections(n_nodes_cell)
    ]


# ----------------------------------------------------------------------
# discretisation


@dataclass
class DiscreteArchitecture:
    """Chosen operation per connection, per cell, per scale.

    ``alphas`` optionally keeps the raw logits (per scale, per connection)
    the choice was derived from.
    """

    nodes_per_cell: int
    cells: list[list[dict[Edge, str]]]
    pools: OperationPools
    alphas: list[list[list[float]]] | None = field(default=None)

    @property
    def n_scales(self) -> int:
        return len(self.cells)

    def to_json(self) -> dict:
        scales = []
        for k, cells in enumerate(self.cells):
            entry = {
                "scale": k + 1,
                "cells": [
                    {"cell": c, "edges": [{"from": i, "to": j, "op": ch[(i, j)]} for (i, j) in connections(self.nodes_per_cell)]}
                    for c, ch in enumerate(cells)
                ],
            }
            if self.alphas is not None:
                entry["alpha"] = [
                    {"from": i, "to": j, "pool": list(self.pools.for_edge((i, j))), "logits": list(a)}
                    for (i, j), a in zip(connections(self.nodes_per_cell), self.alphas[k])
                ]
            scales.append(entry)
        return {
            "format": "mtsnas-arch",
            "version": 1,
            "nodes_per_cell": self.nodes_per_cell,
            "pools": {"adjacent": list(self.pools.adjacent), "skip": list(self.pools.skip)},
            "scales": scales,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteArchitecture":
        if obj.get("format") != "mtsnas-arch":
            raise ValueError("not an architecture file (missing format tag 'mtsnas-arch')")
        if obj.get("version") != 1:
            raise ValueError(f"unsupported architecture version {obj.get('version')!r}")
        m = int(obj["nodes_per_cell"])
        pools = OperationPools(tuple(obj["pools"]["adjacent"]), tuple(obj["pools"]["skip"]))
        expected = set(connections(m))
        cells = []
        alphas = []
        for scale in obj["scales"]:
            scale_cells = []
            for cell in scale["cells"]:
                choice = {(int(e["from"]), int(e["to"])): str(e["op"]) for e in cell["edges"]}
                if set(choice) != expected:
                    raise ValueError(f"cell edges {sorted(choice)} do not match a {m}-node cell")
                for edge, kind in choice.items():
                    if kind not in pools.for_edge(edge):
                        raise ValueError(f"operation {kind!r} is not allowed on connection {edge}")
                scale_cells.append(choice)
            cells.append(scale_cells)
            if "alpha" in scale:
                alphas.append([list(map(float, a["logits"])) for a in scale["alpha"]])
        return cls(m, cells, pools, alphas if len(alphas) == len(cells) else None)


def choose(alpha: np.ndarray) -> int:
    """Index of the most probable operation; ties go to the earlier one."""
    a = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("architecture weights must be finite")
    e = np.exp(a - a.max())
    return int(np.argmax(e / e.sum()))


def discretize(
    alphas: list[list[np.ndarray]], cells_per_scale: list[int], nodes_per_cell: int, pools: OperationPools
) -> DiscreteArchitecture:
    """Fix every connection to its argmax operation.

    ``alphas[k]`` holds the logits of scale ``k`` (one array per
    connection); all stacked cells of a scale share them.
    """
    edges = connections(nodes_per_cell)
    cells = []
    for k, scale_alphas in enumerate(alphas):
        choice = {e: pools.for_edge(e)[choose(a)] for e, a in zip(edges, scale_alphas)}
        cells.append([dict(choice) for _ in range(cells_per_scale[k])])
    raw = [[list(map(float, a)) for a in scale_alphas] for scale_alphas in alphas]
    return DiscreteArchitecture(nodes_per_cell, cells, pools, raw)


# ----------------------------------------------------------------------
# search-space size


def space_cardinality(n_nodes: int, n_cells: int, grouped: bool, n_adjacent_ops: int = 7, n_skip_ops: int = 5) -> int:
    """Number of distinct discrete architectures.

    Choices on different connections are independent, so the grouped count
    is a product over adjacent and skip connections.
    """
    if n_nodes < 2 or n_cells < 1:
        raise ValueError(f"need n_nodes >= 2 and n_cells >= 1, got {n_nodes}, {n_cells}")
    if not grouped:
        return n_adjacent_ops ** (n_nodes * (n_nodes - 1) * n_cells // 2)
    n_adj = (n_nodes - 1) * n_cells
    n_skip = (n_nodes - 2) * (n_nodes - 1) * n_cells // 2
    return n_adjacent_ops**n_adj * n_skip_ops**n_skip


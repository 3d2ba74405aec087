"""Full forecasting network: decomposition, graphs, per-scale cells, fusion head."""

from __future__ import annotations

import warnings

import numpy as np

from mtsnas import tensor as T
from mtsnas.cell import Cell, DiscreteArchitecture, OperationPools, discretize, init_alphas, operation_pools
from mtsnas.config import TrainConfig
from mtsnas.decomposition import Decomposition, scale_lengths
from mtsnas.graph import GraphLearner
from mtsnas.nn import Module, uniform
from mtsnas.tensor import Tensor


class ScaleStack(Module):
    """Stacked cells of one scale. In search mode the cells share one set of
    architecture logits."""

    def __init__(self, rng, scale, n_cells, nodes_per_cell, pools, n_vars, length, channels, choices=None):
        self.scale = scale
        if choices is None:
            self.alphas = init_alphas(pools, nodes_per_cell, scale)
            self.cells = [Cell(rng, nodes_per_cell, pools, n_vars, length, channels) for _ in range(n_cells)]
        else:
            self.alphas = []
            if len(choices) != n_cells:
                raise ValueError(f"scale {scale}: architecture has {len(choices)} cells, config expects {n_cells}")
            self.cells = [Cell(rng, nodes_per_cell, pools, n_vars, length, channels, c) for c in choices]

    def __call__(self, x: Tensor, adj: Tensor) -> Tensor:
        alphas = self.alphas or None
        for cell in self.cells:
            x = cell(x, alphas, adj)
        return x


class FusionHead(Module):
    """Two affine layers with a relu between, applied per node."""

    def __init__(self, rng, in_features, hidden, horizon):
        self.w1 = uniform(rng, (in_features, hidden), in_features, name="head.W1")
        self.b1 = uniform(rng, (hidden,), in_features, name="head.b1")
        self.w2 = uniform(rng, (hidden, horizon), hidden, name="head.W2")
        self.b2 = uniform(rng, (horizon,), hidden, name="head.b2")

    def __call__(self, z: Tensor) -> Tensor:
        return T.linear(T.relu(T.linear(z, self.w1, self.b1)), self.w2, self.b2)


def effective_tau(tau: int, n_vars: int) -> int:
    if tau > n_vars:
        warnings.warn(f"tau={tau} exceeds the node count {n_vars}; using tau={n_vars}", stacklevel=3)
        return n_vars
    return tau


class Network(Module):
    """Search-mode network when ``arch`` is None, fixed architecture otherwise."""

    def __init__(
        self,
        config: TrainConfig,
        n_vars: int,
        in_channels: int,
        rng: np.random.Generator,
        arch: DiscreteArchitecture | None = None,
    ):
        self.config = config
        self.n_vars = n_vars
        self.in_channels = in_channels
        lengths = scale_lengths(config.t_in, config.n_scales)
        if arch is None:
            self.pools = operation_pools(config.no_att, config.no_conv, config.no_basic, config.no_grouping)
        else:
            if arch.n_scales != config.n_scales:
                raise ValueError(f"architecture has {arch.n_scales} scales, config expects {config.n_scales}")
            if arch.nodes_per_cell != config.nodes_per_cell:
                raise ValueError(
                    f"architecture has {arch.nodes_per_cell} nodes per cell, config expects {config.nodes_per_cell}"
                )
            self.pools = arch.pools
        self.arch = arch
        self.tau = effective_tau(config.tau, n_vars)

        self.decomposition = Decomposition(rng, in_channels, config.hidden, config.n_scales)
        self.graph = GraphLearner(rng, n_vars, config.emb_dim, config.n_scales, self.tau, config.graph_mode)
        self.scales = [
            ScaleStack(
                rng,
                k + 1,
                config.cells[k],
                config.nodes_per_cell,
                self.pools,
                n_vars,
                lengths[k],
                config.hidden,
                None if arch is None else arch.cells[k],
            )
            for k in range(config.n_scales)
        ]
        self.head = FusionHead(rng, sum(lengths) * config.hidden, config.hidden, config.horizon)

    @property
    def searching(self) -> bool:
        return self.arch is None

    def arch_parameters(self) -> list[Tensor]:
        return [a for s in self.scales for a in s.alphas]

    def weight_parameters(self) -> list[Tensor]:
        arch_ids = {id(a) for a in self.arch_parameters()}
        return [p for p in self.parameters() if id(p) not in arch_ids]

    def __call__(self, x: Tensor) -> Tensor:
        """``x`` is (batch, N, t_in, C_in); returns (batch, N, horizon)."""
        if x.ndim != 4 or x.shape[1] != self.n_vars or x.shape[3] != self.in_channels:
            raise T.ShapeError(
                f"input: expected (batch, {self.n_vars}, {self.config.t_in}, {self.in_channels}), got {x.shape}"
            )
        series = self.decomposition(x)
        adjacency = self.graph()
        feats = []
        for stack, s, adj in zip(self.scales, series, adjacency.scales):
            out = stack(s.tensor, adj)
            b, n, t, c = out.shape
            feats.append(T.reshape(out, (b, n, t * c)))
        z = feats[0] if len(feats) == 1 else T.concat(feats, axis=2)
        return self.head(z)

    def discretize(self) -> DiscreteArchitecture:
        if not self.searching:
            return self.arch
        alphas = [[a.data.copy() for a in s.alphas] for s in self.scales]
        return discretize(alphas, list(self.config.cells), self.config.nodes_per_cell, self.pools)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name}: stored shape {arr.shape}, model shape {p.shape}")
            p.data = arr.reshape(p.shape).copy()

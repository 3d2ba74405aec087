"""Multi-scale decomposition of an input window into K sub-series.

Scale 1 is ``relu(conv(x))`` at full length; each further scale applies
another conv + relu to the previous scale and halves its length with
average pooling. Convolutions run along time only, with kernels shared by
all variables, so variables never mix here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mtsnas import tensor as T
from mtsnas.nn import Module, uniform
from mtsnas.tensor import Tensor

KERNEL_SIZE = 3


@dataclass
class ScaleSeries:
    k: int
    tensor: Tensor  # (batch, N, T / 2**(k-1), hidden)

    @property
    def length(self) -> int:
        return self.tensor.shape[2]


def scale_lengths(t_in: int, n_scales: int) -> list[int]:
    if n_scales < 1:
        raise ValueError(f"number of scales must be >= 1, got {n_scales}")
    if t_in % (2 ** (n_scales - 1)):
        raise ValueError(f"input length {t_in} is not divisible by 2**{n_scales - 1}")
    return [t_in // 2**k for k in range(n_scales)]


class Decomposition(Module):
    def __init__(self, rng: np.random.Generator, in_channels: int, hidden: int, n_scales: int):
        if n_scales < 1:
            raise ValueError(f"number of scales must be >= 1, got {n_scales}")
        self.n_scales = n_scales
        self.hidden = hidden
        self.kernels = []
        self.biases = []
        for k in range(n_scales):
            cin = in_channels if k == 0 else hidden
            fan_in = KERNEL_SIZE * cin
            self.kernels.append(uniform(rng, (KERNEL_SIZE, cin, hidden), fan_in, name=f"decomp.W{k + 1}"))
            self.biases.append(uniform(rng, (hidden,), fan_in, name=f"decomp.b{k + 1}"))

    def __call__(self, x: Tensor) -> list[ScaleSeries]:
        """``x`` is (batch, N, T, C_in); returns one :class:`ScaleSeries` per scale."""
        scale_lengths(x.shape[2], self.n_scales)
        out = []
        h = x
        for k in range(self.n_scales):
            h = T.relu(T.conv1d(h, self.kernels[k], self.biases[k], axis=2))
            if k > 0:
                h = T.avgpool(h, axis=2, window=2)
            out.append(ScaleSeries(k + 1, h))
        return out

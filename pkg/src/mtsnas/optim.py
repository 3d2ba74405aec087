"""Gradient-descent updates over lists of leaf tensors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from mtsnas.tensor import Tensor


class MissingGradError(RuntimeError):
    pass


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = float(lr)

    def zero_grad(self) -> None:
        """Reset every gradient to zeros; a parameter the next loss does not
        reach then keeps a zero gradient and is left unchanged."""
        for p in self.params:
            p.zero_grad()

    def _grads(self) -> list[np.ndarray]:
        grads = []
        for p in self.params:
            if p.grad is None:
                raise MissingGradError(f"no gradient on parameter {p.name or p.shape}")
            grads.append(p.grad)
        return grads

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad**2).sum()) for p in self.params if p.grad is not None)))

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    """Plain update ``p <- p - lr * grad``."""

    def step(self) -> None:
        for p, g in zip(self.params, self._grads()):
            p.data -= self.lr * g


class Adam(Optimizer):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, params, lr: float) -> Optimizer:
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r} (expected 'sgd' or 'adam')")

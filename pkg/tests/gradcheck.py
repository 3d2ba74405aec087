"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from mtsnas.tensor import Tensor

STEP = 1e-5
# gradients smaller than this are compared absolutely; central differences
# carry roughly 1e-11 * |loss| of rounding noise
FLOOR = 1e-5


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def check_gradients(
    loss_fn, params: list[Tensor], rng: np.random.Generator, n_points: int = 10, step: float = STEP, per_param=False
):
    """Compare backprop gradients with central differences at ``n_points``
    random coordinates spread over ``params`` (``n_points`` for each
    parameter when ``per_param``).

    ``loss_fn()`` must rebuild the scalar loss from the current parameter
    values. Returns the worst relative error and the list of
    (param index, flat index, analytic, numeric) samples.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    sizes = np.array([p.size for p in params])
    samples = []
    worst = 0.0
    if per_param:
        picks = [i for i in range(len(params)) for _ in range(n_points)]
    else:
        picks = [int(rng.choice(len(params), p=sizes / sizes.sum())) for _ in range(n_points)]
    for which in picks:
        p = params[which]
        flat = int(rng.integers(p.size))
        idx = np.unravel_index(flat, p.shape)
        orig = p.data[idx]
        p.data[idx] = orig + step
        up = loss_fn().item()
        p.data[idx] = orig - step
        down = loss_fn().item()
        p.data[idx] = orig
        numeric = (up - down) / (2 * step)
        a = float(analytic[which][idx])
        worst = max(worst, rel_error(a, numeric))
        samples.append((which, flat, a, numeric))
    return worst, samples


def projected_loss(rng: np.random.Generator, shape):
    """A random linear functional, so every output entry influences the loss."""
    from mtsnas import tensor as T

    weights = Tensor(rng.standard_normal(shape))
    return lambda out: T.sum(T.mul(out, weights))

from typing import Callable

import numpy as np

from msved.common.errors import ContractError

from .tensor import Tensor, backward, no_grad


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    *,
    max_coords: int | None = None,
    seed: int = 0,
    atol: float = 0.0,
) -> float:
    """Largest relative error between backward() and central differences.

    `f` must be scalar valued and deterministic in `x`: stochastic layers
    inside it have to draw from a noise stream that is rebuilt on every
    call. `x` is perturbed in place and restored. With `max_coords` only a
    random subset of coordinates is probed; coordinates where both gradients
    are smaller than `atol` count as agreeing.
    """
    if not h > 0.0:
        raise ContractError(f"finite-difference step must be positive, got {h}")

    x.grad = None
    x.requires_grad = True
    out = f(x)
    if out.ndim != 0:
        raise ContractError(f"finite_difference_check needs a scalar function, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.values) if x.grad is None else x.grad.copy()

    with no_grad():
        repeat = f(x).item()
    if repeat != out.item():
        raise ContractError(
            "f is not deterministic (two evaluations differ); freeze its noise before checking"
        )

    size = x.values.size
    coords = np.arange(size)
    if max_coords is not None and max_coords < size:
        coords = np.sort(np.random.default_rng(seed).choice(size, size=max_coords, replace=False))

    worst = 0.0
    for flat in coords:
        index = np.unravel_index(int(flat), x.shape)
        original = x.values[index]
        with no_grad():
            x.values[index] = original + h
            plus = f(x).item()
            x.values[index] = original - h
            minus = f(x).item()
        x.values[index] = original
        numeric = (plus - minus) / (2.0 * h)
        a = analytic[index]
        if abs(a) < atol and abs(numeric) < atol:
            continue
        error = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, error)
    return worst

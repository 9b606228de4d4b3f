from dataclasses import dataclass

import numpy as np
from loguru import logger

from msved.common.errors import NumericError
from msved.core.tensor import is_checked
from msved.model.params import ModelParams


@dataclass(frozen=True)
class ClipResult:
    norm: float
    scale: float


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> ClipResult:
    """Scale all gradients in place so their joint L2 norm is at most max_norm."""
    norm = global_grad_norm(grads)
    scale = 1.0
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return ClipResult(norm, scale)


def adadelta_update(
    values: np.ndarray, grad: np.ndarray, sq_grad: np.ndarray, sq_delta: np.ndarray, rho: float, eps: float
) -> np.ndarray:
    """One Adadelta update of a single tensor. The two accumulators are updated in place."""
    sq_grad *= rho
    sq_grad += (1.0 - rho) * grad * grad
    delta = -(np.sqrt(sq_delta + eps) / np.sqrt(sq_grad + eps)) * grad
    sq_delta *= rho
    sq_delta += (1.0 - rho) * delta * delta
    return values + delta


class Adadelta:
    """Adadelta with running averages of squared gradients and squared updates."""

    def __init__(self, params: ModelParams, rho: float = 0.95, eps: float = 1e-6, clip_norm: float | None = 5.0):
        self.rho = rho
        self.eps = eps
        self.clip_norm = clip_norm
        self.sq_grad = {name: np.zeros(t.shape) for name, t in params.items()}
        self.sq_delta = {name: np.zeros(t.shape) for name, t in params.items()}

    @classmethod
    def from_config(cls, params: ModelParams, config) -> "Adadelta":
        return cls(params, config.adadelta_rho, config.adadelta_eps, config.grad_clip_norm)

    def state(self) -> dict[str, dict[str, np.ndarray]]:
        return {"sq_grad": self.sq_grad, "sq_delta": self.sq_delta}

    def load_state(self, state: dict[str, dict[str, np.ndarray]]):
        self.sq_grad = {n: np.array(v, dtype=np.float64) for n, v in state["sq_grad"].items()}
        self.sq_delta = {n: np.array(v, dtype=np.float64) for n, v in state["sq_delta"].items()}

    def step(self, params: ModelParams) -> ClipResult | None:
        """Clip, then apply one update from the gradients held by `params`.

        Returns None when the step was skipped because a gradient was not
        finite (outside checked mode, where that raises instead).
        """
        grads = {
            name: np.zeros(t.shape) if t.grad is None else t.grad.copy() for name, t in params.items()
        }
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            message = f"non-finite gradient in {', '.join(bad)}"
            if is_checked():
                raise NumericError(message)
            logger.warning(f"{message}; skipping update")
            return None

        clip = clip_gradients(grads, self.clip_norm) if self.clip_norm else ClipResult(global_grad_norm(grads), 1.0)

        for name, t in params.items():
            t.values = adadelta_update(
                t.values, grads[name], self.sq_grad[name], self.sq_delta[name], self.rho, self.eps
            )
        if is_checked() and not params.all_finite():
            raise NumericError("a parameter left the finite range after the update")
        return clip

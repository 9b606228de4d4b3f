"""Reparameterized sampling, divergences and annealing schedules.

All randomness enters as explicit numpy arrays (or through a NoiseSource
built from a seeded generator), so every function here is a pure function
of its inputs.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from msved.common.const import UNIFORM_CLAMP
from msved.common.errors import ConfigurationError, ContractError, DimensionError, SchemaError

from . import tensor as T
from .tensor import Tensor


class NoiseSource:
    """The noise one objective evaluation consumes, drawn in call order.

    Two sources built from the same seed hand out identical draws, which is
    how tests freeze the noise of a stochastic objective.
    """

    def __init__(self, rng: "np.random.Generator | int | Sequence[int]"):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.rng = rng

    def normal(self, shape) -> np.ndarray:
        return self.rng.standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self.rng.random(shape)

    def gumbel(self, shape) -> np.ndarray:
        return sample_gumbel(self.uniform(shape))


@dataclass(frozen=True)
class GaussianPosterior:
    """Diagonal Gaussian q(z|x) with variance exp(log_var)."""

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise DimensionError("GaussianPosterior", self.mu.shape, self.log_var.shape)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass(frozen=True)
class RelaxedTagSample:
    """One relaxed one-hot vector per tag category, drawn at temperature tau."""

    samples: tuple[Tensor, ...]
    tau: float


@dataclass(frozen=True)
class AnnealState:
    step: int
    lam: float
    tau: float


def gaussian_reparam(post: GaussianPosterior, eps: np.ndarray) -> Tensor:
    """z = mu + exp(log_var / 2) * eps; eps is noise, not differentiated."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != post.mu.shape:
        raise ContractError(f"noise of shape {eps.shape} does not match posterior {post.mu.shape}")
    sigma = T.exp(T.mul_scalar(post.log_var, 0.5))
    return T.add(post.mu, T.mul(sigma, T.constant(eps)))


def kl_to_standard_normal(post: GaussianPosterior) -> Tensor:
    """KL(q || N(0, I)) = 1/2 sum_j (mu^2 + sigma^2 - 1 - log sigma^2).

    Sums over the last axis: a scalar for a single posterior, one value per
    row for a batch.
    """
    mu, log_var = post.mu, post.log_var
    terms = T.sub(T.add(T.mul(mu, mu), T.exp(log_var)), T.add_scalar(log_var, 1.0))
    return T.mul_scalar(T.sum(terms, axis=-1), 0.5)


def sample_gumbel(u) -> np.ndarray:
    """g = -log(-log(u)) for uniform draws u in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.isnan(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise ContractError("uniform draws for Gumbel noise must lie in [0, 1]")
    u = np.clip(u, UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    if not (np.all(u > 0.0) and np.all(u < 1.0)):
        raise ContractError("uniform draws fell outside (0, 1) after clamping")
    return -np.log(-np.log(u))


def gumbel_max_sample(log_probs, noise=None, rng: np.random.Generator | None = None) -> int:
    """argmax_i (g_i + log pi_i): an exact draw from Categorical(pi).

    Ties resolve to the lowest index.
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 1 or log_probs.size == 0:
        raise ContractError(f"gumbel_max_sample needs a nonempty vector, got shape {log_probs.shape}")
    if np.all(np.isneginf(log_probs)) or np.any(np.isnan(log_probs)) or np.any(np.isposinf(log_probs)):
        raise ContractError("log-probabilities must be finite or -inf, and not all -inf")
    if noise is None:
        if rng is None:
            raise ContractError("gumbel_max_sample needs either noise or a random generator")
        noise = sample_gumbel(rng.random(log_probs.shape))
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != log_probs.shape:
        raise ContractError(f"noise of shape {noise.shape} does not match {log_probs.shape}")
    return int(np.argmax(log_probs + noise))


def gumbel_softmax(log_probs: Tensor, tau: float, noise) -> Tensor:
    """softmax((log pi + g) / tau), differentiable in log pi."""
    if not tau > 0.0:
        raise ContractError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != log_probs.shape:
        raise ContractError(f"noise of shape {noise.shape} does not match {log_probs.shape}")
    return T.softmax(T.add(log_probs, T.constant(noise)), tau)


def relaxed_tag_sample(log_probs: Sequence[Tensor], tau: float, noise: NoiseSource) -> RelaxedTagSample:
    """One Gumbel-Softmax draw per category, consuming Gumbel noise in category order."""
    return RelaxedTagSample(tuple(gumbel_softmax(lq, tau, noise.gumbel(lq.shape)) for lq in log_probs), tau)


def uniform_tag_log_prior(tag_sizes: Sequence[int]) -> float:
    """log p(y) under independent uniform categoricals: -sum_k log N_k."""
    if len(tag_sizes) == 0:
        raise SchemaError("tag schema has no categories")
    if any(n <= 0 for n in tag_sizes):
        raise SchemaError(f"every tag category needs at least one label, got sizes {list(tag_sizes)}")
    return -float(np.sum(np.log(np.asarray(tag_sizes, dtype=np.float64))))


def anneal_state_at(step: int, config) -> AnnealState:
    """KL weight and Gumbel temperature after `step` optimizer updates."""
    if step < 0:
        raise ContractError(f"step must be nonnegative, got {step}")
    if not config.schedules_resolved:
        raise ConfigurationError("annealing schedules are unresolved; call resolve_schedules first")
    if config.ramp_steps == 0:
        lam = config.lambda_m
    else:
        lam = config.lambda_m * min(1.0, step / config.ramp_steps)
    tau = max(config.tau_min, config.tau_init * math.exp(-config.tau_rate * step))
    return AnnealState(step=step, lam=lam, tau=tau)


def anneal_step(state: AnnealState, config) -> AnnealState:
    return anneal_state_at(state.step + 1, config)

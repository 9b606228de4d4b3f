"""Variational bounds, the classification loss and their mode-dependent combination.

Bounds are objectives to maximize. Every term is a per-word quantity averaged
over the batch; characters within a word are summed. Noise is consumed from
the NoiseSource in a fixed order: Gaussian noise for z, then Gumbel noise per
tag category, then one dropout draw per decoded position.
"""

from dataclasses import dataclass, field

import numpy as np

from msved.common.config import TrainingConfig, TrainingMode
from msved.common.errors import ConfigurationError
from msved.core import tensor as T
from msved.core.stochastic import (
    AnnealState,
    NoiseSource,
    gaussian_reparam,
    kl_to_standard_normal,
    relaxed_tag_sample,
    uniform_tag_log_prior,
)
from msved.core.tensor import Tensor
from msved.data.batching import CharBatch, ExampleBatch

from . import network as N
from .params import ModelParams


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: Tensor
    kl_term: Tensor
    prior_term: Tensor
    entropy_term: Tensor | None = None
    lambda_used: float = 0.0
    alpha_used: float = 1.0
    attention: tuple[np.ndarray, ...] = field(default=(), repr=False, compare=False)

    @property
    def total(self) -> Tensor:
        """reconstruction - lambda * KL + log p(y) [+ entropy]."""
        value = T.add(
            T.sub(self.reconstruction, T.mul_scalar(self.kl_term, self.lambda_used)), self.prior_term
        )
        if self.entropy_term is not None:
            value = T.add(value, self.entropy_term)
        return value

    def as_dict(self) -> dict[str, float]:
        return {
            "reconstruction": self.reconstruction.item(),
            "kl": self.kl_term.item(),
            "prior": self.prior_term.item(),
            "entropy": 0.0 if self.entropy_term is None else self.entropy_term.item(),
            "total": self.total.item(),
        }


def _sample_z(params: ModelParams, encoded: N.EncoderOutput, noise: NoiseSource):
    posterior = N.infer_z(params, encoded.u)
    z = gaussian_reparam(posterior, noise.normal(posterior.mu.shape))
    return posterior, z


def labeled_bound(
    params: ModelParams,
    batch: ExampleBatch,
    anneal: AnnealState,
    noise: NoiseSource,
    beta: float = 0.0,
) -> LossBreakdown:
    """Lower bound on log p(target, target labels | source).

    z is drawn from q(z | source); the target is decoded teacher-forced and
    conditioned on the hard embeddings of the observed labels.
    """
    encoded = N.encode(params, batch.source)
    posterior, z = _sample_z(params, encoded, noise)
    memory = N.prepare_memory(params, N.embed_tags(params, batch.label_ids))
    recon = N.reconstruct(params, batch.target, z, memory, noise, beta)
    prior = uniform_tag_log_prior(params.dims.tag_sizes)
    return LossBreakdown(
        reconstruction=T.mean(recon.log_likelihood),
        kl_term=T.mean(kl_to_standard_normal(posterior)),
        prior_term=T.constant(np.asarray(prior)),
        lambda_used=anneal.lam,
        attention=recon.attention,
    )


def unlabeled_transduction_bound(
    params: ModelParams,
    source: CharBatch,
    target: CharBatch,
    anneal: AnnealState,
    noise: NoiseSource,
    beta: float = 0.0,
) -> LossBreakdown:
    """Lower bound on log p(target | source) with the target labels latent.

    z comes from q(z | source) and a relaxed label sample per category from
    q(y | target) via Gumbel-Softmax at the current temperature. The prior and
    entropy terms are inner products of the relaxed sample with log p(y) and
    log q(y | target).
    """
    encoded_source = N.encode(params, source)
    posterior, z = _sample_z(params, encoded_source, noise)
    encoded_target = encoded_source if target is source else N.encode(params, target)
    tag_posterior = N.classify_tags(params, encoded_target.u)

    relaxed = relaxed_tag_sample(tag_posterior.log_probs, anneal.tau, noise)
    prior_terms = []
    entropy_terms = []
    for y, log_q, n_k in zip(relaxed.samples, tag_posterior.log_probs, params.dims.tag_sizes):
        log_prior = T.constant(np.full(y.shape, -np.log(n_k)))
        prior_terms.append(T.sum(T.mul(y, log_prior), axis=-1))
        entropy_terms.append(T.neg(T.sum(T.mul(y, log_q), axis=-1)))

    memory = N.prepare_memory(params, N.embed_relaxed_tags(params, relaxed))
    recon = N.reconstruct(params, target, z, memory, noise, beta)
    return LossBreakdown(
        reconstruction=T.mean(recon.log_likelihood),
        kl_term=T.mean(kl_to_standard_normal(posterior)),
        prior_term=T.mean(_total(prior_terms)),
        entropy_term=T.mean(_total(entropy_terms)),
        lambda_used=anneal.lam,
        attention=recon.attention,
    )


def _total(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for term in terms[1:]:
        out = T.add(out, term)
    return out


def autoencoding_bound(
    params: ModelParams, word: CharBatch, anneal: AnnealState, noise: NoiseSource, beta: float = 0.0
) -> LossBreakdown:
    """U(x): the unlabeled bound with the word as both source and target."""
    return unlabeled_transduction_bound(params, word, word, anneal, noise, beta)


def labeled_autoencoding_bound(
    params: ModelParams,
    word: CharBatch,
    label_ids: np.ndarray,
    anneal: AnnealState,
    noise: NoiseSource,
    beta: float = 0.0,
) -> LossBreakdown:
    """Reconstruct a word from its own z under its observed labels."""
    return labeled_bound(params, ExampleBatch(word, word, label_ids), anneal, noise, beta)


def classification_loss(
    params: ModelParams, word: CharBatch, label_ids: np.ndarray, encoded: N.EncoderOutput | None = None
) -> Tensor:
    """D: sum over categories of -log q(y_k = observed | word), averaged over the batch."""
    encoded = encoded or N.encode(params, word)
    tag_posterior = N.classify_tags(params, encoded.u)
    label_ids = np.asarray(label_ids, dtype=np.int64)
    ones = np.ones(word.size)
    per_word = _total([
        T.masked_cross_entropy(logits, label_ids[:, k], ones)
        for k, logits in enumerate(tag_posterior.logits)
    ])
    return T.mean(per_word)


@dataclass(frozen=True)
class ObjectiveValue:
    """A scalar to maximize and the pieces it was assembled from."""

    value: Tensor
    terms: dict[str, LossBreakdown]
    classification: Tensor | None = None
    alpha: float = 0.0

    def metrics(self) -> dict[str, float]:
        out = {"objective": self.value.item()}
        for name, breakdown in self.terms.items():
            for key, val in breakdown.as_dict().items():
                out[f"{name}.{key}"] = val
        if self.classification is not None:
            out["classification"] = self.classification.item()
        return out

    def __add__(self, other: "ObjectiveValue") -> "ObjectiveValue":
        classification = self.classification if other.classification is None else other.classification
        return ObjectiveValue(
            T.add(self.value, other.value),
            {**self.terms, **other.terms},
            classification,
            max(self.alpha, other.alpha),
        )


def labeled_objective(
    params: ModelParams,
    batch: ExampleBatch,
    anneal: AnnealState,
    noise: NoiseSource,
    config: TrainingConfig,
) -> ObjectiveValue:
    """The labeled half: L_l, the reverse direction in BD-Sup and Semi-sup, and -w*D in Semi-sup."""
    terms = {"labeled": labeled_bound(params, batch, anneal, noise, config.beta)}
    if config.mode in (TrainingMode.BD_SUP, TrainingMode.SEMI_SUP):
        # reconstruct the source from the target; source labels are latent
        terms["reverse"] = unlabeled_transduction_bound(
            params, batch.target, batch.source, anneal, noise, config.beta
        )
    if config.labeled_autoencoder:
        terms["labeled_autoencode"] = labeled_autoencoding_bound(
            params, batch.target, batch.label_ids, anneal, noise, config.beta
        )
    value = _total([b.total for b in terms.values()])

    classification = None
    if config.mode is TrainingMode.SEMI_SUP:
        classification = classification_loss(params, batch.target, batch.label_ids)
        value = T.sub(value, T.mul_scalar(classification, config.classification_weight))
    return ObjectiveValue(value, terms, classification)


def unlabeled_objective(
    params: ModelParams,
    words: CharBatch | None,
    anneal: AnnealState,
    noise: NoiseSource,
    config: TrainingConfig,
) -> ObjectiveValue:
    """alpha * U(x) over a batch of unlabeled words (Semi-sup only)."""
    if config.mode is not TrainingMode.SEMI_SUP:
        raise ConfigurationError(f"unlabeled batches are only used in semi-sup mode, not {config.mode.value}")
    if words is None or words.size == 0:
        raise ConfigurationError("semi-sup mode needs a nonempty unlabeled batch")
    breakdown = autoencoding_bound(params, words, anneal, noise, config.beta)
    breakdown = LossBreakdown(
        breakdown.reconstruction,
        breakdown.kl_term,
        breakdown.prior_term,
        breakdown.entropy_term,
        breakdown.lambda_used,
        config.alpha,
        breakdown.attention,
    )
    return ObjectiveValue(T.mul_scalar(breakdown.total, config.alpha), {"autoencode": breakdown}, alpha=config.alpha)


def combined_objective(
    params: ModelParams,
    labeled: ExampleBatch,
    unlabeled: CharBatch | None,
    anneal: AnnealState,
    noise: NoiseSource,
    config: TrainingConfig,
) -> ObjectiveValue:
    """SD-Sup: L_l. BD-Sup: L_l + L_u(source | target). Semi-sup: both plus alpha*U - w*D."""
    if config.mode is TrainingMode.SEMI_SUP and (unlabeled is None or unlabeled.size == 0):
        raise ConfigurationError("semi-sup mode needs a nonempty unlabeled batch")
    value = labeled_objective(params, labeled, anneal, noise, config)
    if config.mode is TrainingMode.SEMI_SUP:
        value = value + unlabeled_objective(params, unlabeled, anneal, noise, config)
    return value

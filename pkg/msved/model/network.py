"""Encoder, inference networks, tag attention and decoder.

All functions take a batch dimension first. Words of different lengths share
a batch; positions past a word's end leave the recurrent state unchanged.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from msved.common.errors import ContractError, DimensionError
from msved.core import tensor as T
from msved.core.stochastic import GaussianPosterior, NoiseSource, RelaxedTagSample
from msved.core.tensor import Tensor
from msved.data.batching import CharBatch

from .params import ModelParams


@dataclass(frozen=True)
class EncoderOutput:
    u: Tensor
    forward_states: tuple[Tensor, ...]
    backward_states: tuple[Tensor, ...]


@dataclass(frozen=True)
class TagPosterior:
    """q(y_k | x) for every tag category, as logits and log-probabilities (batch, N_k)."""

    logits: tuple[Tensor, ...]
    log_probs: tuple[Tensor, ...]

    def probs(self) -> list[np.ndarray]:
        return [np.exp(lp.values) for lp in self.log_probs]


@dataclass(frozen=True)
class TagMemory:
    """Embedded target labels and their attention keys, computed once per sequence."""

    items: Tensor
    keys: tuple[Tensor, ...]

    @property
    def num_tags(self) -> int:
        return self.items.shape[1]


def gru_step(params: ModelParams, prefix: str, x: Tensor, h: Tensor) -> Tensor:
    """One GRU update: reset r, update u, candidate c; h' = h + u * (c - h)."""
    H = h.shape[1]
    xp = T.affine(x, params[f"{prefix}.W_x"], params[f"{prefix}.b"])
    hp = T.matmul(h, params[f"{prefix}.W_h"])
    r = T.sigmoid(T.add(T.columns(xp, 0, H), T.columns(hp, 0, H)))
    u = T.sigmoid(T.add(T.columns(xp, H, 2 * H), T.columns(hp, H, 2 * H)))
    c = T.tanh(T.add(T.columns(xp, 2 * H, 3 * H), T.mul(r, T.columns(hp, 2 * H, 3 * H))))
    return T.add(h, T.mul(u, T.sub(c, h)))


def _carry(new: Tensor, old: Tensor, keep: np.ndarray) -> Tensor:
    """new where keep is 1, old elsewhere (row-wise)."""
    if np.all(keep == 1.0):
        return new
    mask = np.repeat(keep[:, None], new.shape[1], axis=1)
    return T.add(T.mul(new, T.constant(mask)), T.mul(old, T.constant(1.0 - mask)))


def _run_gru(params: ModelParams, prefix: str, ids: np.ndarray, mask: np.ndarray) -> list[Tensor]:
    batch, length = ids.shape
    h = T.constant(np.zeros((batch, params.dims.hidden_dim)))
    states = []
    for t in range(length):
        x = T.embedding(params["char_emb"], ids[:, t])
        h = _carry(gru_step(params, prefix, x, h), h, mask[:, t])
        states.append(h)
    return states


def encode(params: ModelParams, batch: CharBatch) -> EncoderOutput:
    """Bidirectional GRU over the characters; u = [forward final ; backward final]."""
    if batch.max_len == 0 or batch.lengths.min() == 0:
        raise ContractError("cannot encode an empty word")
    mask = batch.mask
    forward = _run_gru(params, "enc_fwd", batch.ids, mask)
    backward = _run_gru(params, "enc_bwd", batch.reversed_ids(), mask)
    u = T.concat([forward[-1], backward[-1]], axis=-1)
    return EncoderOutput(u, tuple(forward), tuple(backward))


def encode_word(params: ModelParams, ids: Sequence[int]) -> EncoderOutput:
    return encode(params, CharBatch.from_sequences([list(ids)]))


def _mlp(params: ModelParams, prefix: str, x: Tensor) -> Tensor:
    hidden = T.tanh(T.affine(x, params[f"{prefix}.W1"], params[f"{prefix}.b1"]))
    return T.affine(hidden, params[f"{prefix}.W2"], params[f"{prefix}.b2"])


def infer_z(params: ModelParams, u: Tensor) -> GaussianPosterior:
    if u.ndim != 2 or u.shape[1] != params.dims.encoding_dim:
        raise DimensionError("infer_z", u.shape, (None, params.dims.encoding_dim))
    return GaussianPosterior(_mlp(params, "z_mu", u), _mlp(params, "z_logvar", u))


def classify_tags(params: ModelParams, u: Tensor) -> TagPosterior:
    logits = tuple(_mlp(params, f"cls.{k}", u) for k in range(params.dims.num_tags))
    return TagPosterior(logits, tuple(T.log_softmax(l) for l in logits))


def embed_tags(params: ModelParams, label_ids: np.ndarray) -> list[Tensor]:
    """Hard one-hot conditioning: the embedding of each observed label, (batch, tag_dim) per tag."""
    label_ids = np.asarray(label_ids, dtype=np.int64)
    if label_ids.ndim != 2 or label_ids.shape[1] != params.dims.num_tags:
        raise DimensionError("embed_tags", label_ids.shape, (None, params.dims.num_tags))
    return [T.embedding(params.tag_embedding(k), label_ids[:, k]) for k in range(params.dims.num_tags)]


def embed_relaxed_tags(params: ModelParams, relaxed: RelaxedTagSample) -> list[Tensor]:
    """Relaxed conditioning: each sample mixes its category's label embeddings."""
    samples = relaxed.samples
    if len(samples) != params.dims.num_tags:
        raise ContractError(f"expected {params.dims.num_tags} tag samples, got {len(samples)}")
    return [T.matmul(y, params.tag_embedding(k)) for k, y in enumerate(samples)]


def prepare_memory(params: ModelParams, tag_vectors: Sequence[Tensor]) -> TagMemory:
    keys = tuple(T.matmul(v, params["att.W_t"]) for v in tag_vectors)
    return TagMemory(T.stack(list(tag_vectors), axis=1), keys)


def tag_attention(params: ModelParams, state: Tensor, memory: TagMemory) -> tuple[Tensor, Tensor]:
    """Additive attention over the tag embeddings.

    e_k = v^T tanh(W_s state + W_t tag_k); returns the context vector
    sum_k softmax(e)_k tag_k and the weights (batch, K).
    """
    query = T.matmul(state, params["att.W_s"])
    scores = T.concat(
        [T.matmul(T.tanh(T.add(query, key)), params["att.v"]) for key in memory.keys], axis=-1
    )
    weights = T.softmax(scores)
    return T.weighted_combine(weights, memory.items), weights


def initial_decoder_state(params: ModelParams, z: Tensor) -> Tensor:
    return T.tanh(T.affine(z, params["dec_init.W"], params["dec_init.b"]))


def decode_step(
    params: ModelParams, prev_embedding: Tensor, state: Tensor, z: Tensor, tag_context: Tensor
) -> tuple[Tensor, Tensor]:
    """Returns (logits over the vocabulary, new decoder state)."""
    x = T.concat([prev_embedding, z, tag_context], axis=-1)
    new_state = gru_step(params, "dec", x, state)
    return T.affine(new_state, params["out.W"], params["out.b"]), new_state


def decoder_input_dropout(embedding: Tensor, beta: float, noise) -> Tensor:
    """Zero whole input rows whose uniform draw falls below beta. No rescaling."""
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1], got {beta}")
    if beta == 0.0:
        return embedding
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (embedding.shape[0],):
        raise DimensionError("decoder_input_dropout", embedding.shape, noise.shape)
    keep = (noise >= beta).astype(np.float64)
    return T.mul(embedding, T.constant(np.repeat(keep[:, None], embedding.shape[1], axis=1)))


@dataclass(frozen=True)
class Reconstruction:
    log_likelihood: Tensor
    attention: tuple[np.ndarray, ...]


def reconstruct(
    params: ModelParams,
    target: CharBatch,
    z: Tensor,
    memory: TagMemory,
    noise: NoiseSource | None = None,
    beta: float = 0.0,
) -> Reconstruction:
    """Teacher-forced log p(target | z, tags), one value per word, summed over characters and EOS.

    BOS is always fed; every later input character is dropped with
    probability beta (one uniform draw per word and position).
    """
    if beta > 0.0 and noise is None:
        raise ContractError("decoder input dropout needs a noise source")
    inputs, targets, mask = target.decoder_inputs(), target.decoder_targets(), target.decoder_mask()
    state = initial_decoder_state(params, z)
    total = None
    attention = []
    for t in range(inputs.shape[1]):
        embedded = T.embedding(params["char_emb"], inputs[:, t])
        if t > 0 and beta > 0.0:
            embedded = decoder_input_dropout(embedded, beta, noise.uniform((target.size,)))
        context, weights = tag_attention(params, state, memory)
        attention.append(weights.values)
        logits, state = decode_step(params, embedded, state, z, context)
        step_nll = T.masked_cross_entropy(logits, targets[:, t], mask[:, t])
        total = step_nll if total is None else T.add(total, step_nll)
    return Reconstruction(T.neg(total), tuple(attention))

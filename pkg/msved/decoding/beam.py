"""Beam search over characters.

Decoding conditions on the posterior mean of z for the source word and on
the hard embeddings of the requested labels. Scores are raw summed
log-probabilities; finished hypotheses stay in the pool and compete with the
unfinished ones.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from msved.common.const import BOS_ID, EOS_ID, PAD_ID, UNK_ID
from msved.common.errors import ContractError
from msved.core import tensor as T
from msved.data.batching import CharBatch
from msved.model import network as N
from msved.model.params import ModelParams


@dataclass(frozen=True)
class Hypothesis:
    chars: tuple[int, ...]
    log_prob: float
    state: np.ndarray | None = None
    finished: bool = False
    attention: tuple[np.ndarray, ...] = ()
    forced: bool = False  # EOS taken at the length cap while another symbol scored higher

    def sort_key(self):
        # character ids follow code-point order, so this breaks ties lexicographically;
        # a finished word sorts as if followed by EOS
        return (-self.log_prob, self.chars + ((EOS_ID,) if self.finished else ()))


class StepScorer(Protocol):
    def initial_state(self) -> np.ndarray | None: ...

    def score(self, hypotheses: Sequence[Hypothesis]) -> tuple[np.ndarray, list, list]:
        """Log-probabilities (n, V) of the next symbol, new states and attention rows."""
        ...


class ModelScorer:
    """Scores next characters with a trained model for one (source, labels) pair."""

    def __init__(self, params: ModelParams, source_ids: Sequence[int], label_ids: Sequence[int]):
        self.params = params
        self.label_ids = np.asarray(label_ids, dtype=np.int64)
        with T.no_grad():
            encoded = N.encode(params, CharBatch.from_sequences([list(source_ids)]))
            self.z = N.infer_z(params, encoded.u).mu.values
            self._initial = N.initial_decoder_state(params, T.constant(self.z)).values[0]

    def initial_state(self) -> np.ndarray:
        return self._initial

    def score(self, hypotheses: Sequence[Hypothesis]):
        n = len(hypotheses)
        prev = np.array([h.chars[-1] if h.chars else BOS_ID for h in hypotheses], dtype=np.int64)
        with T.no_grad():
            state = T.constant(np.stack([h.state for h in hypotheses]))
            memory = N.prepare_memory(
                self.params, N.embed_tags(self.params, np.repeat(self.label_ids[None, :], n, axis=0))
            )
            context, weights = N.tag_attention(self.params, state, memory)
            embedded = T.embedding(self.params["char_emb"], prev)
            z = T.constant(np.repeat(self.z, n, axis=0))
            logits, new_state = N.decode_step(self.params, embedded, state, z, context)
        return mask_log_softmax(logits.values), list(new_state.values), list(weights.values)


def mask_log_softmax(logits: np.ndarray) -> np.ndarray:
    """Log-softmax with PAD, BOS and UNK removed from the support."""
    logits = logits.copy()
    logits[:, [PAD_ID, BOS_ID, UNK_ID]] = -np.inf
    shifted = logits - logits.max(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def beam_step(
    frontier: Sequence[Hypothesis], scorer: StepScorer, beam_size: int, final: bool = False
) -> list[Hypothesis]:
    """Expand every unfinished hypothesis and keep the best `beam_size` of the pool.

    On the final step only end-of-word extensions are made. Unfinished
    hypotheses survive it only when nothing in the pool has finished.
    """
    if not frontier:
        raise ContractError("beam_step needs a nonempty frontier")
    if beam_size < 1:
        raise ContractError(f"beam size must be positive, got {beam_size}")

    pool = [h for h in frontier if h.finished]
    active = [h for h in frontier if not h.finished]
    if active:
        log_probs, states, attention = scorer.score(active)
        for h, row, state, weights in zip(active, log_probs, states, attention):
            trail = h.attention if weights is None else h.attention + (weights,)
            candidates = [EOS_ID] if final else np.flatnonzero(np.isfinite(row))
            for c in candidates:
                c = int(c)
                if not np.isfinite(row[c]):
                    continue
                if c == EOS_ID:
                    forced = final and row[c] < row.max()
                    pool.append(Hypothesis(h.chars, h.log_prob + row[c], state, True, trail, forced))
                else:
                    pool.append(Hypothesis(h.chars + (c,), h.log_prob + row[c], state, False, trail))
    if final and not pool:
        pool = active
    pool.sort(key=Hypothesis.sort_key)
    return pool[:beam_size]


@dataclass(frozen=True)
class DecodeResult:
    chars: tuple[int, ...]
    log_prob: float
    truncated: bool
    attention: tuple[np.ndarray, ...] = ()


def beam_search(scorer: StepScorer, beam_size: int, max_len: int) -> DecodeResult:
    """Search until the best hypothesis is finished or max_len characters were emitted.

    A truncated result either has no end-of-word at all or had it forced at
    the cap; both have exactly max_len characters.
    """
    if max_len < 0:
        raise ContractError(f"max_len must be nonnegative, got {max_len}")
    frontier = [Hypothesis((), 0.0, scorer.initial_state())]
    for step in range(max_len + 1):
        frontier = beam_step(frontier, scorer, beam_size, final=step == max_len)
        # extensions only lower a score, so a finished leader is final
        if frontier[0].finished:
            break
    finished = [h for h in frontier if h.finished]
    best = finished[0] if finished else frontier[0]
    return DecodeResult(best.chars, float(best.log_prob), not finished or best.forced, best.attention)


def decode_cap(source_len: int, factor: float, slack: int) -> int:
    return int(factor * source_len) + slack


def reinflect(
    params: ModelParams,
    source_ids: Sequence[int],
    label_ids: Sequence[int],
    beam_size: int = 8,
    max_len: int | None = None,
    *,
    max_decode_factor: float = 2.0,
    decode_slack: int = 5,
) -> DecodeResult:
    """argmax_t p(t | source, labels), approximately, with z fixed at its posterior mean."""
    if max_len is None:
        max_len = decode_cap(len(source_ids), max_decode_factor, decode_slack)
    return beam_search(ModelScorer(params, source_ids, label_ids), beam_size, max_len)


def sequence_log_prob(
    params: ModelParams, source_ids: Sequence[int], label_ids: Sequence[int], target_ids: Sequence[int]
) -> float:
    """log p(target + EOS | source, labels) under the decoding distribution."""
    scorer = ModelScorer(params, source_ids, label_ids)
    h = Hypothesis((), 0.0, scorer.initial_state())
    total = 0.0
    for c in list(target_ids) + [EOS_ID]:
        log_probs, states, _ = scorer.score([h])
        total += float(log_probs[0, c])
        h = Hypothesis(h.chars + (c,), total, states[0])
    return total


def reinflect_all(
    params: ModelParams,
    requests: Sequence[tuple[Sequence[int], Sequence[int]]],
    beam_size: int = 8,
    *,
    max_decode_factor: float = 2.0,
    decode_slack: int = 5,
    threads: int = 1,
) -> list[DecodeResult]:
    """Decode (source ids, label ids) pairs; results keep the input order."""

    def run(request):
        source_ids, label_ids = request
        return reinflect(
            params, source_ids, label_ids, beam_size,
            max_decode_factor=max_decode_factor, decode_slack=decode_slack,
        )

    if threads <= 1 or len(requests) <= 1:
        return [run(r) for r in requests]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, requests))

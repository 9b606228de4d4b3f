from dataclasses import dataclass
from typing import Sequence

import numpy as np

from msved.common.const import BOS_ID, EOS_ID, PAD_ID
from msved.common.errors import ContractError

from .corpus import LabeledExample, TagSchema, UnlabeledWord, Vocab


@dataclass(frozen=True)
class CharBatch:
    """Words as a (batch, max_len) id matrix, padded on the right."""

    ids: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_sequences(cls, sequences: Sequence[Sequence[int]]) -> "CharBatch":
        if not sequences:
            raise ContractError("a batch needs at least one word")
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        if lengths.min() == 0:
            raise ContractError("words must contain at least one character")
        ids = np.full((len(sequences), int(lengths.max())), PAD_ID, dtype=np.int64)
        for row, seq in enumerate(sequences):
            ids[row, : len(seq)] = seq
        return cls(ids, lengths)

    @classmethod
    def from_words(cls, words: Sequence[str], vocab: Vocab) -> "CharBatch":
        return cls.from_sequences([vocab.encode(w) for w in words])

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    @property
    def max_len(self) -> int:
        return self.ids.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return (np.arange(self.max_len)[None, :] < self.lengths[:, None]).astype(np.float64)

    def reversed_ids(self) -> np.ndarray:
        """Each word reversed in place, still left-aligned."""
        out = np.full_like(self.ids, PAD_ID)
        for row, n in enumerate(self.lengths):
            out[row, :n] = self.ids[row, :n][::-1]
        return out

    def decoder_inputs(self) -> np.ndarray:
        """BOS followed by the characters; one column longer than ids."""
        out = np.full((self.size, self.max_len + 1), PAD_ID, dtype=np.int64)
        out[:, 0] = BOS_ID
        out[:, 1:] = self.ids
        return out

    def decoder_targets(self) -> np.ndarray:
        """The characters followed by EOS."""
        out = np.full((self.size, self.max_len + 1), PAD_ID, dtype=np.int64)
        out[:, : self.max_len] = self.ids
        out[np.arange(self.size), self.lengths] = EOS_ID
        return out

    def decoder_mask(self) -> np.ndarray:
        return (np.arange(self.max_len + 1)[None, :] <= self.lengths[:, None]).astype(np.float64)

    def select(self, rows) -> "CharBatch":
        rows = np.asarray(rows, dtype=np.int64)
        lengths = self.lengths[rows]
        return CharBatch(self.ids[rows, : int(lengths.max())], lengths)


@dataclass(frozen=True)
class ExampleBatch:
    source: CharBatch
    target: CharBatch
    label_ids: np.ndarray

    @property
    def size(self) -> int:
        return self.source.size


def labeled_batch(examples: Sequence[LabeledExample], vocab: Vocab, schema: TagSchema) -> ExampleBatch:
    return ExampleBatch(
        source=CharBatch.from_words([ex.source for ex in examples], vocab),
        target=CharBatch.from_words([ex.target for ex in examples], vocab),
        label_ids=np.stack([schema.label_ids(ex.target_labels) for ex in examples]),
    )


def unlabeled_batch(words: Sequence[UnlabeledWord], vocab: Vocab) -> CharBatch:
    return CharBatch.from_words([w.form for w in words], vocab)


def batch_indices(count: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Split range(count) into batches, shuffled first when rng is given."""
    order = np.arange(count) if rng is None else rng.permutation(count)
    return [order[i : i + batch_size] for i in range(0, count, batch_size)]
